"""Reconstruction accuracy, single-piece reconstruction, and prior sampling."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .data.batching import collate
from .errors import CheckpointError, ContractError
from .octuple.tokens import TokenSequence
from .octuple.vocab import ATTRIBUTES, NUM_ATTRIBUTES, OctupleVocabulary
from .vae import MultiViewMidiVAE, breakdown, view_to_sequence

REPORT_VERSION = 1
# the attribute columns of the published accuracy table
TABLE_ATTRIBUTES = ("duration", "pitch", "position", "instrument", "bar", "tempo")
EXTRA_ATTRIBUTES = ("velocity", "timesig")


@dataclass
class EvalReport:
    overall: float
    attributes: dict  # duration, pitch, position, instrument, bar, tempo
    extra_attributes: dict  # velocity, timesig
    positions: int
    predictions: int
    split: str = ""
    config_fingerprint: str = ""
    views: str = "multi"

    def to_dict(self):
        return {"version": REPORT_VERSION, **asdict(self)}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def accuracy_counts(log_probs, targets, mask, real_sizes) -> dict:
    """Per-attribute correct / total counts over unmasked positions.

    ``log_probs`` is a list of (…, V_m) scores; the prediction is the argmax
    over real classes (PAD and end-of-group excluded).
    """
    mask = mask.bool()
    correct = np.zeros(NUM_ATTRIBUTES, dtype=np.int64)
    total = np.zeros(NUM_ATTRIBUTES, dtype=np.int64)
    for a, (lp, size) in enumerate(zip(log_probs, real_sizes)):
        pred = lp[..., :size].argmax(-1)
        hit = (pred == targets[..., a]) & mask
        correct[a] = int(hit.sum())
        total[a] = int(mask.sum())
    return {"correct": correct, "total": total}


def report_from_counts(counts, split="", fingerprint="", views="multi") -> EvalReport:
    correct, total = counts["correct"], counts["total"]
    acc = {name: float(c / t) if t else 0.0 for name, c, t in zip(ATTRIBUTES, correct, total)}
    return EvalReport(
        overall=float(correct.sum() / total.sum()) if total.sum() else 0.0,
        attributes={k: acc[k] for k in TABLE_ATTRIBUTES},
        extra_attributes={k: acc[k] for k in EXTRA_ATTRIBUTES},
        positions=int(total[0]),
        predictions=int(total.sum()),
        split=split,
        config_fingerprint=fingerprint,
        views=views,
    )


@torch.no_grad()
def accumulate_accuracy(model: MultiViewMidiVAE, sequences, vocab: OctupleVocabulary, batch_size=16,
                        log_prob_fn=None) -> dict:
    """Teacher-forced, deterministic (z = mu) accuracy counts over pieces.

    ``log_prob_fn(batch) -> list of log-prob tensors`` replaces the model's
    fused output; it lets tests inject oracle distributions.
    """
    was_training = model.training
    model.eval()
    counts = {"correct": np.zeros(NUM_ATTRIBUTES, np.int64), "total": np.zeros(NUM_ATTRIBUTES, np.int64)}
    try:
        for start in range(0, len(sequences), batch_size):
            batch = collate(sequences[start:start + batch_size], model.cfg, vocab)
            if log_prob_fn is None:
                lp = model(batch, deterministic=True).log_probs
            else:
                lp = log_prob_fn(batch)
            c = accuracy_counts(lp, batch["canon"], batch["canon_mask"], model.real_sizes())
            counts["correct"] += c["correct"]
            counts["total"] += c["total"]
    finally:
        model.train(was_training)
    return counts


def config_fingerprint(model: MultiViewMidiVAE, vocab: OctupleVocabulary) -> str:
    import hashlib

    blob = json.dumps({"model": model.cfg.to_dict(), "vocab": vocab.fingerprint()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def evaluate_model(model, vocab, manifest, split="test", batch_size=16, log_prob_fn=None) -> EvalReport:
    if vocab.fingerprint() != manifest.vocab_fingerprint:
        raise CheckpointError(
            f"checkpoint vocabulary {vocab.fingerprint()} differs from corpus vocabulary "
            f"{manifest.vocab_fingerprint}; re-ingest the corpus with the checkpoint's vocab.json"
        )
    sequences = manifest.sequences(split)
    if not sequences:
        raise ContractError(f"split {split!r} is empty")
    counts = accumulate_accuracy(model, sequences, vocab, batch_size, log_prob_fn)
    return report_from_counts(counts, split, config_fingerprint(model, vocab), model.cfg.views)


def evaluate_reconstruction(checkpoint, manifest, split="test", batch_size=16) -> EvalReport:
    from .train import load_checkpoint

    model, vocab, _ = load_checkpoint(checkpoint)
    return evaluate_model(model, vocab, manifest, split, batch_size)


@torch.no_grad()
def forward_reconstruct(model: MultiViewMidiVAE, seq, vocab: OctupleVocabulary, deterministic=True,
                        seed=0, beta=0.0):
    """Teacher-forced reconstruction of one piece.

    Returns (reconstructed TokenSequence, LossBreakdown, LatentState); the
    reconstruction is the per-position argmax of the fused distribution, in
    the input's canonical positions.
    """
    arr = seq.to_array() if isinstance(seq, TokenSequence) else np.asarray(seq).reshape(-1, NUM_ATTRIBUTES)
    was_training = model.training
    model.eval()
    try:
        batch = collate([arr], model.cfg, vocab)
        gen = torch.Generator().manual_seed(seed)
        out = model(batch, beta=beta, deterministic=deterministic, generator=gen)
    finally:
        model.train(was_training)
    pred = model.predict(out.log_probs)[0, : len(arr)].numpy()
    return TokenSequence.from_array(pred), out.breakdown(), out.latent


@dataclass
class GenerationResult:
    pieces: list
    degenerate: int
    track_view: list = field(default_factory=list)

    @property
    def degeneracy_rate(self) -> float:
        return self.degenerate / len(self.pieces) if self.pieces else 0.0


@torch.no_grad()
def sample_prior_generate(model: MultiViewMidiVAE, count: int, seed: int = 0, temperature: float = 0.0,
                          batch_size: int = 16) -> GenerationResult:
    """Draw z from the standard normal prior and decode both views.

    The bar-view decode is the generated piece; the track-view decode is kept
    alongside for diagnostics. A single-view model uses its own view.
    """
    model.eval()
    gen = torch.Generator().manual_seed(seed)
    dtype = model.alpha_logits.dtype
    pieces, track_pieces = [], []
    for start in range(0, count, batch_size):
        n = min(batch_size, count - start)
        z = torch.randn(n, model.cfg.d_latent, generator=gen, dtype=dtype)
        views = model.generate(z, temperature=temperature, generator=gen)
        primary = "bar" if "bar" in views else "track"
        for i in range(n):
            values, mask = views[primary]
            pieces.append(view_to_sequence(values[i], mask[i]))
            if "track" in views and primary != "track":
                tv, tm = views["track"]
                track_pieces.append(view_to_sequence(tv[i], tm[i]))
    degenerate = sum(1 for p in pieces if len(p) == 0)
    return GenerationResult(pieces, degenerate, track_pieces)
