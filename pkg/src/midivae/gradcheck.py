"""Central finite differences against autograd on a miniature model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .data.batching import collate
from .model.config import ModelConfig
from .octuple.tokens import OctupleToken, TokenSequence
from .octuple.vocab import OctupleVocabulary
from .vae import MultiViewMidiVAE

TOLERANCE = 1e-3
STEP = 1e-4
# below this magnitude gradients are compared on an absolute scale
GRAD_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    max_rel_error: float
    coordinates: int
    per_module: dict = field(default_factory=dict)
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def to_dict(self):
        return {
            "passed": self.passed,
            "max_rel_error": self.max_rel_error,
            "coordinates": self.coordinates,
            "tolerance": self.tolerance,
            "per_module": self.per_module,
        }


def miniature_config(vocab: OctupleVocabulary, **overrides) -> ModelConfig:
    kw = dict(d_track=8, d_bar=8, d_latent=8, n_tracks=2, n_bars=2, track_capacity=6, bar_capacity=6,
              encoder_layers=1, decoder_layers=1, heads=1, ff_mult=2, dropout=0.0, attr_dim=2)
    kw.update(overrides)
    return ModelConfig.for_vocab(vocab, **kw)


def miniature_piece(rng, cfg: ModelConfig, vocab: OctupleVocabulary, n=5) -> TokenSequence:
    sizes = vocab.sizes
    insts = rng.choice(sizes[3], size=cfg.n_tracks, replace=False)
    toks = set()
    while len(toks) < n:
        toks.add(OctupleToken(
            int(rng.integers(sizes[0])), int(rng.integers(sizes[1])), int(rng.integers(sizes[2])),
            int(rng.choice(insts)), int(rng.integers(sizes[4])), int(rng.integers(cfg.n_bars)), 0, 5,
        ))
    return TokenSequence(sorted(toks, key=OctupleToken.sort_key))


def relative_error(analytic: float, numeric: float, floor: float = GRAD_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradient_check(cfg: ModelConfig | None = None, vocab: OctupleVocabulary | None = None, seed: int = 0,
                   coordinates: int = 240, beta: float = 0.5, step: float = STEP) -> GradCheckReport:
    """Compare autograd with central differences on sampled parameter coordinates.

    Runs in float64 with dropout off and a fixed reparameterization noise,
    so the loss is a deterministic smooth function of the parameters.
    """
    vocab = vocab or OctupleVocabulary()
    cfg = cfg or miniature_config(vocab)
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    model = MultiViewMidiVAE(cfg).double()
    model.alpha_logits.data.normal_()
    model.train()
    pieces = [miniature_piece(rng, cfg, vocab).to_array() for _ in range(2)]
    batch = collate(pieces, cfg, vocab)
    eps = torch.from_numpy(rng.standard_normal((len(pieces), cfg.d_latent)))

    def loss_fn():
        return model(batch, beta=beta, eps=eps).loss

    model.zero_grad()
    loss_fn().backward()
    params = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    grads = {n: p.grad.detach().clone() for n, p in params}

    # spread samples over every parameter tensor, favouring coordinates
    # that actually receive gradient
    per_param = max(1, -(-coordinates // len(params)))
    report = {}
    worst = 0.0
    count = 0
    with torch.no_grad():
        for name, p in params:
            flat_grad = grads[name].reshape(-1)
            live = torch.nonzero(flat_grad).reshape(-1).numpy()
            pool = live if len(live) else np.arange(flat_grad.numel())
            picks = rng.choice(pool, size=min(per_param, len(pool)), replace=False)
            flat = p.view(-1)
            for idx in picks:
                orig = flat[idx].item()
                flat[idx] = orig + step
                up = loss_fn().item()
                flat[idx] = orig - step
                down = loss_fn().item()
                flat[idx] = orig
                numeric = (up - down) / (2 * step)
                analytic = flat_grad[idx].item()
                err = relative_error(analytic, numeric)
                count += 1
                module = name.rsplit(".", 1)[0]
                if module not in report or err > report[module]["rel_error"]:
                    report[module] = {"param": name, "index": int(idx), "analytic": analytic,
                                      "numeric": numeric, "rel_error": err}
                worst = max(worst, err)
    return GradCheckReport(worst, count, report)
