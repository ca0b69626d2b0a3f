"""Training loop, checkpoints, and the beta schedule."""

from __future__ import annotations

import json
import logging
import math
import pickle
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch

from .data.batching import collate, epoch_order
from .data.corpus import CorpusManifest
from .errors import CheckpointError, ConfigError, TrainingError
from .model.config import ModelConfig
from .octuple.vocab import OctupleVocabulary
from .vae import MultiViewMidiVAE

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "midivae-checkpoint"
CHECKPOINT_VERSION = 1
METRICS_VERSION = 1


@dataclass
class TrainingConfig:
    lr: float = 1e-4
    batch_size: int = 16
    max_steps: int = 10_000
    beta_max: float = 0.2
    beta_anneal_fraction: float = 0.25
    grad_clip: float = 1.0
    seed: int = 0
    checkpoint_every: int = 1000
    split: str = "train"
    eval_every: int = 0  # 0 disables periodic accuracy checks
    stop_accuracy: float = 0.0  # stop once train accuracy reaches this (0 disables)
    device: str = "cpu"
    dtype: str = "float32"

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    def beta(self, step: int) -> float:
        """Linear warm-up from 0 to ``beta_max`` over the anneal horizon."""
        horizon = self.beta_anneal_fraction * self.max_steps
        if horizon <= 0:
            return self.beta_max
        return self.beta_max * min(1.0, step / horizon)


def torch_dtype(name: str):
    return {"float32": torch.float32, "float64": torch.float64}[name]


def build_model(cfg: ModelConfig, seed: int, dtype=torch.float32) -> MultiViewMidiVAE:
    torch.manual_seed(seed)
    return MultiViewMidiVAE(cfg).to(dtype)


# checkpoints -------------------------------------------------------------------


def save_checkpoint(path, model, vocab: OctupleVocabulary, optimizer=None, step=0, train_cfg=None,
                    rng=None):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": model.cfg.to_dict(),
        "vocab": vocab.to_dict(),
        "state_dict": model.state_dict(),
        "alpha_logits": model.alpha_logits.detach().clone(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "step": step,
        "training_config": asdict(train_cfg) if train_cfg is not None else None,
        "rng": rng,
        "dtype": str(next(model.parameters()).dtype).replace("torch.", ""),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path):
    """Return (model, vocab, payload)."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except (OSError, RuntimeError, EOFError, pickle.UnpicklingError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a checkpoint of this package")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('version')!r}")
    cfg = ModelConfig.from_dict(payload["model_config"])
    vocab = OctupleVocabulary.from_dict(payload["vocab"])
    model = MultiViewMidiVAE(cfg).to(torch_dtype(payload.get("dtype", "float32")))
    model.load_state_dict(payload["state_dict"])
    return model, vocab, payload


# training --------------------------------------------------------------------------


def _rng_state(gen: torch.Generator):
    return {"torch": torch.get_rng_state(), "reparam": gen.get_state()}


def teacher_forced_accuracy(model, sequences, vocab, batch_size=16) -> float:
    from .evaluate import accumulate_accuracy

    counts = accumulate_accuracy(model, sequences, vocab, batch_size)
    return counts["correct"].sum() / max(1, counts["total"].sum())


def train(manifest: CorpusManifest, model_cfg: ModelConfig, train_cfg: TrainingConfig, out_dir,
          resume=None, stop_after=None, on_step=None):
    """Optimize the total loss on ``train_cfg.split``.

    Writes ``out_dir/checkpoint.pt`` (periodically and at the end) and
    ``out_dir/metrics.jsonl`` (one record per step). ``resume`` continues
    from a checkpoint, restoring optimizer and RNG state. ``stop_after``
    halts early at that step count, checkpointing first. Returns
    (checkpoint path, metrics path).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "checkpoint.pt"
    metrics_path = out_dir / "metrics.jsonl"
    vocab = manifest.vocab()
    if vocab.fingerprint() != manifest.vocab_fingerprint:
        raise CheckpointError("manifest vocabulary fingerprint does not match vocab.json")
    if tuple(model_cfg.vocab_sizes) != vocab.model_sizes:
        raise ConfigError("model vocabulary sizes do not match the corpus vocabulary")
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)

    entries = manifest.split(train_cfg.split)
    if not entries:
        raise TrainingError(f"split {train_cfg.split!r} is empty")
    sequences = manifest.sequences(train_cfg.split)
    dtype = torch_dtype(train_cfg.dtype)

    gen = torch.Generator().manual_seed(train_cfg.seed + 1)
    if resume is not None:
        model, _, payload = load_checkpoint(resume)
        model = model.to(dtype)
        start = payload["step"]
        optimizer = torch.optim.Adam(model.parameters(), lr=train_cfg.lr)
        optimizer.load_state_dict(payload["optimizer"])
        torch.set_rng_state(payload["rng"]["torch"])
        gen.set_state(payload["rng"]["reparam"])
        mode = "a"
    else:
        model = build_model(model_cfg, train_cfg.seed, dtype)
        optimizer = torch.optim.Adam(model.parameters(), lr=train_cfg.lr)
        start = 0
        mode = "w"

    batches_per_epoch = math.ceil(len(entries) / train_cfg.batch_size)
    cache = {}

    def batch_for(step):
        epoch, k = divmod(step, batches_per_epoch)
        order = epoch_order(len(entries), train_cfg.seed, epoch)
        idx = tuple(order[k * train_cfg.batch_size:(k + 1) * train_cfg.batch_size])
        if idx not in cache:
            cache[idx] = collate([sequences[i] for i in idx], model_cfg, vocab)
        return [entries[i].id for i in idx], cache[idx]

    def checkpoint(step):
        save_checkpoint(ckpt_path, model, vocab, optimizer, step, train_cfg, _rng_state(gen))

    step = start
    t0 = time.time()
    end = train_cfg.max_steps if stop_after is None else min(stop_after, train_cfg.max_steps)
    with open(metrics_path, mode) as metrics:
        try:
            while step < end:
                model.train()
                ids, batch = batch_for(step)
                beta = train_cfg.beta(step)
                out = model(batch, beta=beta, generator=gen)
                if not torch.isfinite(out.loss):
                    dump = out_dir / f"nonfinite_step{step}.json"
                    dump.write_text(json.dumps({"step": step, "pieces": ids, **out.breakdown().as_dict()}))
                    raise TrainingError(f"non-finite loss at step {step} on batch {ids}; see {dump}")
                optimizer.zero_grad(set_to_none=True)
                out.loss.backward()
                if train_cfg.grad_clip > 0:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
                optimizer.step()
                step += 1
                record = {"version": METRICS_VERSION, "step": step, **out.breakdown().as_dict(),
                          "lr": train_cfg.lr, "wall_time": round(time.time() - t0, 3)}
                if train_cfg.eval_every and step % train_cfg.eval_every == 0:
                    record["train_accuracy"] = teacher_forced_accuracy(model, sequences, vocab)
                metrics.write(json.dumps(record) + "\n")
                metrics.flush()
                if on_step is not None:
                    on_step(record)
                if train_cfg.checkpoint_every and step % train_cfg.checkpoint_every == 0:
                    checkpoint(step)
                if train_cfg.stop_accuracy and record.get("train_accuracy", 0.0) >= train_cfg.stop_accuracy:
                    log.info("train accuracy %.4f reached at step %d", record["train_accuracy"], step)
                    break
        except KeyboardInterrupt:
            checkpoint(step)
            raise
    checkpoint(step)
    return ckpt_path, metrics_path


def read_metrics(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
