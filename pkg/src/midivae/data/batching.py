"""Fixed-shape batches of canonical sequences and their two views."""

from __future__ import annotations

import numpy as np
import torch

from ..octuple.vocab import NUM_ATTRIBUTES, OctupleVocabulary
from ..views import build_bar_view, build_track_view


def add_end_of_group(values: np.ndarray, mask: np.ndarray, eog_token) -> tuple:
    """Targets with an end-of-group token right after each group's last note."""
    targets = values.copy()
    target_mask = mask.copy()
    counts = mask.sum(axis=-1)
    capacity = mask.shape[-1]
    rows = np.nonzero(counts < capacity)
    targets[rows + (counts[rows],)] = eog_token
    target_mask[rows + (counts[rows],)] = True
    return targets, target_mask


def collate(sequences, cfg, vocab: OctupleVocabulary, dtype=torch.long) -> dict:
    """Stack encoded pieces into the tensors the model consumes.

    Keys: ``canon``/``canon_mask`` (n, S, M)/(n, S); per view ``*_values``,
    ``*_mask``, ``*_targets``, ``*_target_mask`` shaped (n, G, L, ...); and
    ``track_index``/``bar_index`` mapping canonical positions to flattened
    view slots.
    """
    n = len(sequences)
    s = max([1] + [len(a) for a in sequences])
    pad = np.asarray(vocab.pad_token, dtype=np.int64)
    eog = np.asarray(vocab.eog_token, dtype=np.int64)
    canon = np.tile(pad, (n, s, 1))
    canon_mask = np.zeros((n, s), dtype=bool)
    out = {"canon": canon, "canon_mask": canon_mask}
    views = {
        "track": lambda a: build_track_view(a, cfg.n_tracks, cfg.track_capacity, vocab),
        "bar": lambda a: build_bar_view(a, cfg.n_bars, cfg.bar_capacity, vocab),
    }
    for name, (groups, capacity) in {
        "track": (cfg.n_tracks, cfg.track_capacity),
        "bar": (cfg.n_bars, cfg.bar_capacity),
    }.items():
        out[f"{name}_values"] = np.zeros((n, groups, capacity, NUM_ATTRIBUTES), dtype=np.int64)
        out[f"{name}_mask"] = np.zeros((n, groups, capacity), dtype=bool)
        out[f"{name}_targets"] = np.zeros_like(out[f"{name}_values"])
        out[f"{name}_target_mask"] = np.zeros_like(out[f"{name}_mask"])
        out[f"{name}_index"] = np.zeros((n, s), dtype=np.int64)
    for i, arr in enumerate(sequences):
        arr = np.asarray(arr, dtype=np.int64).reshape(-1, NUM_ATTRIBUTES)
        canon[i, : len(arr)] = arr
        canon_mask[i, : len(arr)] = True
        for name, build in views.items():
            view, xf = build(arr)
            out[f"{name}_values"][i] = view.values
            out[f"{name}_mask"][i] = view.mask
            targets, tmask = add_end_of_group(view.values, view.mask, eog)
            out[f"{name}_targets"][i] = targets
            out[f"{name}_target_mask"][i] = tmask
            out[f"{name}_index"][i, : len(arr)] = xf.flat_inverse()
    return {k: torch.from_numpy(v) for k, v in out.items()}


def epoch_order(count: int, seed: int, epoch: int, shuffle: bool = True) -> np.ndarray:
    if not shuffle:
        return np.arange(count)
    return np.random.default_rng([seed, epoch]).permutation(count)


def batchify(manifest, split: str, batch_size: int, seed: int = 0, cfg=None, epoch: int = 0,
             shuffle: bool = True):
    """Yield (piece ids, batch dict) for one epoch of ``split``.

    Order is a pure function of (seed, epoch); the last batch may be short.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    entries = manifest.split(split)
    sequences = manifest.sequences(split)
    vocab = manifest.vocab()
    order = epoch_order(len(entries), seed, epoch, shuffle)
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        ids = [entries[i].id for i in idx]
        yield ids, collate([sequences[i] for i in idx], cfg, vocab)
