"""Track-view and bar-view rearrangements of a canonical token sequence.

The rearrangements are selections plus padding, so they are kept as index
maps: ``forward_index[g, l]`` is the canonical position feeding slot ``l`` of
group ``g`` (``-1`` for PAD) and ``inverse_index[n]`` is the ``(g, l)`` cell
holding canonical token ``n``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ContractError, MappingError
from .octuple.tokens import TokenSequence
from .octuple.vocab import NUM_ATTRIBUTES, OctupleVocabulary

PAD_SOURCE = -1


@dataclass
class ViewTransform:
    forward_index: np.ndarray  # (G, L) int, PAD_SOURCE where empty
    inverse_index: np.ndarray  # (N, 2) int

    @property
    def group_count(self) -> int:
        return self.forward_index.shape[0]

    @property
    def slot_capacity(self) -> int:
        return self.forward_index.shape[1]

    @property
    def length(self) -> int:
        return self.inverse_index.shape[0]

    def flat_inverse(self) -> np.ndarray:
        """Canonical position -> flattened ``g * L + l`` index."""
        return self.inverse_index[:, 0] * self.slot_capacity + self.inverse_index[:, 1]


@dataclass
class ViewTensor:
    values: np.ndarray  # (G, L, M) int
    mask: np.ndarray  # (G, L) bool

    @property
    def shape(self):
        return self.values.shape


def _build(arr, group_of, groups, capacity, vocab, what):
    n = len(arr)
    values = np.tile(np.asarray(vocab.pad_token, dtype=np.int64), (groups, capacity, 1))
    mask = np.zeros((groups, capacity), dtype=bool)
    fwd = np.full((groups, capacity), PAD_SOURCE, dtype=np.int64)
    inv = np.zeros((n, 2), dtype=np.int64)
    fill = np.zeros(groups, dtype=np.int64)
    # canonical order is preserved because n is visited in increasing order
    for i in range(n):
        g = group_of[i]
        slot = fill[g]
        if slot >= capacity:
            count = int(np.sum(group_of == g))
            raise CapacityError(f"{what} {g} holds {count} notes, capacity is {capacity}")
        values[g, slot] = arr[i]
        mask[g, slot] = True
        fwd[g, slot] = i
        inv[i] = (g, slot)
        fill[g] += 1
    return ViewTensor(values, mask), ViewTransform(fwd, inv)


def track_slots(arr: np.ndarray, n_tracks: int) -> dict:
    """Assign each instrument in the piece to a track slot.

    Instruments are ranked by mean pitch, highest first, so a four-part
    chorale lands Soprano -> 0 ... Bass -> 3. Ties break on instrument index.
    """
    instruments = np.unique(arr[:, 3]) if len(arr) else np.zeros(0, dtype=np.int64)
    if len(instruments) > n_tracks:
        raise MappingError(
            f"piece uses {len(instruments)} instruments but only {n_tracks} track slots exist"
        )
    ranked = sorted(instruments, key=lambda i: (-arr[arr[:, 3] == i, 0].mean(), int(i)))
    return {int(inst): slot for slot, inst in enumerate(ranked)}


def _as_array(seq) -> np.ndarray:
    if isinstance(seq, TokenSequence):
        return seq.to_array()
    return np.asarray(seq, dtype=np.int64).reshape(-1, NUM_ATTRIBUTES)


def build_track_view(seq, n_tracks: int, capacity: int, vocab: OctupleVocabulary, slots=None):
    """Rearrange ``seq`` into (n_tracks, capacity, M), one row per instrument.

    ``slots`` optionally fixes the instrument -> row mapping; by default it
    comes from :func:`track_slots`.
    """
    arr = _as_array(seq)
    slots = track_slots(arr, n_tracks) if slots is None else slots
    try:
        group_of = np.array([slots[int(i)] for i in arr[:, 3]], dtype=np.int64)
    except KeyError as exc:
        raise MappingError(f"instrument index {exc.args[0]} has no track slot") from None
    if len(group_of) and group_of.max() >= n_tracks:
        raise MappingError(f"track slot {group_of.max()} >= {n_tracks}")
    return _build(arr, group_of, n_tracks, capacity, vocab, "track")


def build_bar_view(seq, n_bars: int, capacity: int, vocab: OctupleVocabulary):
    """Rearrange ``seq`` into (n_bars, capacity, M), row ``i`` = bar ``i``."""
    arr = _as_array(seq)
    group_of = arr[:, 5].copy()
    if len(group_of) and group_of.max() >= n_bars:
        raise CapacityError(f"bar index {group_of.max()} outside the {n_bars} modeled bars")
    return _build(arr, group_of, n_bars, capacity, vocab, "bar")


def scatter_to_canonical(view_data, transform: ViewTransform):
    """Pull per-slot data back into canonical order, dropping PAD slots.

    ``view_data`` has leading shape (G, L); trailing axes are carried along.
    Works for numpy arrays and torch tensors alike.
    """
    shape = tuple(view_data.shape[:2])
    if shape != (transform.group_count, transform.slot_capacity):
        raise ContractError(
            f"view data shaped {shape} does not match transform "
            f"({transform.group_count}, {transform.slot_capacity})"
        )
    flat = view_data.reshape((shape[0] * shape[1],) + tuple(view_data.shape[2:]))
    return flat[transform.flat_inverse()]
