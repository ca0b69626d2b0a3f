"""Note events, octuple tokens, and the encode/decode pair between them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from ..errors import DecodingError, EncodingError
from .vocab import ATTRIBUTES, NUM_ATTRIBUTES, OctupleVocabulary, round_half_down


@dataclass(frozen=True, order=True)
class NoteEvent:
    onset: int
    pitch: int
    velocity: int
    duration: int
    instrument: int
    tempo: float = 120.0
    time_signature: tuple = (4, 4)

    def check(self, vocab: Optional[OctupleVocabulary] = None) -> None:
        """Raise ``EncodingError`` if an invariant is violated."""
        problems = []
        if not 0 <= self.pitch <= 127:
            problems.append(f"pitch {self.pitch} outside 0..127")
        if not 1 <= self.velocity <= 127:
            problems.append(f"velocity {self.velocity} outside 1..127")
        if self.duration < 1:
            problems.append(f"duration {self.duration} < 1 tick")
        if self.onset < 0:
            problems.append(f"negative onset {self.onset}")
        if not self.tempo > 0:
            problems.append(f"non-positive tempo {self.tempo}")
        if vocab is not None and not vocab.has_program(self.instrument):
            problems.append(f"instrument {self.instrument} not in vocabulary")
        if problems:
            raise EncodingError(f"invalid note {self}: " + "; ".join(problems))


class OctupleToken(NamedTuple):
    pitch: int
    velocity: int
    duration: int
    instrument: int
    position: int
    bar: int
    timesig: int
    tempo: int

    def sort_key(self):
        # bar, position, instrument, pitch, duration, then the rest to make
        # the order total on distinct tokens
        return (
            self.bar,
            self.position,
            self.instrument,
            self.pitch,
            self.duration,
            self.velocity,
            self.timesig,
            self.tempo,
        )

    def is_pad(self, vocab: OctupleVocabulary) -> bool:
        return any(v == vocab.pad_index(i) for i, v in enumerate(self))


@dataclass
class TokenSequence:
    tokens: list = field(default_factory=list)
    provenance: Optional[str] = None

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]

    def __eq__(self, other):
        if not isinstance(other, TokenSequence):
            return NotImplemented
        return list(self.tokens) == list(other.tokens)

    def to_array(self) -> np.ndarray:
        if not self.tokens:
            return np.zeros((0, NUM_ATTRIBUTES), dtype=np.int64)
        return np.asarray(self.tokens, dtype=np.int64)

    @classmethod
    def from_array(cls, arr, provenance=None) -> "TokenSequence":
        arr = np.asarray(arr, dtype=np.int64).reshape(-1, NUM_ATTRIBUTES)
        return cls([OctupleToken(*map(int, row)) for row in arr], provenance)

    def is_canonical(self) -> bool:
        keys = [t.sort_key() for t in self.tokens]
        return all(a < b for a, b in zip(keys, keys[1:]))

    def canonicalized(self) -> "TokenSequence":
        return TokenSequence(sorted(self.tokens, key=OctupleToken.sort_key), self.provenance)


def _div_round_half_down(a: int, b: int) -> int:
    # ceil((2a - b) / 2b) == nearest integer to a/b, ties down
    return -(-(2 * a - b) // (2 * b))


def encode_note(ev: NoteEvent, vocab: OctupleVocabulary) -> OctupleToken:
    ev.check(vocab)
    ts = tuple(ev.time_signature)
    if not vocab.has_timesig(ts):
        raise EncodingError(f"note {ev}: time signature {ts[0]}/{ts[1]} not in vocabulary")
    slot = vocab.slot_ticks_for(ts)
    grid = _div_round_half_down(ev.onset, slot)
    bar, position = divmod(grid, vocab.positions_per_bar)
    if bar >= vocab.max_bars:
        raise EncodingError(f"note {ev}: bar {bar} exceeds max_bars {vocab.max_bars}")
    units = max(1, _div_round_half_down(ev.duration, slot))
    if units > vocab.duration_bins:
        raise EncodingError(
            f"note {ev}: duration {units} grid units exceeds {vocab.duration_bins}"
        )
    tempo_idx = vocab.tempo_to_index(ev.tempo)
    if not 0 <= tempo_idx < vocab.tempo_bins:
        raise EncodingError(
            f"note {ev}: tempo {ev.tempo} outside {vocab.tempo_min}..{vocab.tempo_max:g} bpm"
        )
    return OctupleToken(
        pitch=ev.pitch,
        velocity=vocab.velocity_to_index(ev.velocity),
        duration=units - 1,
        instrument=vocab.program_to_index(ev.instrument),
        position=position,
        bar=bar,
        timesig=vocab.timesig_to_index(ts),
        tempo=tempo_idx,
    )


def encode_score(events, vocab: OctupleVocabulary, provenance=None) -> TokenSequence:
    """Quantize notes to one octuple token each, in canonical order."""
    tokens = [encode_note(ev, vocab) for ev in events]
    tokens.sort(key=OctupleToken.sort_key)
    return TokenSequence(tokens, provenance)


def decode_token(tok: OctupleToken, vocab: OctupleVocabulary) -> NoteEvent:
    for i, (name, value, size) in enumerate(zip(ATTRIBUTES, tok, vocab.sizes)):
        if not 0 <= value < size:
            raise DecodingError(f"{name} index {value} outside 0..{size - 1} in {tok}")
    ts = vocab.index_to_timesig(tok.timesig)
    slot = vocab.slot_ticks_for(ts)
    return NoteEvent(
        onset=(tok.bar * vocab.positions_per_bar + tok.position) * slot,
        pitch=tok.pitch,
        velocity=vocab.index_to_velocity(tok.velocity),
        duration=(tok.duration + 1) * slot,
        instrument=vocab.index_to_program(tok.instrument),
        tempo=vocab.index_to_tempo(tok.tempo),
        time_signature=ts,
    )


def decode_sequence(seq, vocab: OctupleVocabulary) -> list:
    """Map tokens back to note events on the quantization grid.

    Tokens carrying a PAD (or end-of-group) index in any attribute are
    skipped; any other out-of-range index raises ``DecodingError``.
    """
    pads = vocab.pad_token
    eogs = vocab.eog_token
    events = []
    for tok in seq:
        tok = OctupleToken(*map(int, tok))
        if any(v == p or v == e for v, p, e in zip(tok, pads, eogs)):
            continue
        events.append(decode_token(tok, vocab))
    return events


def quantize_events(events, vocab: OctupleVocabulary) -> list:
    """Snap events onto the grid (encode then decode)."""
    return decode_sequence(encode_score(events, vocab), vocab)
