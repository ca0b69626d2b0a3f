"""Synthetic four-part chorales for desk-scale training and tests.

Each piece is 8 bars of 4/4 with one instrument per part. A diatonic
progression (two chords per bar, ending on a V-I cadence) drives all parts;
each part walks through chord tones inside its own register, moving to the
nearest available tone. Rhythms come from a small library of one-bar
patterns whose note-count distribution is tuned so the mean notes per bar
per part equals ``density``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from ..octuple import NoteEvent, save_smf
from ..octuple.vocab import CHORALE_INSTRUMENTS, OctupleVocabulary

# lowest..highest MIDI pitch, soprano first
SATB_RANGES = ((60, 81), (53, 74), (48, 69), (40, 62))
MAJOR = (0, 2, 4, 5, 7, 9, 11)
# one-bar rhythms in sixteenths, grouped by note count
PATTERNS = {
    1: [(16,)],
    2: [(8, 8), (12, 4), (4, 12)],
    3: [(4, 4, 8), (8, 4, 4), (6, 2, 8), (4, 8, 4)],
    4: [(4, 4, 4, 4), (6, 2, 4, 4), (4, 4, 6, 2), (8, 4, 2, 2)],
    5: [(4, 4, 4, 2, 2), (2, 2, 4, 4, 4), (4, 2, 2, 4, 4)],
    6: [(2, 2, 2, 2, 4, 4), (4, 4, 2, 2, 2, 2), (2, 2, 4, 2, 2, 4)],
}
TEMPOS = (72.0, 80.0, 96.0, 100.0, 120.0)
# diatonic triads by scale degree (0-based)
PROGRESSION_STEPS = {0: (3, 4, 5, 1), 1: (4, 6), 2: (5, 3), 3: (4, 1, 0), 4: (0, 5), 5: (1, 3), 6: (0,)}


@dataclass
class SyntheticCorpusSpec:
    count: int = 512
    bars: int = 8
    tracks: int = 4
    instruments: tuple = tuple(sorted(CHORALE_INSTRUMENTS.values()))
    density: float = 3.0  # mean notes per bar per part
    seed: int = 0
    ranges: tuple = field(default=SATB_RANGES)

    def validate(self):
        if self.bars < 1 or self.tracks < 1 or self.count < 0:
            raise ConfigError("bars and tracks must be >= 1, count >= 0")
        if self.tracks > len(self.ranges):
            raise ConfigError(f"only {len(self.ranges)} part ranges are defined")
        if self.tracks > len(self.instruments):
            raise ConfigError("fewer instruments than parts")
        if not min(PATTERNS) <= self.density <= max(PATTERNS):
            raise ConfigError(f"density must lie in [{min(PATTERNS)}, {max(PATTERNS)}]")
        lows = [r[0] for r in self.ranges[: self.tracks]]
        highs = [r[1] for r in self.ranges[: self.tracks]]
        if lows != sorted(lows, reverse=True) or highs != sorted(highs, reverse=True):
            raise ConfigError("part ranges must be ordered from the highest part down")


def length_distribution(density: float) -> dict:
    """Exponential-family weights over pattern lengths with the given mean."""
    lengths = np.array(sorted(PATTERNS), dtype=float)

    def mean(lam):
        w = np.exp(lam * (lengths - lengths.mean()))
        return float((w * lengths).sum() / w.sum())

    lo, hi = -50.0, 50.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mean(mid) < density:
            lo = mid
        else:
            hi = mid
    w = np.exp(0.5 * (lo + hi) * (lengths - lengths.mean()))
    return dict(zip(map(int, lengths), w / w.sum()))


def _progression(rng, chords: int) -> list:
    degrees = [0]
    while len(degrees) < chords - 2:
        degrees.append(int(rng.choice(PROGRESSION_STEPS[degrees[-1]])))
    return (degrees + [4, 0])[-chords:] if chords >= 2 else [0]


def _chord_pcs(tonic: int, degree: int) -> set:
    return {(tonic + MAJOR[(degree + k) % 7]) % 12 for k in (0, 2, 4)}


def _nearest_tone(rng, pcs, lo, hi, prev):
    options = [p for p in range(lo, hi + 1) if p % 12 in pcs]
    if prev is None:
        centre = (lo + hi) / 2
        dist = [abs(p - centre) for p in options]
    else:
        dist = [abs(p - prev) for p in options]
    best = min(dist)
    return int(rng.choice([p for p, d in zip(options, dist) if d == best]))


def synth_piece(rng, spec: SyntheticCorpusSpec, tpq: int = 480) -> list:
    bar_ticks = 4 * tpq
    sixteenth = bar_ticks // 16
    tonic = int(rng.integers(12))
    chords = _progression(rng, 2 * spec.bars)
    tempo = float(rng.choice(TEMPOS))
    programs = rng.choice(np.asarray(spec.instruments), size=spec.tracks, replace=False)
    dist = length_distribution(spec.density)
    lengths, probs = list(dist), list(dist.values())
    events = []
    for part in range(spec.tracks):
        lo, hi = spec.ranges[part]
        velocity = int(rng.integers(60, 101))
        prev = None
        for bar in range(spec.bars):
            n = int(rng.choice(lengths, p=probs))
            options = PATTERNS[n]
            pattern = options[int(rng.integers(len(options)))]
            start = 0
            for units in pattern:
                chord = chords[2 * bar + (1 if start >= 8 else 0)]
                pcs = _chord_pcs(tonic, chord)
                if part == spec.tracks - 1 and start in (0, 8):
                    pcs = {(tonic + MAJOR[chord]) % 12}  # bass takes the root on chord changes
                pitch = _nearest_tone(rng, pcs, lo, hi, prev)
                prev = pitch
                events.append(NoteEvent(
                    onset=bar * bar_ticks + start * sixteenth,
                    pitch=pitch,
                    velocity=velocity,
                    duration=units * sixteenth,
                    instrument=int(programs[part]),
                    tempo=tempo,
                    time_signature=(4, 4),
                ))
                start += units
    return sorted(events)


def synth_chorale_corpus(spec: SyntheticCorpusSpec, out, vocab: OctupleVocabulary | None = None,
                         limits=None, ingest: bool = True):
    """Write ``spec.count`` pieces as SMF files under ``out/pieces`` and ingest them."""
    spec.validate()
    out = Path(out)
    pieces = out / "pieces"
    pieces.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(max(spec.count - 1, 0))))
    for i in range(spec.count):
        rng = np.random.default_rng([spec.seed, i])
        save_smf(synth_piece(rng, spec), pieces / f"chorale_{i:0{width}d}.mid")
    if not ingest:
        return None
    from .corpus import ingest_corpus

    return ingest_corpus(pieces, vocab or OctupleVocabulary(), out=out, limits=limits)


def expected_notes_per_piece(spec: SyntheticCorpusSpec) -> float:
    return spec.density * spec.bars * spec.tracks

