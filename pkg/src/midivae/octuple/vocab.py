"""Attribute vocabularies and quantization grids for octuple tokens.

Every attribute has ``size`` real values stored at indices ``0..size-1``.
Two reserved indices follow: ``size`` is PAD and ``size + 1`` is the
end-of-group marker used by the view decoders. Quantization never produces
either of them.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError

ATTRIBUTES = (
    "pitch",
    "velocity",
    "duration",
    "instrument",
    "position",
    "bar",
    "timesig",
    "tempo",
)
NUM_ATTRIBUTES = len(ATTRIBUTES)
ATTR_INDEX = {name: i for i, name in enumerate(ATTRIBUTES)}

VOCAB_FORMAT_VERSION = 1

# General MIDI programs of the thirteen chorale instruments, plus program 0
# so files without program changes still tokenize.
CHORALE_INSTRUMENTS = {
    "violin": 40,
    "viola": 41,
    "cello": 42,
    "double_bass": 43,
    "trumpet": 56,
    "trombone": 57,
    "tuba": 58,
    "french_horn": 60,
    "saxophone": 65,
    "oboe": 68,
    "bassoon": 70,
    "clarinet": 71,
    "flute": 73,
}
DEFAULT_PROGRAMS = (0,) + tuple(sorted(CHORALE_INSTRUMENTS.values()))
DEFAULT_TIME_SIGNATURES = ((4, 4), (3, 4), (2, 4), (6, 8))


def round_half_down(x: float) -> int:
    """Nearest integer, ties toward the smaller one."""
    return math.ceil(x - 0.5)


@dataclass(frozen=True)
class OctupleVocabulary:
    ticks_per_quarter: int = 480
    positions_per_bar: int = 16
    max_bars: int = 256
    velocity_bins: int = 32
    duration_bins: int = 64
    tempo_min: float = 16.0
    tempo_steps_per_octave: int = 12
    tempo_bins: int = 49
    time_signatures: tuple = DEFAULT_TIME_SIGNATURES
    programs: tuple = DEFAULT_PROGRAMS
    _program_index: dict = field(init=False, repr=False, compare=False)
    _ts_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ts = tuple(tuple(int(v) for v in t) for t in self.time_signatures)
        progs = tuple(int(p) for p in self.programs)
        object.__setattr__(self, "time_signatures", ts)
        object.__setattr__(self, "programs", progs)
        if len(set(progs)) != len(progs) or len(set(ts)) != len(ts):
            raise ConfigError("vocabulary values must be unique")
        if any(not 0 <= p <= 127 for p in progs):
            raise ConfigError("programs must lie in 0..127")
        for num, den in ts:
            bar = self.bar_ticks_for((num, den))
            if bar % self.positions_per_bar:
                raise ConfigError(
                    f"time signature {num}/{den} does not divide into "
                    f"{self.positions_per_bar} positions at {self.ticks_per_quarter} tpq"
                )
        object.__setattr__(self, "_program_index", {p: i for i, p in enumerate(progs)})
        object.__setattr__(self, "_ts_index", {t: i for i, t in enumerate(ts)})

    # sizes ------------------------------------------------------------

    @property
    def sizes(self) -> tuple[int, ...]:
        """Number of real values per attribute, in ``ATTRIBUTES`` order."""
        return (
            128,
            self.velocity_bins,
            self.duration_bins,
            len(self.programs),
            self.positions_per_bar,
            self.max_bars,
            len(self.time_signatures),
            self.tempo_bins,
        )

    @property
    def model_sizes(self) -> tuple[int, ...]:
        """Per-attribute class counts including PAD and end-of-group."""
        return tuple(s + 2 for s in self.sizes)

    def pad_index(self, attr: int) -> int:
        return self.sizes[attr]

    def eog_index(self, attr: int) -> int:
        return self.sizes[attr] + 1

    @property
    def pad_token(self) -> tuple[int, ...]:
        return self.sizes

    @property
    def eog_token(self) -> tuple[int, ...]:
        return tuple(s + 1 for s in self.sizes)

    # grids ------------------------------------------------------------

    def bar_ticks_for(self, timesig) -> int:
        num, den = timesig
        return self.ticks_per_quarter * 4 * num // den

    def slot_ticks_for(self, timesig) -> int:
        return self.bar_ticks_for(timesig) // self.positions_per_bar

    # value <-> index --------------------------------------------------

    def program_to_index(self, program: int) -> int:
        return self._program_index[program]

    def index_to_program(self, idx: int) -> int:
        return self.programs[idx]

    def timesig_to_index(self, ts) -> int:
        return self._ts_index[tuple(ts)]

    def index_to_timesig(self, idx: int) -> tuple[int, int]:
        return self.time_signatures[idx]

    def has_program(self, program: int) -> bool:
        return program in self._program_index

    def has_timesig(self, ts) -> bool:
        return tuple(ts) in self._ts_index

    def velocity_to_index(self, velocity: int) -> int:
        return (velocity - 1) * self.velocity_bins // 127

    def index_to_velocity(self, idx: int) -> int:
        # smallest velocity of the bin, so re-binning is exact
        return 1 + -(-idx * 127 // self.velocity_bins)

    def tempo_to_index(self, bpm: float) -> int:
        return round_half_down(self.tempo_steps_per_octave * math.log2(bpm / self.tempo_min))

    def index_to_tempo(self, idx: int) -> float:
        return self.tempo_min * 2.0 ** (idx / self.tempo_steps_per_octave)

    @property
    def tempo_max(self) -> float:
        return self.index_to_tempo(self.tempo_bins - 1)

    # serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": VOCAB_FORMAT_VERSION,
            "ticks_per_quarter": self.ticks_per_quarter,
            "positions_per_bar": self.positions_per_bar,
            "max_bars": self.max_bars,
            "velocity_bins": self.velocity_bins,
            "duration_bins": self.duration_bins,
            "tempo_min": self.tempo_min,
            "tempo_steps_per_octave": self.tempo_steps_per_octave,
            "tempo_bins": self.tempo_bins,
            "time_signatures": [list(t) for t in self.time_signatures],
            "programs": list(self.programs),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OctupleVocabulary":
        d = dict(d)
        version = d.pop("version", None)
        if version != VOCAB_FORMAT_VERSION:
            raise ConfigError(f"unsupported vocabulary version {version!r}")
        d["time_signatures"] = tuple(tuple(t) for t in d["time_signatures"])
        d["programs"] = tuple(d["programs"])
        return cls(**d)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "OctupleVocabulary":
        return cls.from_dict(json.loads(Path(path).read_text()))
