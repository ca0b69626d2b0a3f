from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

from ..errors import ConfigError
from ..octuple.vocab import NUM_ATTRIBUTES, OctupleVocabulary

VIEW_MODES = ("multi", "track", "bar")


@dataclass
class ModelConfig:
    """Widths, depths and shapes of the multi-view VAE.

    Defaults follow the full-size setting (512-wide, 4 encoder / 8 decoder
    layers, 8 heads). ``vocab_sizes`` are class counts per attribute,
    including the PAD and end-of-group classes.
    """

    vocab_sizes: tuple = field(default_factory=lambda: OctupleVocabulary().model_sizes)
    d_track: int = 512
    d_bar: int = 512
    d_latent: int = 512
    n_tracks: int = 4
    n_bars: int = 8
    track_capacity: int = 64
    bar_capacity: int = 32
    encoder_layers: int = 4
    decoder_layers: int = 8
    heads: int = 8
    ff_mult: int = 4
    dropout: float = 0.1
    attr_dim: int = 0  # per-attribute embedding width; 0 -> d // 4
    views: str = "multi"

    def __post_init__(self):
        self.vocab_sizes = tuple(int(v) for v in self.vocab_sizes)
        self.validate()

    def validate(self):
        if len(self.vocab_sizes) != NUM_ATTRIBUTES:
            raise ConfigError(f"need {NUM_ATTRIBUTES} vocabulary sizes, got {len(self.vocab_sizes)}")
        for name in ("d_track", "d_bar", "d_latent"):
            if getattr(self, name) % self.heads:
                raise ConfigError(f"{name}={getattr(self, name)} not divisible by heads={self.heads}")
        for name in ("n_tracks", "n_bars", "track_capacity", "bar_capacity", "encoder_layers",
                     "decoder_layers", "heads", "ff_mult"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.views not in VIEW_MODES:
            raise ConfigError(f"views must be one of {VIEW_MODES}, got {self.views!r}")

    @property
    def use_track(self) -> bool:
        return self.views in ("multi", "track")

    @property
    def use_bar(self) -> bool:
        return self.views in ("multi", "bar")

    @classmethod
    def for_vocab(cls, vocab: OctupleVocabulary, **overrides) -> "ModelConfig":
        return cls(vocab_sizes=vocab.model_sizes, **overrides)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vocab_sizes"] = list(self.vocab_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)
