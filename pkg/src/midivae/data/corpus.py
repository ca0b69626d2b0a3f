"""Corpus ingestion, the encoded-sequence cache, and split assignment.

Layout of an ingested corpus directory::

    manifest.json        entries, splits, vocabulary fingerprint
    rejects.json         files that failed to parse, encode or fit
    vocab.json           the vocabulary used for encoding
    cache/sequences.bin  concatenated records: uint32 count, then count x 8 uint16
    cache/index.json     piece id -> [byte offset, token count]
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, ContractError, MidiVAEError
from ..octuple import encode_score, load_score
from ..octuple.vocab import NUM_ATTRIBUTES, OctupleVocabulary
from ..views import build_bar_view, build_track_view

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
SPLITS = ("train", "valid", "test")
SOURCE_SUFFIXES = (".mid", ".midi", ".json")


@dataclass
class Limits:
    """Shape limits; a capacity of 0 is resolved from the corpus at ingestion."""

    n_tracks: int = 4
    n_bars: int = 8
    track_capacity: int = 0
    bar_capacity: int = 0


@dataclass
class ManifestEntry:
    id: str
    source: str
    split: str
    notes: int
    tracks: int
    bars: int


@dataclass
class CorpusManifest:
    entries: list = field(default_factory=list)
    vocab_fingerprint: str = ""
    root: str = ""
    limits: dict = field(default_factory=dict)
    rejects: list = field(default_factory=list)

    def split(self, tag: str) -> list:
        if tag not in SPLITS:
            raise ContractError(f"unknown split {tag!r}; expected one of {SPLITS}")
        return [e for e in self.entries if e.split == tag]

    def to_dict(self):
        return {
            "version": MANIFEST_VERSION,
            "vocab_fingerprint": self.vocab_fingerprint,
            "limits": self.limits,
            "entries": [asdict(e) for e in self.entries],
            "rejects": self.rejects,
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "CorpusManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        d = json.loads(path.read_text())
        if d.get("version") != MANIFEST_VERSION:
            raise ConfigError(f"unsupported manifest version {d.get('version')!r}")
        return cls(
            entries=[ManifestEntry(**e) for e in d["entries"]],
            vocab_fingerprint=d["vocab_fingerprint"],
            root=str(path.parent),
            limits=d.get("limits", {}),
            rejects=d.get("rejects", []),
        )

    def vocab(self) -> OctupleVocabulary:
        return OctupleVocabulary.load(Path(self.root) / "vocab.json")

    def sequences(self, tag: str) -> list:
        """Encoded (N, 8) arrays for a split, in manifest order."""
        cache = SequenceCache(Path(self.root) / "cache")
        return [cache.get(e.id) for e in self.split(tag)]


# split assignment ---------------------------------------------------------------


def _hash01(piece_id: str) -> int:
    return int.from_bytes(hashlib.sha256(piece_id.encode()).digest()[:8], "big")


def assign_splits(ids, ratios=(0.8, 0.1, 0.1)) -> dict:
    """Deterministic split per piece id.

    Ids are ordered by a content hash and cut at quotas fixed by the
    largest-remainder rule, so split sizes match the ratios exactly and the
    result does not depend on input order or machine.
    """
    if len(ratios) != len(SPLITS) or any(r < 0 for r in ratios) or not sum(ratios) > 0:
        raise ConfigError(f"bad split ratios {ratios}")
    ids = sorted(set(ids), key=lambda i: (_hash01(i), i))
    total = sum(ratios)
    exact = [len(ids) * r / total for r in ratios]
    quota = [int(x) for x in exact]
    order = sorted(range(len(ratios)), key=lambda k: (-(exact[k] - quota[k]), k))
    for k in order[: len(ids) - sum(quota)]:
        quota[k] += 1
    out = {}
    start = 0
    for tag, q in zip(SPLITS, quota):
        for i in ids[start:start + q]:
            out[i] = tag
        start += q
    return out


# cache ----------------------------------------------------------------------------


class SequenceCache:
    def __init__(self, directory):
        self.dir = Path(directory)
        self._index = None

    @property
    def index(self) -> dict:
        if self._index is None:
            self._index = json.loads((self.dir / "index.json").read_text())
        return self._index

    @staticmethod
    def write(directory, items) -> None:
        """``items``: iterable of (piece_id, (N, 8) int array)."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        index = {}
        with open(directory / "sequences.bin", "wb") as fh:
            for piece_id, arr in items:
                arr = np.asarray(arr, dtype="<u2").reshape(-1, NUM_ATTRIBUTES)
                index[piece_id] = [fh.tell(), len(arr)]
                fh.write(struct.pack("<I", len(arr)))
                fh.write(arr.tobytes())
        (directory / "index.json").write_text(json.dumps(index, indent=0, sort_keys=True))

    def get(self, piece_id: str) -> np.ndarray:
        offset, count = self.index[piece_id]
        with open(self.dir / "sequences.bin", "rb") as fh:
            fh.seek(offset)
            (stored,) = struct.unpack("<I", fh.read(4))
            if stored != count:
                raise MidiVAEError(f"cache record for {piece_id} is corrupt")
            data = np.frombuffer(fh.read(2 * NUM_ATTRIBUTES * count), dtype="<u2")
        return data.astype(np.int64).reshape(count, NUM_ATTRIBUTES)


# ingestion ------------------------------------------------------------------------


def check_limits(arr, limits: Limits, vocab: OctupleVocabulary) -> None:
    """Raise if the piece does not fit the track/bar grid."""
    build_track_view(arr, limits.n_tracks, max(1, limits.track_capacity or len(arr)), vocab)
    build_bar_view(arr, limits.n_bars, max(1, limits.bar_capacity or len(arr)), vocab)


def _encode_file(args):
    path, vocab_dict, limits_dict = args
    vocab = OctupleVocabulary.from_dict(vocab_dict)
    try:
        arr = encode_score(load_score(path), vocab).to_array()
        check_limits(arr, Limits(**limits_dict), vocab)
    except (MidiVAEError, OSError, ValueError) as exc:
        return None, f"{type(exc).__name__}: {exc}"
    return arr, None


def _reject(rejects, path, reason):
    log.warning("skipping %s: %s", path, reason)
    rejects.append({"source": str(path), "reason": reason})


def list_sources(root) -> list:
    root = Path(root)
    return sorted(
        p for p in root.rglob("*")
        if p.is_file() and p.suffix.lower() in SOURCE_SUFFIXES and "cache" not in p.relative_to(root).parts
    )


def ingest_corpus(root, vocab: OctupleVocabulary, out=None, limits: Limits | None = None,
                  ratios=(0.8, 0.1, 0.1), workers: int = 1) -> CorpusManifest:
    """Parse, encode and validate every SMF / JSON note list under ``root``.

    Results go to ``out`` (default ``root``): cache, manifest, vocabulary and
    a rejects report listing every file that was skipped. Unset capacities
    are taken from the 99.5th percentile of per-track / per-bar note counts
    (rounded up to a multiple of 8); pieces above them are rejected.
    """
    root = Path(root)
    out = Path(out) if out is not None else root
    out.mkdir(parents=True, exist_ok=True)
    limits = limits or Limits()
    sources = [p for p in list_sources(root) if p.name not in ("manifest.json", "rejects.json", "vocab.json")]
    jobs = [(str(p), vocab.to_dict(), asdict(limits)) for p in sources]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_encode_file, jobs, chunksize=8))
    else:
        results = [_encode_file(j) for j in jobs]

    encoded, rejects = {}, []
    for path, (arr, err) in zip(sources, results):
        piece_id = path.relative_to(root).with_suffix("").as_posix()
        if err is not None:
            _reject(rejects, path, err)
        elif piece_id in encoded:
            _reject(rejects, path, f"duplicate piece id {piece_id}")
        else:
            encoded[piece_id] = (path, arr)

    if not limits.track_capacity or not limits.bar_capacity:
        lt, lb = suggest_capacities([a for _, a in encoded.values()], limits.n_tracks, limits.n_bars)
        limits = Limits(limits.n_tracks, limits.n_bars, limits.track_capacity or lt,
                        limits.bar_capacity or lb)
        for piece_id in sorted(encoded):
            path, arr = encoded[piece_id]
            try:
                check_limits(arr, limits, vocab)
            except MidiVAEError as exc:
                _reject(rejects, path, f"{type(exc).__name__}: {exc}")
                del encoded[piece_id]

    splits = assign_splits(list(encoded), ratios)
    entries = []
    for piece_id in sorted(encoded):
        path, arr = encoded[piece_id]
        entries.append(ManifestEntry(
            id=piece_id,
            source=str(path),
            split=splits[piece_id],
            notes=len(arr),
            tracks=len(np.unique(arr[:, 3])),
            bars=int(arr[:, 5].max()) + 1 if len(arr) else 0,
        ))
    SequenceCache.write(out / "cache", ((e.id, encoded[e.id][1]) for e in entries))
    vocab.save(out / "vocab.json")
    manifest = CorpusManifest(entries, vocab.fingerprint(), str(out), asdict(limits), rejects)
    manifest.save(out / "manifest.json")
    (out / "rejects.json").write_text(json.dumps(rejects, indent=1))
    return manifest


def capacity_from_counts(counts, quantile=99.5, multiple=8) -> int:
    """Percentile of group sizes rounded up to a multiple of ``multiple``."""
    if len(counts) == 0:
        return multiple
    q = float(np.percentile(np.asarray(counts), quantile, method="higher"))
    return max(multiple, int(-(-q // multiple) * multiple))


def suggest_capacities(sequences, n_tracks: int, n_bars: int) -> tuple:
    """(track_capacity, bar_capacity) from per-track / per-bar note counts."""
    per_track, per_bar = [], []
    for arr in sequences:
        if len(arr):
            per_track.extend(np.unique(arr[:, 3], return_counts=True)[1])
            per_bar.extend(np.bincount(arr[:, 5], minlength=n_bars)[:n_bars])
    return capacity_from_counts(per_track), capacity_from_counts(per_bar)
