from .batching import batchify, collate, epoch_order
from .corpus import (
    CorpusManifest,
    Limits,
    SequenceCache,
    assign_splits,
    ingest_corpus,
    suggest_capacities,
)
from .synth import SyntheticCorpusSpec, synth_chorale_corpus, synth_piece

__all__ = [
    "CorpusManifest",
    "Limits",
    "SequenceCache",
    "SyntheticCorpusSpec",
    "assign_splits",
    "batchify",
    "collate",
    "epoch_order",
    "ingest_corpus",
    "suggest_capacities",
    "synth_chorale_corpus",
    "synth_piece",
]
