from .notelist import dump_notes, load_notes
from .remi import remi_plus_token_count
from .smf import load_smf, save_smf
from .tokens import (
    NoteEvent,
    OctupleToken,
    TokenSequence,
    decode_sequence,
    encode_score,
    quantize_events,
)
from .vocab import ATTRIBUTES, NUM_ATTRIBUTES, OctupleVocabulary

__all__ = [
    "ATTRIBUTES",
    "NUM_ATTRIBUTES",
    "NoteEvent",
    "OctupleToken",
    "OctupleVocabulary",
    "TokenSequence",
    "decode_sequence",
    "dump_notes",
    "encode_score",
    "load_notes",
    "load_smf",
    "load_score",
    "quantize_events",
    "remi_plus_token_count",
    "save_smf",
]


def load_score(path):
    """Load note events from an SMF (``.mid``/``.midi``) or JSON note list."""
    if str(path).lower().endswith(".json"):
        return load_notes(path)
    return load_smf(path)
