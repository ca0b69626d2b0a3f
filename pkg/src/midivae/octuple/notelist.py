"""JSON note-list interchange.

A file holds a JSON array of objects::

    {"pitch": 60, "velocity": 80, "onset_ticks": 0, "duration_ticks": 480,
     "instrument": 40, "tempo_bpm": 120.0, "timesig": [4, 4]}

Ticks are at 480 per quarter note. ``tempo_bpm`` and ``timesig`` are
optional and default to 120 and 4/4.
"""

from __future__ import annotations

import json
from pathlib import Path

from ..errors import MidiParseError
from .tokens import NoteEvent

KEYS = ("pitch", "velocity", "onset_ticks", "duration_ticks", "instrument", "tempo_bpm", "timesig")


def event_to_json(ev: NoteEvent) -> dict:
    return {
        "pitch": ev.pitch,
        "velocity": ev.velocity,
        "onset_ticks": ev.onset,
        "duration_ticks": ev.duration,
        "instrument": ev.instrument,
        "tempo_bpm": ev.tempo,
        "timesig": list(ev.time_signature),
    }


def event_from_json(obj: dict) -> NoteEvent:
    unknown = set(obj) - set(KEYS)
    if unknown:
        raise MidiParseError(f"unknown note keys: {sorted(unknown)}")
    try:
        return NoteEvent(
            onset=int(obj["onset_ticks"]),
            pitch=int(obj["pitch"]),
            velocity=int(obj["velocity"]),
            duration=int(obj["duration_ticks"]),
            instrument=int(obj["instrument"]),
            tempo=float(obj.get("tempo_bpm", 120.0)),
            time_signature=tuple(int(v) for v in obj.get("timesig", (4, 4))),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MidiParseError(f"malformed note object {obj!r}: {exc}") from exc


def dump_notes(events, path) -> None:
    Path(path).write_text(json.dumps([event_to_json(e) for e in events], indent=1))


def load_notes(path) -> list:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MidiParseError(f"invalid JSON note list: {exc}", exc.pos) from exc
    if not isinstance(payload, list):
        raise MidiParseError("note list must be a JSON array")
    return sorted(event_from_json(o) for o in payload)
