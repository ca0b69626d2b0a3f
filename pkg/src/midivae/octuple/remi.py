"""Length of a score under a REMI+-style event tokenization.

Used only as the baseline in the sequence-length comparison. The scheme:

* one ``Bar`` event for every bar from the first up to the last sounding bar,
* one ``Position`` event per distinct onset (bar, position) shared by all
  instruments sounding there,
* ``Instrument``, ``Pitch``, ``Velocity``, ``Duration`` for every note,
* ``Tempo`` and ``TimeSig`` events at the first onset and wherever the value
  changes.
"""

from __future__ import annotations

from .vocab import OctupleVocabulary
from .tokens import _div_round_half_down

NOTE_EVENTS = ("instrument", "pitch", "velocity", "duration")


def remi_plus_token_count(events, vocab: OctupleVocabulary | None = None) -> int:
    events = sorted(events, key=lambda e: e.onset)
    if not events:
        return 0
    vocab = vocab or OctupleVocabulary()
    onsets = set()
    for ev in events:
        slot = vocab.slot_ticks_for(tuple(ev.time_signature))
        onsets.add(divmod(_div_round_half_down(ev.onset, slot), vocab.positions_per_bar))
    n_bars = max(bar for bar, _ in onsets) + 1

    changes = 0
    last_tempo = last_ts = None
    for ev in events:
        if ev.tempo != last_tempo:
            changes += 1
            last_tempo = ev.tempo
        if tuple(ev.time_signature) != last_ts:
            changes += 1
            last_ts = tuple(ev.time_signature)
    return n_bars + len(onsets) + len(NOTE_EVENTS) * len(events) + changes
