"""Minimal Standard MIDI File reader and writer (formats 0 and 1).

Only what the tokenizer needs is interpreted: note on/off, program change,
set-tempo and time-signature meta events. Everything else is parsed for
framing and then ignored.
"""

from __future__ import annotations

import logging
import struct
from collections import defaultdict, deque
from pathlib import Path

from ..errors import MidiParseError, UnsupportedFormatError
from .tokens import NoteEvent

log = logging.getLogger(__name__)

DEFAULT_TPQ = 480
DEFAULT_MPQN = 500_000  # 120 bpm

# ordering of simultaneous events once tracks are merged
_PRIO_CONTROL, _PRIO_OFF, _PRIO_ON = 0, 1, 2


class _Reader:
    def __init__(self, data: bytes, start: int = 0, end: int | None = None):
        self.data = data
        self.pos = start
        self.end = len(data) if end is None else end

    def byte(self) -> int:
        if self.pos >= self.end:
            raise MidiParseError("unexpected end of chunk", self.pos)
        b = self.data[self.pos]
        self.pos += 1
        return b

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise MidiParseError(f"truncated data, wanted {n} bytes", self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def varlen(self) -> int:
        value = 0
        for _ in range(4):
            b = self.byte()
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise MidiParseError("variable-length quantity longer than 4 bytes", self.pos)


def _parse_track(data: bytes, start: int, end: int, track_no: int):
    """Yield (tick, priority, kind, payload) tuples plus the end tick."""
    r = _Reader(data, start, end)
    tick = 0
    status = None
    events = []
    while r.pos < r.end:
        tick += r.varlen()
        offset = r.pos
        b = r.byte()
        if b == 0xFF:
            mtype = r.byte()
            body = r.take(r.varlen())
            if mtype == 0x2F:
                break
            if mtype == 0x51:
                if len(body) != 3:
                    raise MidiParseError("set-tempo meta event must carry 3 bytes", offset)
                events.append((tick, _PRIO_CONTROL, "tempo", int.from_bytes(body, "big")))
            elif mtype == 0x58:
                if len(body) < 2:
                    raise MidiParseError("time-signature meta event too short", offset)
                events.append((tick, _PRIO_CONTROL, "timesig", (body[0], 2 ** body[1])))
            status = None
            continue
        if b in (0xF0, 0xF7):
            r.take(r.varlen())
            status = None
            continue
        if b & 0x80:
            status = b
            first = r.byte()
        else:
            if status is None:
                raise MidiParseError("data byte without running status", offset)
            first = b
        kind = status & 0xF0
        channel = status & 0x0F
        if kind in (0xC0, 0xD0):
            if kind == 0xC0:
                events.append((tick, _PRIO_CONTROL, "program", (channel, first)))
            continue
        if kind < 0x80 or kind > 0xE0:
            raise MidiParseError(f"invalid status byte 0x{status:02X}", offset)
        second = r.byte()
        if kind == 0x90 and second > 0:
            events.append((tick, _PRIO_ON, "on", (channel, first, second)))
        elif kind in (0x80, 0x90):
            events.append((tick, _PRIO_OFF, "off", (channel, first)))
    return events, tick


def _at(timeline, tick, default):
    value = default
    for t, v in timeline:
        if t > tick:
            break
        value = v
    return value


def load_smf(path, ticks_per_quarter: int = DEFAULT_TPQ) -> list:
    """Read note events from a Standard MIDI File.

    Onsets and durations are rescaled to ``ticks_per_quarter``. Note-ons
    left open are closed at the end of their track; a note's instrument is
    the program most recently set on its channel (default 0).
    """
    data = Path(path).read_bytes()
    if len(data) < 14 or data[:4] != b"MThd":
        raise MidiParseError("missing MThd header chunk", 0)
    (hlen,) = struct.unpack(">I", data[4:8])
    if hlen < 6 or 8 + hlen > len(data):
        raise MidiParseError(f"bad header length {hlen}", 4)
    fmt, ntracks, division = struct.unpack(">HHH", data[8:14])
    if fmt == 2:
        raise UnsupportedFormatError("SMF format 2 is not supported")
    if fmt > 2:
        raise MidiParseError(f"unknown SMF format {fmt}", 8)
    if division & 0x8000:
        raise UnsupportedFormatError("SMPTE time division is not supported")
    if division == 0:
        raise MidiParseError("zero ticks-per-quarter division", 12)

    pos = 8 + hlen
    merged = []
    track_end = {}
    seq = 0
    for track_no in range(ntracks):
        # skip unknown chunk types between tracks
        while True:
            if pos + 8 > len(data):
                raise MidiParseError(f"missing track chunk {track_no}", pos)
            ctype = data[pos:pos + 4]
            (clen,) = struct.unpack(">I", data[pos + 4:pos + 8])
            if pos + 8 + clen > len(data):
                raise MidiParseError(f"chunk length {clen} overruns file", pos + 4)
            if ctype == b"MTrk":
                break
            if not ctype.isascii():
                raise MidiParseError("invalid chunk type", pos)
            pos += 8 + clen
        events, end_tick = _parse_track(data, pos + 8, pos + 8 + clen, track_no)
        track_end[track_no] = end_tick
        for tick, prio, kind, payload in events:
            merged.append((tick, prio, seq, track_no, kind, payload))
            seq += 1
        pos += 8 + clen

    def scale(t):
        return (t * ticks_per_quarter + division // 2) // division

    merged.sort()
    tempos, timesigs = [], []
    programs = [0] * 16
    open_notes = defaultdict(deque)
    raw = []
    for tick, _, _, track_no, kind, payload in merged:
        if kind == "tempo":
            tempos.append((tick, payload))
        elif kind == "timesig":
            timesigs.append((tick, payload))
        elif kind == "program":
            programs[payload[0]] = payload[1]
        elif kind == "on":
            channel, pitch, vel = payload
            open_notes[(track_no, channel, pitch)].append((tick, vel, programs[channel]))
        else:
            channel, pitch = payload
            queue = open_notes.get((track_no, channel, pitch))
            if queue:
                start, vel, prog = queue.popleft()
                raw.append((start, tick, pitch, vel, prog))
    for (track_no, _, pitch), queue in open_notes.items():
        for start, vel, prog in queue:
            log.debug("closing unpaired note %d at end of track %d", pitch, track_no)
            raw.append((start, max(track_end[track_no], start), pitch, vel, prog))

    notes = []
    for start, stop, pitch, vel, prog in raw:
        onset = scale(start)
        notes.append(
            NoteEvent(
                onset=onset,
                pitch=pitch,
                velocity=vel,
                duration=max(1, scale(stop) - onset),
                instrument=prog,
                tempo=60_000_000 / _at(tempos, start, DEFAULT_MPQN),
                time_signature=_at(timesigs, start, (4, 4)),
            )
        )
    notes.sort()
    return notes


# writing -----------------------------------------------------------------


def _varlen(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def _track_chunk(timed_events) -> bytes:
    """``timed_events``: iterable of (tick, sort_rank, raw_bytes)."""
    body = bytearray()
    last = 0
    for tick, _, raw in sorted(timed_events, key=lambda e: (e[0], e[1])):
        body += _varlen(tick - last) + raw
        last = tick
    body += b"\x00\xff\x2f\x00"
    return b"MTrk" + struct.pack(">I", len(body)) + bytes(body)


def _tempo_bytes(bpm: float) -> bytes:
    mpqn = max(1, min(0xFFFFFF, round(60_000_000 / bpm)))
    return b"\xff\x51\x03" + mpqn.to_bytes(3, "big")


def _timesig_bytes(ts) -> bytes:
    num, den = ts
    return b"\xff\x58\x04" + bytes([num, den.bit_length() - 1, 24, 8])


def _changes(events, attr):
    """Values of ``attr`` at each distinct onset, recorded where they change."""
    out = []
    current = None
    for ev in sorted(events, key=lambda e: e.onset):
        value = getattr(ev, attr)
        if value != current and (not out or out[-1][0] != ev.onset):
            out.append((ev.onset, value))
            current = value
    if out:
        out[0] = (0, out[0][1])
    return out


def save_smf(events, path, ticks_per_quarter: int = DEFAULT_TPQ) -> None:
    """Write events as SMF format 1: a meta track, then one track per instrument.

    Tempo is stored as integer microseconds per quarter note, so tempos
    round-trip exactly when ``60e6 / bpm`` is an integer.
    """
    events = list(events)
    meta = []
    tempos = _changes(events, "tempo") or [(0, 120.0)]
    timesigs = _changes(events, "time_signature") or [(0, (4, 4))]
    for tick, bpm in tempos:
        meta.append((tick, 0, _tempo_bytes(bpm)))
    for tick, ts in timesigs:
        meta.append((tick, 0, _timesig_bytes(ts)))
    chunks = [_track_chunk(meta)]

    by_program = defaultdict(list)
    for ev in events:
        by_program[ev.instrument].append(ev)
    channels = [c for c in range(16) if c != 9]
    if len(by_program) > len(channels):
        raise UnsupportedFormatError(f"{len(by_program)} instruments exceed 15 melodic channels")
    for channel, program in zip(channels, sorted(by_program)):
        timed = [(0, 0, bytes([0xC0 | channel, program]))]
        for ev in by_program[program]:
            timed.append((ev.onset, 2, bytes([0x90 | channel, ev.pitch, ev.velocity])))
            timed.append((ev.onset + ev.duration, 1, bytes([0x80 | channel, ev.pitch, 0])))
        chunks.append(_track_chunk(timed))

    header = b"MThd" + struct.pack(">IHHH", 6, 1, len(chunks), ticks_per_quarter)
    Path(path).write_bytes(header + b"".join(chunks))
