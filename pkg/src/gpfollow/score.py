"""MIDI score to a left-to-right sequence of note states.

Note-on events are grouped by onset: onsets within ``SIMULTANEITY_TOL``
seconds of the first onset of a group form one state. Each state records the
time to the next state's onset; the final state uses its longest notated
note duration.
"""
from __future__ import annotations

import bisect
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, MidiParseError

SIMULTANEITY_TOL = 0.010
DEFAULT_TEMPO = 500_000  # microseconds per quarter note (120 BPM)


def midi_to_freq(note: int) -> float:
    """Equal-tempered frequency of a MIDI note, A4 = 69 = 440 Hz."""
    if int(note) != note or not 0 <= note <= 127:
        raise ContractError(f"MIDI note {note!r} outside 0..127")
    return 440.0 * 2.0 ** ((int(note) - 69) / 12.0)


@dataclass(frozen=True)
class ScoreState:
    index: int
    midi_notes: tuple[int, ...]
    time_to_next: float

    def __post_init__(self):
        notes = tuple(sorted(set(int(n) for n in self.midi_notes)))
        if not notes:
            raise ContractError(f"state {self.index} has no notes")
        for n in notes:
            midi_to_freq(n)
        if not self.time_to_next > 0:
            raise ContractError(f"state {self.index} has non-positive time_to_next")
        object.__setattr__(self, "midi_notes", notes)
        object.__setattr__(self, "time_to_next", float(self.time_to_next))

    @property
    def fundamentals(self) -> tuple[float, ...]:
        return tuple(midi_to_freq(n) for n in self.midi_notes)


@dataclass(frozen=True)
class Score:
    states: tuple[ScoreState, ...]

    def __post_init__(self):
        states = tuple(self.states)
        if not states:
            raise ContractError("a score needs at least one state")
        for i, s in enumerate(states, 1):
            if s.index != i:
                raise ContractError(f"state indices must run 1..K, found {s.index} at position {i}")
        object.__setattr__(self, "states", states)

    @classmethod
    def from_notes(cls, notes: Sequence[Iterable[int]], times_to_next: Sequence[float] | float = 0.5):
        if np.isscalar(times_to_next):
            times_to_next = [float(times_to_next)] * len(notes)
        if len(times_to_next) != len(notes):
            raise ContractError("one duration per state is required")
        return cls(tuple(ScoreState(i, tuple(n), t)
                         for i, (n, t) in enumerate(zip(notes, times_to_next), 1)))

    @property
    def num_states(self) -> int:
        return len(self.states)

    def __len__(self):
        return len(self.states)

    def __getitem__(self, k: int) -> ScoreState:
        """1-based state lookup."""
        if not 1 <= k <= len(self.states):
            raise IndexError(k)
        return self.states[k - 1]

    @property
    def times_to_next(self) -> np.ndarray:
        return np.array([s.time_to_next for s in self.states])

    def onsets(self) -> np.ndarray:
        """Score-time onset of each state, first state at 0."""
        return np.concatenate([[0.0], np.cumsum(self.times_to_next)[:-1]])

    def distinct_note_sets(self) -> list[tuple[int, ...]]:
        seen = {}
        for s in self.states:
            seen.setdefault(s.midi_notes, None)
        return list(seen)


def apply_sustain(score: Score, depth: int) -> Score:
    """Let each state also contain the notes of up to ``depth`` preceding states."""
    if int(depth) != depth or depth < 0:
        raise ContractError("sustain depth must be a nonnegative integer")
    if depth == 0:
        return score
    out = []
    for i, s in enumerate(score.states):
        notes = set()
        for prev in score.states[max(0, i - depth): i + 1]:
            notes.update(prev.midi_notes)
        out.append(ScoreState(s.index, tuple(notes), s.time_to_next))
    return Score(tuple(out))


# -- score dump -------------------------------------------------------------

def dump_score(score: Score) -> str:
    return "".join(f"{s.index}\t{','.join(map(str, s.midi_notes))}\t{s.time_to_next!r}\n"
                   for s in score.states)


def parse_score_dump(text: str) -> Score:
    states = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            k, notes, ttn = line.split("\t")
            states.append(ScoreState(int(k), tuple(int(n) for n in notes.split(",")), float(ttn)))
        except ValueError as exc:
            raise ContractError(f"score dump line {lineno}: {exc}") from exc
    return Score(tuple(states))


# -- Standard MIDI File reading ---------------------------------------------

class _Cursor:
    def __init__(self, data: bytes, pos: int = 0, end: int | None = None):
        self.data = data
        self.pos = pos
        self.end = len(data) if end is None else end

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > self.end:
            raise MidiParseError(f"truncated {what}", self.pos)
        out = self.data[self.pos: self.pos + n]
        self.pos += n
        return out

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def varlen(self, what: str) -> int:
        start = self.pos
        value = 0
        for _ in range(4):
            b = self.u8(what)
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise MidiParseError(f"variable-length {what} longer than 4 bytes", start)


_DATA_BYTES = {0x80: 2, 0x90: 2, 0xA0: 2, 0xB0: 2, 0xC0: 1, 0xD0: 1, 0xE0: 2}


def _read_track(cur: _Cursor, tempos: list, notes: list):
    tick = 0
    status = None
    active: dict[tuple[int, int], list[int]] = {}
    while cur.pos < cur.end:
        tick += cur.varlen("delta time")
        at = cur.pos
        first = cur.u8("event")
        if first == 0xFF:
            kind = cur.u8("meta type")
            data = cur.take(cur.varlen("meta length"), "meta data")
            status = None
            if kind == 0x51:
                if len(data) != 3:
                    raise MidiParseError("set-tempo event must carry 3 bytes", at)
                tempos.append((tick, int.from_bytes(data, "big")))
            elif kind == 0x2F:
                break
            continue
        if first in (0xF0, 0xF7):
            cur.take(cur.varlen("sysex length"), "sysex data")
            status = None
            continue
        if first >= 0xF0:
            raise MidiParseError(f"unexpected system message 0x{first:02X} in track", at)
        if first & 0x80:
            status = first
            data = cur.take(_DATA_BYTES[status & 0xF0], "channel message")
        else:
            if status is None:
                raise MidiParseError("data byte without running status", at)
            data = bytes([first]) + cur.take(_DATA_BYTES[status & 0xF0] - 1, "channel message")
        if any(b & 0x80 for b in data):
            raise MidiParseError("channel message data byte >= 0x80", at)
        kind, channel = status & 0xF0, status & 0x0F
        if kind == 0x90 and data[1] > 0:
            active.setdefault((channel, data[0]), []).append(len(notes))
            notes.append([tick, data[0], None])
        elif kind == 0x80 or (kind == 0x90 and data[1] == 0):
            pending = active.get((channel, data[0]))
            if pending:
                notes[pending.pop(0)][2] = tick
    for pending in active.values():
        for i in pending:
            notes[i][2] = tick


class _TempoMap:
    def __init__(self, division: int, tempos: list[tuple[int, int]]):
        self.smpte = bool(division & 0x8000)
        if self.smpte:
            fps = 256 - (division >> 8)
            self.ticks_per_second = fps * (division & 0xFF)
            return
        self.tpq = division
        changes: dict[int, int] = {0: DEFAULT_TEMPO}
        for tick, tempo in sorted(tempos, key=lambda t: t[0]):
            changes[tick] = tempo
        self.ticks = sorted(changes)
        self.tempos = [changes[t] for t in self.ticks]
        self.seconds = [0.0]
        for i in range(1, len(self.ticks)):
            span = self.ticks[i] - self.ticks[i - 1]
            self.seconds.append(self.seconds[-1] + span * self.tempos[i - 1] / (1e6 * self.tpq))

    def to_seconds(self, tick: int) -> float:
        if self.smpte:
            return tick / self.ticks_per_second
        i = bisect.bisect_right(self.ticks, tick) - 1
        return self.seconds[i] + (tick - self.ticks[i]) * self.tempos[i] / (1e6 * self.tpq)


def read_midi_notes(data: bytes) -> list[tuple[float, int, float]]:
    """``(onset_s, midi_note, offset_s)`` for every note in an SMF, by onset."""
    data = bytes(data)
    cur = _Cursor(data)
    if cur.take(4, "header id") != b"MThd":
        raise MidiParseError("not a Standard MIDI File (missing MThd)", 0)
    length = struct.unpack(">I", cur.take(4, "header length"))[0]
    if length < 6:
        raise MidiParseError("header chunk shorter than 6 bytes", 4)
    fmt, ntracks, division = struct.unpack(">HHH", cur.take(6, "header"))
    cur.take(length - 6, "header padding")
    if fmt not in (0, 1):
        raise MidiParseError(f"unsupported SMF format {fmt}", 8)
    if division == 0:
        raise MidiParseError("zero time division", 12)
    tempos: list = []
    notes: list = []
    found = 0
    while cur.pos < len(data) and found < ntracks:
        chunk_at = cur.pos
        cid = cur.take(4, "chunk id")
        size = struct.unpack(">I", cur.take(4, "chunk length"))[0]
        if cur.pos + size > len(data):
            raise MidiParseError(f"chunk of {size} bytes runs past end of file", chunk_at)
        if cid == b"MTrk":
            _read_track(_Cursor(data, cur.pos, cur.pos + size), tempos, notes)
            found += 1
        cur.pos += size
    if found < ntracks:
        raise MidiParseError(f"header announces {ntracks} tracks, found {found}", cur.pos)
    tmap = _TempoMap(division, tempos)
    out = [(tmap.to_seconds(on), note, tmap.to_seconds(off)) for on, note, off in notes]
    out.sort(key=lambda n: (n[0], n[1]))
    return out


def parse_midi(midi_bytes: bytes, tolerance: float = SIMULTANEITY_TOL) -> Score:
    """Build a :class:`Score` from the bytes of a format 0 or 1 MIDI file."""
    notes = read_midi_notes(midi_bytes)
    if not notes:
        raise ContractError("MIDI file contains no notes")
    groups: list[list[tuple[float, int, float]]] = []
    for n in notes:
        if groups and n[0] - groups[-1][0][0] <= tolerance:
            groups[-1].append(n)
        else:
            groups.append([n])
    onsets = [g[0][0] for g in groups]
    states = []
    for i, g in enumerate(groups):
        if i + 1 < len(groups):
            ttn = onsets[i + 1] - onsets[i]
        else:
            ttn = max(off - onsets[i] for _, _, off in g)
            if not ttn > 0:
                raise ContractError("final state has zero notated duration")
        states.append(ScoreState(i + 1, tuple(n for _, n, _ in g), ttn))
    return Score(tuple(states))


def read_midi(path) -> Score:
    return parse_midi(Path(path).read_bytes())


def _varlen(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


def write_midi(score: Score, bpm: float = 120.0, ticks_per_beat: int = 480,
               velocity: int = 80) -> bytes:
    """Format-0 file playing each state legato for its ``time_to_next``."""
    tempo = int(round(60e6 / bpm))
    ticks_per_sec = ticks_per_beat * 1e6 / tempo
    events = []  # (tick, order, bytes); note-offs sort before note-ons
    t = 0.0
    for s in score.states:
        on = int(round(t * ticks_per_sec))
        off = int(round((t + s.time_to_next) * ticks_per_sec))
        for n in s.midi_notes:
            events.append((on, 1, bytes([0x90, n, velocity])))
            events.append((off, 0, bytes([0x80, n, 0])))
        t += s.time_to_next
    events.sort(key=lambda e: (e[0], e[1]))
    body = bytearray(b"\x00\xFF\x51\x03" + tempo.to_bytes(3, "big"))
    last = 0
    for tick, _, msg in events:
        body += _varlen(tick - last) + msg
        last = tick
    body += b"\x00\xFF\x2F\x00"
    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, ticks_per_beat)
    return header + b"MTrk" + struct.pack(">I", len(body)) + bytes(body)
