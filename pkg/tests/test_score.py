import io

import mido
import pytest
from hypothesis import given, settings, strategies as st

from gpfollow.errors import ContractError, MidiParseError
from gpfollow.score import (Score, ScoreState, apply_sustain, dump_score, midi_to_freq,
                            parse_midi, parse_score_dump, read_midi_notes, write_midi)


def _encode(tracks, ticks_per_beat=480, type=None):
    """Encode note lists with mido; each track is a list of (delta, message)."""
    mf = mido.MidiFile(ticks_per_beat=ticks_per_beat, type=type if type is not None else
                       (0 if len(tracks) == 1 else 1))
    for events in tracks:
        tr = mido.MidiTrack()
        for delta, msg in events:
            tr.append(msg.copy(time=delta))
        mf.tracks.append(tr)
    buf = io.BytesIO()
    mf.save(file=buf)
    return buf.getvalue()


def on(n, v=64):
    return mido.Message("note_on", note=n, velocity=v)


def off(n):
    return mido.Message("note_off", note=n)


def test_midi_to_freq():
    assert midi_to_freq(69) == 440.0
    assert midi_to_freq(60) == pytest.approx(261.6255653005986)
    assert midi_to_freq(81) == pytest.approx(880.0)
    with pytest.raises(ContractError):
        midi_to_freq(128)


def test_chord_grouping_and_durations():
    # 120 BPM, 480 tpb: 1 tick = 1/960 s; 9 ticks = 9.4 ms is simultaneous, 11 ticks is not
    data = _encode([[(0, on(60)), (9, on(64)), (471, off(60)), (0, off(64)),
                     (0, on(67)), (11, on(71)), (949, off(67)), (0, off(71))]])
    score = parse_midi(data)
    assert [s.midi_notes for s in score.states] == [(60, 64), (67,), (71,)]
    assert score[1].time_to_next == pytest.approx(0.5)
    assert score[2].time_to_next == pytest.approx(11 / 960)
    assert score[3].time_to_next == pytest.approx(949 / 960)
    assert score[1].fundamentals == (midi_to_freq(60), midi_to_freq(64))


def test_tempo_map_across_tracks():
    conductor = [(0, mido.MetaMessage("set_tempo", tempo=500000)),
                 (960, mido.MetaMessage("set_tempo", tempo=1000000))]
    notes = [(0, on(60)), (960, off(60)), (0, on(62)), (960, off(62)), (0, on(64)), (480, off(64))]
    score = parse_midi(_encode([conductor, notes]))
    # first two beats at 0.5 s per beat, then 1 s per beat
    assert score.times_to_next.tolist() == pytest.approx([1.0, 2.0, 1.0])


def test_note_on_velocity_zero_is_note_off_and_rests_add_time():
    data = _encode([[(0, on(60)), (480, on(60, 0)), (480, on(62)), (480, off(62))]])
    score = parse_midi(data)
    assert [s.midi_notes for s in score.states] == [(60,), (62,)]
    assert score[1].time_to_next == pytest.approx(1.0)


def test_running_status_and_smpte_division():
    # 25 fps x 40 ticks per frame = 1000 ticks per second
    track = bytes([0x00, 0x90, 60, 64, 0x83, 0x74, 60, 0,   # running status note-off at 500 ticks
                   0x00, 62, 64, 0x87, 0x68, 0x80, 62, 0,   # 1000 ticks later
                   0x00, 0xFF, 0x2F, 0x00])
    header = b"MThd" + (6).to_bytes(4, "big") + bytes([0, 0, 0, 1, 0xE7, 40])
    data = header + b"MTrk" + len(track).to_bytes(4, "big") + track
    score = parse_midi(data)
    assert [s.midi_notes for s in score.states] == [(60,), (62,)]
    assert score.times_to_next.tolist() == pytest.approx([0.5, 1.0])


def test_sysex_and_meta_events_are_skipped():
    data = _encode([[(0, mido.MetaMessage("track_name", name="piano")),
                     (0, mido.Message("sysex", data=[1, 2, 3])),
                     (0, mido.Message("control_change", control=64, value=127)),
                     (0, on(60)), (480, off(60))]])
    assert parse_midi(data)[1].midi_notes == (60,)


def test_parser_agrees_with_mido_on_note_times():
    data = _encode([[(0, mido.MetaMessage("set_tempo", tempo=750000)),
                     (0, on(60)), (100, on(67)), (300, off(60)), (50, on(72)),
                     (500, off(67)), (10, off(72))]], ticks_per_beat=96)
    ours = [(round(t, 9), n) for t, n, _ in read_midi_notes(data)]
    t, theirs = 0.0, []
    for msg in mido.MidiFile(file=io.BytesIO(data)):
        t += msg.time
        if msg.type == "note_on" and msg.velocity > 0:
            theirs.append((round(t, 9), msg.note))
    assert ours == theirs


@pytest.mark.parametrize("data,offset", [
    (b"RIFF" + bytes(10), 0),
    (b"MThd" + (6).to_bytes(4, "big") + bytes([0, 2, 0, 1, 1, 0xE0]), 8),
    (b"MThd" + (6).to_bytes(4, "big") + bytes([0, 0, 0, 1, 0, 0]), 12),
    (b"MThd" + (6).to_bytes(4, "big") + bytes([0, 0, 0, 1, 1, 0xE0]) + b"MTrk" + (50).to_bytes(4, "big"), 14),
])
def test_malformed_headers_report_offsets(data, offset):
    with pytest.raises(MidiParseError) as info:
        parse_midi(data)
    assert info.value.offset == offset
    assert f"offset {offset}" in str(info.value)


def test_data_byte_without_status_reports_offset():
    track = bytes([0x00, 60, 64])
    header = b"MThd" + (6).to_bytes(4, "big") + bytes([0, 0, 0, 1, 1, 0xE0])
    with pytest.raises(MidiParseError) as info:
        parse_midi(header + b"MTrk" + len(track).to_bytes(4, "big") + track)
    assert info.value.offset == 23


def test_missing_tracks():
    header = b"MThd" + (6).to_bytes(4, "big") + bytes([0, 1, 0, 2, 1, 0xE0])
    track = bytes([0x00, 0xFF, 0x2F, 0x00])
    with pytest.raises(MidiParseError, match="announces 2 tracks"):
        parse_midi(header + b"MTrk" + len(track).to_bytes(4, "big") + track)


def test_file_without_notes():
    with pytest.raises(ContractError):
        parse_midi(_encode([[(0, mido.MetaMessage("set_tempo", tempo=500000))]]))


def test_state_and_score_validation():
    with pytest.raises(ContractError):
        ScoreState(1, (), 0.5)
    with pytest.raises(ContractError):
        ScoreState(1, (60,), 0.0)
    with pytest.raises(ContractError):
        Score((ScoreState(2, (60,), 0.5),))
    with pytest.raises(ContractError):
        Score(())


def test_dump_round_trip():
    score = Score.from_notes([[60, 64], [62], [55, 59, 62]], [0.25, 1 / 3, 1.5])
    text = dump_score(score)
    assert text.splitlines()[0] == "1\t60,64\t0.25"
    assert parse_score_dump(text) == score


def test_sustain_accumulates_previous_states():
    score = Score.from_notes([[60], [62], [64], [65]], 0.5)
    assert apply_sustain(score, 0) == score
    held = apply_sustain(score, 2)
    assert [s.midi_notes for s in held.states] == [(60,), (60, 62), (60, 62, 64), (62, 64, 65)]
    with pytest.raises(ContractError):
        apply_sustain(score, -1)


def test_onsets():
    score = Score.from_notes([[60], [62], [64]], [0.5, 0.25, 1.0])
    assert score.onsets().tolist() == [0.0, 0.5, 0.75]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.lists(st.integers(21, 108), min_size=1, max_size=3),
                          st.integers(12, 2000)), min_size=1, max_size=12))
def test_write_then_parse_round_trip(states):
    # durations in ticks at 960 ticks per second, so they survive quantization
    score = Score.from_notes([n for n, _ in states], [t / 960 for _, t in states])
    back = parse_midi(write_midi(score))
    assert [s.midi_notes for s in back.states] == [s.midi_notes for s in score.states]
    assert back.times_to_next == pytest.approx(score.times_to_next, abs=1e-12)


def test_written_file_is_readable_by_mido():
    score = Score.from_notes([[60], [64, 67]], [0.5, 1.0])
    mf = mido.MidiFile(file=io.BytesIO(write_midi(score)))
    assert mf.length == pytest.approx(1.5)
