"""Shared fixtures-by-function for the test suite."""
import numpy as np

from gpfollow.audio import FrameConfig, slice_wav, write_wav
from gpfollow.score import Score, write_midi
from gpfollow.synth import ground_truth, render_score

# ten states, one repeated pitch so that note boundaries inside the repeat
# can only be placed by the duration model
MELODY = [60, 62, 64, 65, 67, 67, 69, 65, 64, 62]
NOTE_SECONDS = 0.5


def melody_score() -> Score:
    return Score.from_notes([[n] for n in MELODY], NOTE_SECONDS)


def write_piece(tmp_path, *, stretch=1.0, seed=0, snr_db=20.0, name="piece"):
    """Render the melody to WAV next to its MIDI file; returns paths and truth."""
    score = melody_score()
    midi_path = tmp_path / f"{name}.mid"
    wav_path = tmp_path / f"{name}_{stretch}_{seed}.wav"
    midi_path.write_bytes(write_midi(score))
    pcm = render_score(score, 44100.0, stretch=stretch, snr_db=snr_db, seed=seed)
    write_wav(wav_path, pcm, 44100, float32=True)
    cfg = FrameConfig()
    frames = slice_wav(pcm.astype(np.float32).astype(np.float64), cfg)
    truth = dict(zip([f.frame_index for f in frames], ground_truth(frames, score, cfg, stretch)))
    return midi_path, wav_path, truth, pcm.size / 44100.0


def accuracy(trace, truth) -> float:
    hits = [truth[frame] == state for frame, state, _ in trace]
    return float(np.mean(hits)) if hits else 0.0
