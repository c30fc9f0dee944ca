import csv
import io

import numpy as np
import pytest

from helpers import melody_score, write_piece
from gpfollow.audio import read_wav, write_wav
from gpfollow.cli import main
from gpfollow.kernel import envelope_weight, parse_params
from gpfollow.score import dump_score
from gpfollow.synth import harmonic_frame
from gpfollow.viterbi import read_trace

FS = 44100


@pytest.fixture(scope="module")
def piece(tmp_path_factory):
    return write_piece(tmp_path_factory.mktemp("cli"))


def partials(path, f0s, B=0.0, seconds=1.0, weights=None, seed=0):
    t = np.arange(int(FS * seconds)) / FS
    rng = np.random.default_rng(seed)
    m = np.arange(1, 10)
    # amplitude sqrt(2 w E_m) gives harmonic variance w E_m
    env = np.sqrt(2 * envelope_weight(m, 0.465, 2.37))
    weights = weights or [1.0] * len(f0s)
    y = np.zeros(t.size)
    for f0, w in zip(f0s, weights):
        for mm, a in zip(m, env):
            y += np.sqrt(w) * a * np.cos(2 * np.pi * mm * f0 * np.sqrt(1 + B * mm * mm) * t + rng.uniform(0, 6.3))
    write_wav(path, 0.3 * y / np.abs(y).max(), FS, float32=True)
    return path


def test_dump_score(piece, capsys):
    assert main(["dump-score", "--score", str(piece[0])]) == 0
    assert capsys.readouterr().out == dump_score(melody_score())


def test_follow_prints_trace(piece, capsys):
    assert main(["follow", "--score", str(piece[0]), "--audio", str(piece[1])]) == 0
    out = capsys.readouterr()
    trace = read_trace(io.StringIO(out.out))
    assert trace.states[-1] == 10 and len(trace) == len(piece[2])
    assert "frames" in out.err


def test_follow_writes_trace_file(piece, tmp_path, capsys):
    path = tmp_path / "trace.tsv"
    assert main(["follow", "--score", str(piece[0]), "--audio", str(piece[1]), "--trace", str(path)]) == 0
    assert capsys.readouterr().out == ""
    assert read_trace(path.open()).states[-1] == 10


@pytest.mark.parametrize("argv, code", [
    (["follow", "--score", "x.mid"], 1),
    (["follow", "--score", "x.mid", "--audio", "y.wav", "--sigma-n", "0"], 1),
    (["follow", "--score", "x.mid", "--audio", "y.wav", "--udp", "nocolon"], 1),
    (["nonsense"], 1),
    ([], 1),
])
def test_usage_errors_exit_1(argv, code, capsys):
    assert main(argv) == code


def test_missing_files_exit_2(piece, tmp_path, capsys):
    assert main(["follow", "--score", str(tmp_path / "no.mid"), "--audio", str(piece[1])]) == 2
    assert main(["dump-score", "--score", str(tmp_path / "no.mid")]) == 2
    assert main(["sweep", "--audio", str(tmp_path / "no.wav")]) == 2
    assert "error:" in capsys.readouterr().err


def test_sweep_csv(tmp_path, capsys):
    path = tmp_path / "a.wav"
    write_wav(path, harmonic_frame(440.0, 4000, FS, seed=3), FS, float32=True)
    assert main(["sweep", "--audio", str(path), "--grid", "220,440,466.16,880"]) == 0
    out = capsys.readouterr()
    rows = list(csv.DictReader(io.StringIO(out.out)))
    assert [float(r["frequency"]) for r in rows] == [220, 440, 466.16, 880]
    best = max(rows, key=lambda r: float(r["lml"]))
    assert float(best["frequency"]) == 440.0
    assert "argmax 440" in out.err


def test_sweep_window_past_end(tmp_path, capsys):
    path = tmp_path / "a.wav"
    write_wav(path, np.ones(100), FS)
    assert main(["sweep", "--audio", str(path)]) == 1


def test_fit_inharmonicity_prints_config_line(tmp_path, capsys):
    path = partials(tmp_path / "a3.wav", [220.0], B=4e-4)
    assert main(["fit-inharmonicity", "--audio", str(path), "--midi", "57", "--window", "44100"]) == 0
    params = parse_params(capsys.readouterr().out)
    assert params.inharmonicity[57] == pytest.approx(4e-4, rel=0.05)


def test_fit_inharmonicity_needs_a_pitch(tmp_path, capsys):
    path = partials(tmp_path / "a.wav", [220.0])
    assert main(["fit-inharmonicity", "--audio", str(path)]) == 1


def test_fit_envelope(tmp_path, capsys):
    paths = [partials(tmp_path / f"{f0}.wav", [f0], seed=i) for i, f0 in enumerate((196.0, 261.63, 392.0))]
    argv = ["fit-envelope", "--T", "1.0", "--v", "1.5", "--window", "44100"]
    for p, f0 in zip(paths, (196.0, 261.63, 392.0)):
        argv += ["--audio", str(p), "--f0", str(f0)]
    assert main(argv) == 0
    params = parse_params(capsys.readouterr().out)
    assert params.envelope_T == pytest.approx(0.465, rel=0.1)
    assert params.envelope_v == pytest.approx(2.37, rel=0.1)


def test_fit_envelope_mismatched_lists(tmp_path, capsys):
    path = partials(tmp_path / "a.wav", [220.0])
    assert main(["fit-envelope", "--audio", str(path), "--f0", "220", "--f0", "330"]) == 1


def test_estimate_weights(tmp_path, capsys):
    path = partials(tmp_path / "chord.wav", [196.0, 293.66], weights=[0.2, 0.8])
    assert main(["estimate-weights", "--audio", str(path), "--f0", "196,293.66",
                 "--window", "44100", "--sigma-f", "2"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [float(r["weight"]) for r in rows] == pytest.approx([0.2, 0.8], abs=0.02)


def test_render(piece, tmp_path, capsys):
    out = tmp_path / "r.wav"
    assert main(["render", "--score", str(piece[0]), "--output", str(out), "--stretch", "2", "--float32"]) == 0
    pcm, rate = read_wav(out)
    assert rate == FS and pcm.size == pytest.approx(2 * 5.0 * FS, abs=1)


def test_info(capsys):
    assert main(["info"]) == 0
    assert capsys.readouterr().out.startswith("backend ")


def test_render_amplitude_laws(piece, tmp_path, capsys):
    a, b = tmp_path / "a.wav", tmp_path / "b.wav"
    assert main(["render", "--score", str(piece[0]), "--output", str(a), "--float32"]) == 0
    assert main(["render", "--score", str(piece[0]), "--output", str(b), "--float32", "--law", "variance"]) == 0
    assert not np.array_equal(read_wav(a)[0], read_wav(b)[0])
    assert main(["render", "--score", str(piece[0]), "--output", str(b), "--law", "cubic"]) == 1
