import io
import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpfollow import _core
from gpfollow._core import _fallback
from gpfollow.duration import DurationModel
from gpfollow.errors import ContractError
from gpfollow.score import Score
from gpfollow.viterbi import (AlignmentTrace, DecoderConfig, WindowedViterbi, decoder_init,
                              decoder_step, format_trace, full_viterbi, path_log_prob,
                              read_trace, static_log_r, viterbi_path, write_trace)

STATIC = DurationModel(adaptive=False)


def monotone_paths(n_frames, n_states):
    for steps in itertools.product((0, 1), repeat=n_frames - 1):
        path = [1]
        for s in steps:
            path.append(path[-1] + s)
        if path[-1] <= n_states:
            yield path


def brute_force(emissions, log_r, duration=True):
    best, arg = -np.inf, None
    for p in monotone_paths(*emissions.shape):
        v = path_log_prob(p, emissions, log_r, duration)
        if v > best:
            best, arg = v, p
    return arg, best


def run_windowed(score_ttn, lmls, frame_rate, config, duration=STATIC):
    dec = WindowedViterbi(score_ttn, frame_rate, config, duration)
    out = []
    for row in lmls:
        out.append(dec.step({k: row[k - 1] for k in dec.window_states}))
    return out, dec


def test_init_state():
    dec = decoder_init(Score.from_notes([[60], [62], [64]], 0.5), 10.0)
    assert dec.current_estimate == 1 and dec.frame_count == 0 and dec.window_start == 1
    assert dec.log_probs.tolist() == [0.0, -np.inf, -np.inf]
    assert dec.run_lengths.tolist() == [0, 0, 0]


def test_window_clamped_to_short_score():
    dec = WindowedViterbi([0.5, 0.5], 10.0, DecoderConfig(6, 4))
    assert list(dec.window_states) == [1, 2]
    one = WindowedViterbi([0.5], 10.0)
    for lml in (-5.0, 100.0, 0.0):
        assert one.step({1: lml}) == 1


def test_strong_evidence_moves_to_second_state():
    dec = WindowedViterbi([0.5, 0.5], 10.0)
    assert decoder_step(dec, {1: 0.0, 2: 0.0})[1] == 1  # first frame is pinned to state 1
    assert decoder_step(dec, {1: -1000.0, 2: 1000.0})[1] == 2


def test_missing_window_lml():
    dec = WindowedViterbi([0.5, 0.5, 0.5], 10.0)
    with pytest.raises(ContractError):
        dec.step({1: 0.0, 2: 0.0})
    with pytest.raises(ContractError):
        dec.step(np.zeros(2))


def test_windowed_equals_full_viterbi_prefix():
    rng = np.random.default_rng(11)
    for _ in range(60):
        K, N = int(rng.integers(1, 9)), int(rng.integers(1, 41))
        ttn = rng.uniform(0.1, 1.0, K)
        lmls = rng.normal(0, 3, (N, K))
        est, _ = run_windowed(ttn, lmls, 10.0, DecoderConfig(K + 2, 1))
        for n in range(N):
            path, _ = viterbi_path(lmls[:n + 1], static_log_r(ttn, 10.0, n + 1, STATIC))
            assert est[n] == path[-1]


@pytest.mark.parametrize("duration", [True, False])
def test_full_viterbi_equals_enumeration(duration):
    rng = np.random.default_rng(5)
    for _ in range(40):
        K, N = int(rng.integers(1, 5)), int(rng.integers(1, 9))
        E = rng.normal(0, 2, (N, K))
        lr = np.log(rng.uniform(0.2, 0.95, (N, K)))
        path, value = viterbi_path(E, lr, duration)
        _, best = brute_force(E, lr, duration)
        assert value == pytest.approx(best, abs=1e-9)
        assert path_log_prob(path, E, lr, duration) == pytest.approx(best, abs=1e-9)


def test_full_viterbi_small_hand_case():
    # 3 states x 6 frames, constant p_self = 0.5
    E = np.log(np.array([[.9, .05, .05], [.8, .1, .1], [.1, .8, .1],
                         [.1, .7, .2], [.1, .2, .7], [.05, .05, .9]]))
    score = Score.from_notes([[60], [62], [64]], 0.5)
    dm = DurationModel(state_duration=False, fallback_p_self=0.5)
    assert len(list(monotone_paths(6, 3))) == 16
    assert full_viterbi(score, E, 10.0, dm) == [1, 1, 2, 2, 3, 3]
    assert full_viterbi(score, E[:1], 10.0, dm) == [1]
    with pytest.raises(ContractError):
        full_viterbi(score, np.zeros((0, 3)), 10.0)


def test_uniform_emissions_follow_the_transition_model():
    score = Score.from_notes([[60]] * 3, 0.2)  # E[Z] = 2 at 10 frames/s
    E = np.zeros((6, 3))
    path = full_viterbi(score, E, 10.0, STATIC)
    lr = static_log_r(score.times_to_next, 10.0, 6, STATIC)
    assert path == brute_force(E, lr)[0]
    assert all(path.count(k) >= 1 for k in set(path))


def test_window_advances_by_threshold_rule():
    K = 12
    cfg = DecoderConfig(6, 4)
    dec = WindowedViterbi([0.5] * K, 10.0, cfg, STATIC)
    starts = []
    for target in [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 12, 12]:
        lmls = {k: (50.0 if k == target else -50.0) for k in dec.window_states}
        est = dec.step(lmls)
        assert est in dec.window_states
        starts.append(dec.window_start)
    assert starts == sorted(starts)
    assert starts[-1] == K - 6 + 1
    assert dec.current_estimate == K


def test_windowed_estimates_are_legal_steps():
    rng = np.random.default_rng(2)
    lmls = rng.normal(0, 5, (60, 15))
    est, dec = run_windowed([0.3] * 15, lmls, 10.0, DecoderConfig(6, 4))
    assert all(b - a >= -(6 - 1) for a, b in zip(est, est[1:]))
    assert not np.any(np.isnan(dec.lattice))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(-1e3, 1e3), frame=st.integers(0, 19))
def test_constant_shift_of_one_frame(seed, c, frame):
    rng = np.random.default_rng(seed)
    lmls = rng.normal(0, 3, (20, 7)).round(3)
    shifted = lmls.copy()
    shifted[frame] += c
    a, da = run_windowed([0.4] * 7, lmls, 10.0, DecoderConfig(8, 4))
    b, db = run_windowed([0.4] * 7, shifted, 10.0, DecoderConfig(8, 4))
    assert a == b
    finite = np.isfinite(da.lattice)
    assert np.array_equal(finite, np.isfinite(db.lattice))
    assert np.allclose(db.lattice[finite] - da.lattice[finite], c, atol=1e-9 * (1 + abs(c)))


def test_tempo_tracker_records_completed_notes():
    dec = WindowedViterbi([0.5] * 4, 10.0, DecoderConfig(6, 4), DurationModel())
    for target, frames in [(1, 3), (2, 7), (3, 2)]:
        for _ in range(frames):
            dec.step({k: (80.0 if k == target else -80.0) for k in dec.window_states})
    assert list(dec.tracker.history) == [(3, 0.5), (7, 0.5)]


def test_path_log_prob_rejects_illegal_paths():
    E = np.zeros((3, 3))
    lr = np.full((3, 3), np.log(0.5))
    assert path_log_prob([2, 2, 2], E, lr) == -np.inf
    assert path_log_prob([1, 3, 3], E, lr) == -np.inf


def test_trace_round_trip():
    trace = AlignmentTrace()
    assert format_trace(trace) == ""
    trace.append(0, 1, -12.3456789)
    assert format_trace(trace) == "0\t1\t-12.345679\n"
    trace.append(4, 2, 1234.5)
    text = format_trace(trace)
    back = read_trace(io.StringIO(text))
    assert format_trace(back) == text
    assert back.states == [1, 2]
    with pytest.raises(ContractError):
        read_trace("1\t2\n")


def test_trace_write_failure_propagates():
    class Broken:
        def write(self, _):
            raise OSError("disk full")

    t = AlignmentTrace()
    t.append(0, 1, 0.0)
    with pytest.raises(OSError):
        write_trace(t, Broken())


# -- compiled vs numpy backends ----------------------------------------------

ext = pytest.importorskip("gpfollow._core._ext") if _core.BACKEND == "compiled" else None


@pytest.mark.skipif(ext is None, reason="compiled core not built")
@pytest.mark.parametrize("duration", [True, False])
def test_backends_agree_on_viterbi(duration):
    rng = np.random.default_rng(9)
    for _ in range(20):
        K, N = int(rng.integers(1, 10)), int(rng.integers(1, 50))
        E = rng.normal(0, 4, (N, K))
        lr = np.log(rng.uniform(0.3, 0.99, (N, K)))
        bp_a, fin_a = ext.viterbi_forward(E, lr, duration)
        bp_b, fin_b = _fallback.viterbi_forward(E, lr, duration)
        assert np.array_equal(bp_a, bp_b)
        # numpy's vectorized log and libm may differ in the last ulp
        assert np.array_equal(np.isfinite(fin_a), np.isfinite(fin_b))
        finite = np.isfinite(fin_a)
        assert np.allclose(fin_a[finite], fin_b[finite], rtol=1e-13, atol=0)


@pytest.mark.skipif(ext is None, reason="compiled core not built")
def test_backends_agree_on_kernel_lags():
    rng = np.random.default_rng(4)
    tau = np.arange(800) / 44100.0
    f, a = rng.uniform(50, 5000, 27), rng.uniform(0, 1, 27)
    assert np.allclose(ext.kernel_lags(tau, f, a, 0.005), _fallback.kernel_lags(tau, f, a, 0.005),
                       rtol=0, atol=1e-13)
