"""Pure numpy implementations of the hot kernels.

Semantics match the compiled module cell for cell: same operation order,
first-occurrence tie breaking, ``-1`` for missing back-pointers.
"""
from __future__ import annotations

import numpy as np

_LN2 = 0.6931471805599453
_TWO_PI = 2.0 * np.pi


def kernel_lags(tau, freqs, amps, sigma_f):
    """exp(-2 pi^2 sigma_f^2 tau^2) * sum_j amps[j] cos(2 pi freqs[j] tau)."""
    tau = np.ascontiguousarray(tau, dtype=np.float64)
    freqs = np.ascontiguousarray(freqs, dtype=np.float64)
    amps = np.ascontiguousarray(amps, dtype=np.float64)
    acc = np.zeros_like(tau)
    for f, a in zip(freqs, amps):
        acc += a * np.cos(_TWO_PI * f * tau)
    decay = np.exp(-2.0 * np.pi * np.pi * sigma_f * sigma_f * tau * tau)
    return decay * acc


def log1mexp(x):
    """log(1 - exp(x)) for x <= 0, accurate on both sides of -ln 2."""
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > -_LN2, np.log(-np.expm1(x)), np.log1p(-np.exp(x)))


def _self_cost(log_r, width, duration):
    if duration:
        steps = np.arange(1, width + 1, dtype=np.float64)
        return log_r[:, None] * steps[None, :]
    return np.repeat(log_r[:, None], width, axis=1)


def trellis_step(prev, emissions, log_r, duration):
    """Advance a (state, run-length) log-probability lattice by one frame.

    ``prev[k, d]`` is the best log-probability of a path that sits in row
    ``k`` having made ``d`` self-transitions there. Row ``k`` can only be
    entered from row ``k - 1``; row 0 has no predecessor.

    Returns the new lattice of width ``D + 1`` and, per row, the run length
    of the predecessor row the advance came from (``-1`` when unreachable).
    """
    prev = np.asarray(prev, dtype=np.float64)
    emissions = np.asarray(emissions, dtype=np.float64)
    log_r = np.asarray(log_r, dtype=np.float64)
    rows, width = prev.shape
    cost = _self_cost(log_r, width, duration)
    new = np.empty((rows, width + 1))
    new[:, 1:] = (prev + cost) + emissions[:, None]
    new[0, 0] = -np.inf
    src = np.full(rows, -1, dtype=np.int64)
    if rows > 1:
        cand = prev[:-1] + log1mexp(cost[:-1])
        idx = np.argmax(cand, axis=1)
        best = cand[np.arange(rows - 1), idx]
        new[1:, 0] = best + emissions[1:]
        src[1:] = np.where(np.isfinite(best), idx, -1)
    return new, src


def viterbi_forward(emissions, log_r, duration):
    """Run the lattice over all frames, forcing frame 0 into row 0.

    Returns ``(backptr, final)`` where ``backptr[n, k]`` is the predecessor
    run length for entering row ``k`` at frame ``n`` and ``final`` is the
    ``(K, N)`` lattice after the last frame.
    """
    emissions = np.ascontiguousarray(emissions, dtype=np.float64)
    log_r = np.ascontiguousarray(log_r, dtype=np.float64)
    n_frames, n_states = emissions.shape
    backptr = np.full((n_frames, n_states), -1, dtype=np.int64)
    lattice = np.full((n_states, 1), -np.inf)
    lattice[0, 0] = emissions[0, 0]
    for n in range(1, n_frames):
        lattice, backptr[n] = trellis_step(lattice, emissions[n], log_r[n], duration)
    final = np.full((n_states, n_frames), -np.inf)
    final[:, : lattice.shape[1]] = lattice
    return backptr, final
