"""Offline fitting of kernel hyperparameters and LML diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .errors import (ContractError, DegenerateInputError, InsufficientDataError,
                     NumericError)
from .kernel import (CovarianceSpec, SpectralHyperparams, build_covariance,
                     envelope_weight, spectral_density)
from .lml import factorize, lml_cholesky

PEAK_WINDOW = 0.03
B_MAX = 0.01


@dataclass(frozen=True)
class SweepResult:
    grid: np.ndarray
    lmls: np.ndarray
    argmax_freq: float


def lml_sweep(frame, grid: Sequence[float], params: SpectralHyperparams,
              spec: CovarianceSpec) -> SweepResult:
    """LML of one frame under single-note models at each grid frequency.

    Ties in the maximum go to the lowest frequency, so the result does not
    depend on grid order.
    """
    y = np.asarray(getattr(frame, "samples", frame), dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0 or np.any(~(grid > 0)):
        raise ContractError("grid must be nonempty and positive")
    lmls = np.empty(grid.size)
    for i, g in enumerate(grid):
        try:
            K = build_covariance(spec, params.with_fundamentals([g]))
            lmls[i] = lml_cholesky(y, factorize(K, params.noise_sigma))
        except NumericError as exc:
            raise NumericError(f"at {g:g} Hz: {exc}") from exc
    top = lmls.max()
    return SweepResult(grid, lmls, float(grid[lmls == top].min()))


# -- harmonic peaks ---------------------------------------------------------

@dataclass(frozen=True)
class Peak:
    harmonic: int
    freq: float
    log_power: float


def harmonic_peaks(freqs, power, f0: float, num_harmonics: int, *, B: float = 0.0,
                   window: float = PEAK_WINDOW) -> list[Peak]:
    """Interpolated spectral maxima near each nominal partial ``m f0 sqrt(1 + B m^2)``.

    A peak is kept when the largest bin within ``+-window`` (relative) of the
    nominal frequency is a strict interior local maximum. Its frequency and
    height come from a parabola through the log powers of the three bins
    around it, which is exact for a Gaussian-shaped peak.
    """
    freqs = np.asarray(freqs, dtype=np.float64)
    power = np.asarray(power, dtype=np.float64)
    if freqs.shape != power.shape or freqs.size < 3:
        raise ContractError("spectrum needs matching frequency and power vectors")
    step = freqs[1] - freqs[0]
    peaks = []
    for m in range(1, num_harmonics + 1):
        nominal = m * f0 * math.sqrt(1.0 + B * m * m)
        idx = np.flatnonzero(np.abs(freqs - nominal) <= window * nominal)
        if idx.size < 3:
            continue
        i = int(idx[np.argmax(power[idx])])
        if i in (0, freqs.size - 1) or i in (idx[0], idx[-1]):
            continue
        a, b, c = power[i - 1], power[i], power[i + 1]
        if not (b > a and b > c and a > 0 and c > 0):
            continue
        la, lb, lc = np.log([a, b, c])
        denom = la - 2 * lb + lc
        delta = 0.5 * (la - lc) / denom if denom < 0 else 0.0
        peaks.append(Peak(m, freqs[i] + delta * step, lb - 0.25 * (la - lc) * delta))
    return peaks


# -- envelope ---------------------------------------------------------------

def _envelope_data(spectra, num_harmonics):
    data = []
    for freqs, power, f0 in spectra:
        peaks = harmonic_peaks(freqs, power, f0, num_harmonics)
        if peaks:
            data.append((np.array([p.harmonic for p in peaks], dtype=np.float64),
                         np.array([p.log_power for p in peaks])))
    if not data:
        raise InsufficientDataError("no harmonic peaks found in any spectrum")
    return data


def envelope_objective(T: float, v: float, data) -> float:
    """Squared log-power misfit, with each spectrum's overall gain profiled out."""
    total = 0.0
    for m, logp in data:
        resid = logp - np.log(envelope_weight(m, T, v))
        resid = resid - resid.mean()
        total += float(resid @ resid)
    return total


def fit_envelope(spectra, initial: tuple[float, float] = (0.465, 2.37),
                 num_harmonics: int = 9) -> tuple[float, float]:
    """Fit ``(T, v)`` of ``E_m = 1/(1 + T m^v)`` to measured harmonic peak powers.

    ``spectra`` is a list of ``(freqs, power, f0)``. Measured and modelled
    powers are compared in log space after removing each spectrum's gain.
    Bounded L-BFGS-B; the initial point is returned if the optimizer does
    not improve on it.
    """
    if not spectra:
        raise ContractError("at least one spectrum is required")
    T0, v0 = map(float, initial)
    if not (math.isfinite(T0) and math.isfinite(v0)):
        raise ContractError("initial (T, v) must be finite")
    data = _envelope_data(spectra, num_harmonics)

    def f(x):
        val = envelope_objective(x[0], x[1], data)
        if not math.isfinite(val):
            raise NumericError(f"envelope objective not finite at T={x[0]:g}, v={x[1]:g}")
        return val

    start = f((T0, v0))
    res = minimize(f, np.array([T0, v0]), method="L-BFGS-B",
                   bounds=[(1e-8, 1e3), (1e-3, 20.0)],
                   options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 1000})
    if res.fun <= start:
        return float(res.x[0]), float(res.x[1])
    return T0, v0


# -- inharmonicity ----------------------------------------------------------

def inharmonicity_objective(B: float, peaks: Sequence[Peak], f0: float) -> float:
    m = np.array([p.harmonic for p in peaks], dtype=np.float64)
    f = np.array([p.freq for p in peaks])
    resid = f - m * f0 * np.sqrt(1.0 + B * m * m)
    return float(resid @ resid)


def fit_inharmonicity(freqs, power, f0: float, num_harmonics: int = 9,
                      initial: float = 0.0) -> float:
    """Bounded scalar fit of ``B`` in ``[0, 0.01]`` to harmonic peak frequencies."""
    peaks = harmonic_peaks(freqs, power, f0, num_harmonics)
    if len(peaks) < 3:
        raise InsufficientDataError(f"found {len(peaks)} harmonic peaks near {f0:g} Hz, need 3")
    obj = lambda b: inharmonicity_objective(b, peaks, f0)  # noqa: E731
    res = minimize_scalar(obj, bounds=(0.0, B_MAX), method="bounded",
                          options={"xatol": 1e-10})
    candidates = [min(max(initial, 0.0), B_MAX), 0.0, float(res.x)]
    return min(candidates, key=lambda b: (obj(b), b))


# -- note weights -----------------------------------------------------------

def estimate_weights(freqs, power, fundamentals: Sequence[float],
                     params: SpectralHyperparams) -> np.ndarray:
    """Least-squares mixing weights of single-note model spectra, L1-normalized.

    Negative solutions are clamped to zero before normalizing.
    """
    fundamentals = [float(f) for f in fundamentals]
    if not fundamentals:
        raise ContractError("at least one fundamental is required")
    freqs = np.asarray(freqs, dtype=np.float64)
    b = np.asarray(power, dtype=np.float64)
    if freqs.size == 0 or freqs.shape != b.shape:
        raise ContractError("spectrum must be nonempty with matching shapes")
    if len(fundamentals) == 1:
        return np.array([1.0])
    single = replace(params, hum=None)
    A = np.column_stack([spectral_density(freqs, single.with_fundamentals([f]))
                         for f in fundamentals])
    if not np.any(A):
        raise DegenerateInputError("model spectra vanish on every bin")
    w, *_ = np.linalg.lstsq(A, b, rcond=None)
    w = np.clip(w, 0.0, None)
    total = w.sum()
    if not total > 0:
        raise DegenerateInputError("no note has a positive least-squares weight")
    return w / total
