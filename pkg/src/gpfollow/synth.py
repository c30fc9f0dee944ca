"""Additive synthesis of a score, used for demos and end-to-end checks."""
from __future__ import annotations

import numpy as np

from .audio import Audioframe, FrameConfig
from .errors import ContractError
from .kernel import SpectralHyperparams, inharmonic_factor

AMPLITUDE_LAWS = ("envelope", "variance")


def harmonic_amplitudes(params: SpectralHyperparams, law: str = "envelope") -> np.ndarray:
    """Per-harmonic cosine amplitudes.

    ``"envelope"`` uses ``E_m`` itself as the amplitude. ``"variance"`` uses
    ``sqrt(2 E_m)`` so that a random-phase partial has variance ``E_m``, which
    is what the kernel assumes.
    """
    if law == "envelope":
        return params.envelope()
    if law == "variance":
        return np.sqrt(2.0 * params.envelope())
    raise ContractError(f"amplitude law must be one of {AMPLITUDE_LAWS}, got {law!r}")


def render_score(score, sample_rate: float = 44100.0, *, params: SpectralHyperparams | None = None,
                 stretch: float = 1.0, snr_db: float | None = 20.0, peak: float = 0.5,
                 seed: int = 0, law: str = "envelope") -> np.ndarray:
    """Sum of enveloped harmonics per state, each state lasting ``stretch * time_to_next``.

    Every note of a state contributes ``sum_m a_m cos(2 pi m f b_m t + phase)``
    with random phases and ``a_m`` from :func:`harmonic_amplitudes`. White Gaussian noise is added at ``snr_db`` relative to
    the mean signal power (``None`` for a clean render).
    """
    if not stretch > 0:
        raise ContractError("stretch must be positive")
    params = params or SpectralHyperparams()
    rng = np.random.default_rng(seed)
    bounds = state_boundaries(score, sample_rate, stretch)
    out = np.zeros(bounds[-1])
    m = np.arange(1, params.num_harmonics + 1, dtype=np.float64)
    amp = harmonic_amplitudes(params, law)
    for s, start, stop in zip(score.states, bounds[:-1], bounds[1:]):
        t = np.arange(stop - start) / sample_rate
        for f0 in s.fundamentals:
            partials = m * f0 * inharmonic_factor(m, params.inharmonicity_for(f0))
            phases = rng.uniform(0, 2 * np.pi, m.size)
            for f, a, ph in zip(partials, amp, phases):
                if f < sample_rate / 2:
                    out[start:stop] += a * np.cos(2 * np.pi * f * t + ph)
    scale = np.max(np.abs(out))
    if scale > 0:
        out *= peak / scale
    if snr_db is not None:
        noise_power = np.mean(out ** 2) / 10 ** (snr_db / 10)
        out += rng.normal(0.0, np.sqrt(noise_power), out.size)
    return out


def state_boundaries(score, sample_rate: float, stretch: float = 1.0) -> np.ndarray:
    """Sample index where each state starts, plus the end of the render."""
    edges = np.concatenate([[0.0], np.cumsum(score.times_to_next * stretch)])
    return np.round(edges * sample_rate).astype(np.int64)


def ground_truth(frames: list[Audioframe], score, cfg: FrameConfig, stretch: float = 1.0) -> np.ndarray:
    """State (1-based) sounding at the centre sample of each frame."""
    bounds = state_boundaries(score, cfg.sample_rate, stretch)
    centers = np.array([f.start_sample + cfg.frame_length // 2 for f in frames])
    return np.clip(np.searchsorted(bounds, centers, side="right"), 1, score.num_states)


def harmonic_frame(f0, length: int, sample_rate: float, *, params: SpectralHyperparams | None = None,
                   snr_db: float | None = 20.0, seed: int = 0, amplitude: float = 1.0,
                   law: str = "envelope") -> np.ndarray:
    """One frame of enveloped harmonics at fundamentals ``f0`` plus noise."""
    params = params or SpectralHyperparams()
    rng = np.random.default_rng(seed)
    t = np.arange(length) / sample_rate
    m = np.arange(1, params.num_harmonics + 1, dtype=np.float64)
    amp = harmonic_amplitudes(params, law)
    y = np.zeros(length)
    for f in np.atleast_1d(f0):
        for mm, a in zip(m, amp):
            y += a * np.cos(2 * np.pi * mm * f * t + rng.uniform(0, 2 * np.pi))
    y *= amplitude / max(np.sqrt(np.mean(y * y)), 1e-300)
    if snr_db is not None:
        y += rng.normal(0.0, amplitude / 10 ** (snr_db / 20), length)
    return y
