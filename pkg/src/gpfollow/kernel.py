"""Harmonic spectral-mixture covariance for piano-like audio.

The model places a Gaussian of width ``sigma_f`` at every harmonic
``m * f_q * sqrt(1 + B m^2)`` of every sounding note ``q``, mirrored at
negative frequency. Harmonic ``m`` carries weight ``E_m = 1 / (1 + T m^v)``
and note ``q`` carries weight ``w_q``. The time-domain kernel is the inverse
Fourier transform of that mixture, a sum of cosines under one Gaussian decay.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import toeplitz

from . import _core
from .errors import ConfigError, ContractError, NumericError, ResourceError

DEFAULT_HUM_FREQ = 50.0


def envelope_weight(m, T: float, v: float):
    """Relative power of harmonic ``m``: ``1 / (1 + T * m**v)``."""
    if np.any(np.asarray(m) < 1):
        raise ContractError("harmonic index must be >= 1")
    if T < 0:
        raise ContractError("envelope T must be nonnegative")
    return 1.0 / (1.0 + T * np.power(m, v, dtype=np.float64))


def inharmonic_factor(m, B: float):
    """Stretch factor ``sqrt(1 + B m^2)`` applied to the m-th partial."""
    if B < 0:
        raise ContractError("inharmonicity B must be nonnegative")
    m = np.asarray(m, dtype=np.float64)
    return np.sqrt(1.0 + B * m * m)


def freq_to_midi(freq: float) -> int:
    return int(round(69.0 + 12.0 * math.log2(freq / 440.0)))


@dataclass(frozen=True)
class SpectralHyperparams:
    """Kernel hyperparameters plus observation noise.

    ``weights=None`` means uniform ``1/Q``. ``inharmonicity`` maps MIDI note
    numbers to ``B``; notes missing from the table use ``B = 0``. ``hum`` is
    ``(frequency_hz, amplitude)`` or ``None``.
    """

    fundamentals: tuple[float, ...] = (440.0,)
    num_harmonics: int = 9
    sigma_f: float = 0.005
    weights: tuple[float, ...] | None = None
    envelope_T: float = 0.465
    envelope_v: float = 2.37
    inharmonicity: Mapping[int, float] = field(default_factory=dict)
    noise_sigma: float = 0.1
    hum: tuple[float, float] | None = None

    def __post_init__(self):
        f = tuple(float(x) for x in np.atleast_1d(self.fundamentals))
        object.__setattr__(self, "fundamentals", f)
        if len(f) < 1:
            raise ContractError("at least one fundamental is required")
        if any(not x > 0 for x in f):
            raise ContractError("fundamentals must be positive")
        if self.weights is None:
            w = tuple(1.0 / len(f) for _ in f)
        else:
            w = tuple(float(x) for x in self.weights)
        if len(w) != len(f):
            raise ContractError(f"{len(w)} weights given for {len(f)} fundamentals")
        if any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-9:
            raise ContractError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "weights", w)
        if int(self.num_harmonics) != self.num_harmonics or self.num_harmonics < 1:
            raise ContractError("num_harmonics must be a positive integer")
        object.__setattr__(self, "num_harmonics", int(self.num_harmonics))
        if not self.sigma_f > 0:
            raise ContractError("sigma_f must be positive")
        if not self.noise_sigma > 0:
            raise ContractError("noise_sigma must be positive")
        if self.envelope_T < 0:
            raise ContractError("envelope T must be nonnegative")
        table = {int(k): float(b) for k, b in dict(self.inharmonicity).items()}
        if any(b < 0 for b in table.values()):
            raise ContractError("inharmonicity constants must be nonnegative")
        object.__setattr__(self, "inharmonicity", table)
        if self.hum is not None:
            hf, ha = self.hum
            if not hf > 0 or ha < 0:
                raise ContractError("hum needs a positive frequency and nonnegative amplitude")
            object.__setattr__(self, "hum", (float(hf), float(ha)))

    @property
    def num_sources(self) -> int:
        return len(self.fundamentals)

    def with_fundamentals(self, fundamentals: Sequence[float]) -> "SpectralHyperparams":
        """Same model for a different note set, with weights reset to uniform."""
        return replace(self, fundamentals=tuple(fundamentals), weights=None)

    def inharmonicity_for(self, freq: float) -> float:
        if not self.inharmonicity:
            return 0.0
        return self.inharmonicity.get(freq_to_midi(freq), 0.0)

    def envelope(self) -> np.ndarray:
        m = np.arange(1, self.num_harmonics + 1)
        return envelope_weight(m, self.envelope_T, self.envelope_v)

    def components(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened partial frequencies and their weights ``w_q * E_m``.

        The hum, when enabled, is appended as one more component.
        """
        m = np.arange(1, self.num_harmonics + 1, dtype=np.float64)
        env = self.envelope()
        freqs, amps = [], []
        for fq, wq in zip(self.fundamentals, self.weights):
            freqs.append(m * fq * inharmonic_factor(m, self.inharmonicity_for(fq)))
            amps.append(wq * env)
        if self.hum is not None:
            freqs.append(np.array([self.hum[0]]))
            amps.append(np.array([self.hum[1]]))
        return np.concatenate(freqs), np.concatenate(amps)


@dataclass(frozen=True)
class CovarianceSpec:
    frame_length: int = 800
    sample_rate: float = 44100.0

    def __post_init__(self):
        if int(self.frame_length) != self.frame_length or self.frame_length < 2:
            raise ContractError("frame_length must be an integer >= 2")
        if not self.sample_rate > 0:
            raise ContractError("sample_rate must be positive")
        object.__setattr__(self, "frame_length", int(self.frame_length))


def _gauss(x, mu, sigma):
    z = (x - mu) / sigma
    return np.exp(-0.5 * z * z) / (sigma * math.sqrt(2.0 * math.pi))


def spectral_density(freq, params: SpectralHyperparams):
    """Power spectral density ``S(f)`` of the kernel, symmetric in ``f``."""
    f = np.asarray(freq, dtype=np.float64)
    centers, amps = params.components()
    out = np.zeros_like(f)
    for c, a in zip(centers, amps):
        out += 0.5 * a * (_gauss(f, c, params.sigma_f) + _gauss(f, -c, params.sigma_f))
    return out


def kernel_value(tau, params: SpectralHyperparams):
    """Time-domain covariance ``k(tau)`` (seconds), evaluated directly."""
    tau = np.asarray(tau, dtype=np.float64)
    centers, amps = params.components()
    acc = np.zeros_like(tau)
    for c, a in zip(centers, amps):
        acc = acc + a * np.cos(2.0 * np.pi * c * tau)
    return np.exp(-2.0 * np.pi**2 * params.sigma_f**2 * tau**2) * acc


def kernel_lag_column(spec: CovarianceSpec, params: SpectralHyperparams) -> np.ndarray:
    """``k(0), k(1/fs), ..., k((l-1)/fs)``: the first column of ``K``."""
    lags = np.arange(spec.frame_length, dtype=np.float64) / spec.sample_rate
    centers, amps = params.components()
    return _core.kernel_lags(lags, centers, amps, params.sigma_f)


def build_covariance(spec: CovarianceSpec, params: SpectralHyperparams) -> np.ndarray:
    """Dense ``l x l`` covariance of one audioframe.

    The kernel is stationary, so ``K`` is symmetric Toeplitz and only the
    ``l`` distinct lags are evaluated.
    """
    n = spec.frame_length
    try:
        out = np.empty((n, n))
    except MemoryError as exc:
        raise ResourceError(f"cannot allocate a {n}x{n} covariance matrix") from exc
    out[...] = toeplitz(kernel_lag_column(spec, params))
    return out


def sample_gp(spec: CovarianceSpec, params: SpectralHyperparams, seed: int,
              *, max_jitter: float = 1e-4) -> np.ndarray:
    """Draw one frame from the zero-mean GP prior (no observation noise).

    Jitter starts at ``1e-10 * k(0)`` and grows tenfold until the Cholesky
    factorization succeeds or ``max_jitter * k(0)`` is exceeded.
    """
    K = build_covariance(spec, params)
    k0 = float(K[0, 0])
    scale = k0 if k0 > 0 else 1.0
    rel = 1e-10
    while rel <= max_jitter * (1 + 1e-12):
        try:
            L = np.linalg.cholesky(K + rel * scale * np.eye(spec.frame_length))
            break
        except np.linalg.LinAlgError:
            rel *= 10.0
    else:
        raise NumericError(f"covariance not factorizable with jitter up to {max_jitter:g} * k(0)")
    z = np.random.default_rng(seed).standard_normal(spec.frame_length)
    return L @ z


# -- hyperparameter files ---------------------------------------------------

_KEYS = {
    "M": ("num_harmonics", int),
    "T": ("envelope_T", float),
    "v": ("envelope_v", float),
    "sigma_f": ("sigma_f", float),
    "sigma_n": ("noise_sigma", float),
}


def parse_params(text: str, base: SpectralHyperparams | None = None) -> SpectralHyperparams:
    """Read ``key = value`` lines; integer keys are ``midi_note = B`` pairs.

    ``#`` starts a comment. The hum is enabled by ``hum_amp``; ``hum_freq``
    defaults to 50 Hz.
    """
    base = base or SpectralHyperparams()
    fields: dict = {}
    table = dict(base.inharmonicity)
    hum_freq = hum_amp = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key.lstrip("-").isdigit():
                note = int(key)
                if not 0 <= note <= 127:
                    raise ConfigError(f"line {lineno}: MIDI note {note} out of range")
                table[note] = float(value)
            elif key in _KEYS:
                name, conv = _KEYS[key]
                fields[name] = conv(value)
            elif key == "hum_freq":
                hum_freq = float(value)
            elif key == "hum_amp":
                hum_amp = float(value)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from exc
    hum = base.hum
    if hum_amp is not None or hum_freq is not None:
        freq = hum_freq if hum_freq is not None else (hum[0] if hum else DEFAULT_HUM_FREQ)
        amp = hum_amp if hum_amp is not None else (hum[1] if hum else 0.0)
        hum = (freq, amp) if amp > 0 else None
    try:
        return replace(base, inharmonicity=table, hum=hum, **fields)
    except ContractError as exc:
        raise ConfigError(str(exc)) from exc


def load_params(path, base: SpectralHyperparams | None = None) -> SpectralHyperparams:
    return parse_params(Path(path).read_text(), base)


def format_params(params: SpectralHyperparams, *, table_only: bool = False) -> str:
    lines = []
    if not table_only:
        lines += [
            f"M = {params.num_harmonics}",
            f"T = {params.envelope_T!r}",
            f"v = {params.envelope_v!r}",
            f"sigma_f = {params.sigma_f!r}",
            f"sigma_n = {params.noise_sigma!r}",
        ]
        if params.hum is not None:
            lines += [f"hum_freq = {params.hum[0]!r}", f"hum_amp = {params.hum[1]!r}"]
    lines += [f"{note} = {b!r}" for note, b in sorted(params.inharmonicity.items())]
    return "\n".join(lines) + "\n"
