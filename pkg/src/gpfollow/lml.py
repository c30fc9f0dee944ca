"""Gaussian-process log marginal likelihood of an audioframe.

The real-time path factorizes ``K + sigma_n^2 I`` once per distinct note set
and evaluates each frame with two triangular solves.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

from .errors import ContractError, NumericError
from .kernel import CovarianceSpec, SpectralHyperparams, build_covariance

LOG_2PI = math.log(2.0 * math.pi)

NoteKey = tuple[int, ...]


def note_key(notes: Iterable[int]) -> NoteKey:
    """Canonical cache key: sorted, de-duplicated MIDI numbers."""
    return tuple(sorted(set(int(n) for n in notes)))


@dataclass(frozen=True)
class CholeskyFactor:
    L: np.ndarray
    log_det_term: float
    frame_length: int
    key: NoteKey | None = None


def factorize(K: np.ndarray, sigma_n: float, key: NoteKey | None = None) -> CholeskyFactor:
    """Lower Cholesky factor of ``K + sigma_n^2 I``."""
    if not sigma_n > 0:
        raise ContractError("sigma_n must be positive")
    A = K + sigma_n**2 * np.eye(K.shape[0])
    try:
        L = cholesky(A, lower=True, check_finite=True)
    except (LinAlgError, ValueError) as exc:
        raise NumericError(f"Cholesky factorization failed: {exc}") from exc
    return CholeskyFactor(L, float(np.sum(np.log(np.diag(L)))), K.shape[0], key)


def lml_direct(y, K: np.ndarray, sigma_n: float) -> float:
    """Reference LML through a general solve and an LU log-determinant."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (K.shape[0],):
        raise ContractError(f"frame of length {y.size} does not match {K.shape[0]}x{K.shape[0]} covariance")
    if not sigma_n > 0:
        raise ContractError("sigma_n must be positive")
    A = K + sigma_n**2 * np.eye(K.shape[0])
    sign, logdet = np.linalg.slogdet(A)
    if sign <= 0 or not np.isfinite(logdet):
        raise NumericError("covariance plus noise is singular or indefinite")
    try:
        alpha = np.linalg.solve(A, y)
    except np.linalg.LinAlgError as exc:
        raise NumericError(str(exc)) from exc
    return float(-0.5 * y @ alpha - 0.5 * logdet - 0.5 * y.size * LOG_2PI)


def lml_cholesky(y, factor: CholeskyFactor) -> float:
    """LML from a cached factor: ``-y.alpha/2 - sum log L_ii - (l/2) log 2pi``.

    ``alpha = L^T \\ (L \\ y)``.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (factor.frame_length,):
        raise ContractError(f"frame of length {y.size}, factor expects {factor.frame_length}")
    z = solve_triangular(factor.L, y, lower=True, check_finite=False)
    alpha = solve_triangular(factor.L, z, lower=True, trans="T", check_finite=False)
    return float(-0.5 * y @ alpha - factor.log_det_term - 0.5 * y.size * LOG_2PI)


def state_factor(notes: Sequence[int], fundamentals: Sequence[float], spec: CovarianceSpec,
                 params: SpectralHyperparams) -> CholeskyFactor:
    state_params = params.with_fundamentals(fundamentals)
    K = build_covariance(spec, state_params)
    return factorize(K, params.noise_sigma, note_key(notes))


@dataclass
class CholeskyCache:
    """Factors keyed by note set, plus counters for instrumentation."""

    spec: CovarianceSpec
    factors: dict = field(default_factory=dict)
    factorizations: int = 0
    hits: int = 0
    misses: int = 0

    def __len__(self):
        return len(self.factors)

    def __contains__(self, notes):
        return note_key(notes) in self.factors

    def add(self, notes, fundamentals, params: SpectralHyperparams) -> CholeskyFactor:
        key = note_key(notes)
        if key not in self.factors:
            self.factors[key] = state_factor(key, fundamentals, self.spec, params)
            self.factorizations += 1
        return self.factors[key]

    def get(self, notes) -> CholeskyFactor:
        key = note_key(notes)
        try:
            factor = self.factors[key]
        except KeyError:
            self.misses += 1
            raise KeyError(f"no precomputed factor for notes {key}") from None
        self.hits += 1
        return factor

    def lml(self, y, notes) -> float:
        return lml_cholesky(y, self.get(notes))

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 1.0


def precompute_cache(score, spec: CovarianceSpec, params: SpectralHyperparams) -> CholeskyCache:
    """Factor the covariance of every distinct note set in ``score``."""
    if score.num_states < 1:
        raise ContractError("score has no states")
    cache = CholeskyCache(spec)
    for state in score.states:
        try:
            cache.add(state.midi_notes, state.fundamentals, params)
        except NumericError as exc:
            raise NumericError(f"state {state.index} {list(state.midi_notes)}: {exc}") from exc
    return cache


class LMLTraceWriter:
    """CSV dump of every evaluated ``(frame, state, lml)`` triple."""

    def __init__(self, stream):
        self._writer = csv.writer(stream, lineterminator="\n")
        self._writer.writerow(["frame_index", "state_index", "lml"])

    def write(self, frame_index: int, lmls: dict):
        for state in sorted(lmls):
            self._writer.writerow([frame_index, state, f"{lmls[state]:.6f}"])
