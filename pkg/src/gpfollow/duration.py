"""Duration-dependent self/advance transition probabilities.

The number of self-transitions ``Z`` spent in a state is geometric with mean
``E[Z]``. With ``r = E[Z] / (1 + E[Z])`` the transition function after ``d``
self-transitions is ``p_self = r**(d + 1)`` and ``p_advance = 1 - p_self``.
``E[Z]`` comes either from the score tempo or from a moving average of the
observed frames per score-second over the last ``h`` notes.
"""
from __future__ import annotations

import collections
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError


def expected_frames_static(time_to_next: float, frame_rate: float) -> float:
    """Frames a note lasts when played exactly at the notated tempo."""
    if not (time_to_next > 0 and frame_rate > 0):
        raise ContractError("time_to_next and frame_rate must be positive")
    return time_to_next * frame_rate


class TempoTracker:
    """Moving average of ``Z / time_to_next`` over the last ``h`` completed notes."""

    def __init__(self, h: int = 4, frame_rate: float = 44100.0 / 4000):
        if int(h) != h or h < 1:
            raise ContractError("h must be a positive integer")
        if not frame_rate > 0:
            raise ContractError("frame_rate must be positive")
        self.h = int(h)
        self.frame_rate = float(frame_rate)
        self.history: collections.deque = collections.deque(maxlen=self.h)

    def record(self, observed_frames: int, time_to_next: float):
        if observed_frames < 1 or not time_to_next > 0:
            raise ContractError("need Z >= 1 and time_to_next > 0")
        self.history.append((int(observed_frames), float(time_to_next)))

    def __len__(self):
        return len(self.history)


def conversion_rate(tracker: TempoTracker) -> float:
    """Frames per score-second; the nominal frame rate until a note completes."""
    if not tracker.history:
        return tracker.frame_rate
    return math.fsum(z / t for z, t in tracker.history) / len(tracker.history)


def expected_frames_adaptive(tracker: TempoTracker, time_to_next: float) -> float:
    if not time_to_next > 0:
        raise ContractError("time_to_next must be positive")
    return conversion_rate(tracker) * time_to_next


def log_ratio(expected_Z):
    """``log(E / (1 + E))``, the log of the per-step geometric ratio ``r``."""
    e = np.asarray(expected_Z, dtype=np.float64)
    if np.any(~(e > 0)):
        raise ContractError("expected_Z must be positive")
    return -np.log1p(1.0 / e)


def transition_probs(expected_Z: float, d: int) -> tuple[float, float]:
    """``(p_self, p_advance)`` after ``d`` self-transitions."""
    if not expected_Z > 0:
        raise ContractError("expected_Z must be positive")
    if int(d) != d or d < 0:
        raise ContractError("d must be a nonnegative integer")
    r = expected_Z / (1.0 + expected_Z)
    p_self = r ** (int(d) + 1)
    return p_self, 1.0 - p_self


def sample_self_transitions(expected_Z: float, trials: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``Z`` by inverting the run-length CDF ``P(Z <= d) = p_advance(d)``.

    ``Z = min{d : U < p_advance(d)}`` for uniform ``U``; its mean is ``E[Z]``.
    """
    u = rng.random(trials)
    r = expected_Z / (1.0 + expected_Z)
    # p_advance(d) > u  <=>  r**(d+1) < 1 - u  <=>  d > log(1-u)/log(r) - 1
    z = np.floor(np.log1p(-u) / math.log(r)).astype(np.int64)
    # guard the boundary case the float floor can land on
    below = 1.0 - r ** (z + 1.0) <= u
    return z + below


def simulate_hazard_process(expected_Z: float, trials: int, rng: np.random.Generator) -> np.ndarray:
    """Self-transition counts when ``p_advance(d)`` is applied as a per-step hazard.

    This is how the decoder uses the transition function. Its mean is
    ``sum_{D>=1} r**(D(D+1)/2)``, shorter than ``E[Z]``; see
    :func:`hazard_mean`.
    """
    out = np.empty(trials, dtype=np.int64)
    for i in range(trials):
        d = 0
        while rng.random() >= transition_probs(expected_Z, d)[1]:
            d += 1
        out[i] = d
    return out


def hazard_mean(expected_Z: float, tol: float = 1e-16) -> float:
    """Analytic mean of :func:`simulate_hazard_process`."""
    r = expected_Z / (1.0 + expected_Z)
    total, D = 0.0, 1
    while True:
        term = r ** (D * (D + 1) / 2)
        total += term
        if term < tol:
            return total
        D += 1


@dataclass(frozen=True)
class DurationModel:
    """How the decoder turns a state's ``time_to_next`` into transitions.

    With ``state_duration`` off, every state stays with constant probability
    ``fallback_p_self`` regardless of how long it has been occupied.
    """

    state_duration: bool = True
    adaptive: bool = True
    h: int = 4
    fallback_p_self: float = 0.95

    def __post_init__(self):
        if int(self.h) != self.h or self.h < 1:
            raise ContractError("h must be a positive integer")
        if not 0 < self.fallback_p_self < 1:
            raise ContractError("fallback_p_self must lie in (0, 1)")

    def tracker(self, frame_rate: float) -> TempoTracker:
        return TempoTracker(self.h, frame_rate)

    def log_r(self, times_to_next, tracker: TempoTracker) -> np.ndarray:
        """Per-state log ratio for the next step.

        In duration mode ``log p_self(d) = (d + 1) * log_r``; otherwise
        ``log_r`` is ``log p_self`` itself.
        """
        t = np.asarray(times_to_next, dtype=np.float64)
        if not self.state_duration:
            return np.full(t.shape, math.log(self.fallback_p_self))
        if self.adaptive:
            expected = conversion_rate(tracker) * t
        else:
            expected = t * tracker.frame_rate
        return log_ratio(expected)
