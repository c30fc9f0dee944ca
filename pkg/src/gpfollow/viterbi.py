"""Online windowed Viterbi over a left-to-right chain of score states.

Transitions depend on how many self-transitions ``d`` the path has made in
its current state, so the decoder keeps a lattice over ``(state, d)``: cell
``[k, d]`` holds the best log-probability of any path that is in state ``k``
at the current frame having stayed there for ``d`` steps. This makes the
per-state run length exact rather than a greedy per-state guess, and the
windowed decoder with a window covering the whole score reproduces the
offline MAP path prefix frame by frame.

The first frame is always assigned to state 1.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _core
from .duration import DurationModel, TempoTracker
from .errors import ContractError


@dataclass(frozen=True)
class DecoderConfig:
    window_length: int = 6
    threshold: int = 4

    def __post_init__(self):
        if int(self.window_length) != self.window_length or self.window_length < 1:
            raise ContractError("window_length must be a positive integer")
        if int(self.threshold) != self.threshold or not 0 <= self.threshold < self.window_length:
            raise ContractError("threshold must satisfy 0 <= threshold < window_length")


@dataclass
class AlignmentTrace:
    """Per-frame ``(frame_index, estimated_state, best_log_prob)`` records."""

    entries: list = field(default_factory=list)

    def append(self, frame_index: int, state: int, log_prob: float):
        self.entries.append((int(frame_index), int(state), float(log_prob)))

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def states(self) -> list[int]:
        return [s for _, s, _ in self.entries]


def _best_cell(lattice: np.ndarray) -> tuple[int, int, float]:
    """Highest row among rows tied for the max; smallest run length within it."""
    row_best = lattice.max(axis=1)
    top = row_best.max()
    k = int(np.flatnonzero(row_best == top)[-1])
    d = int(np.argmax(lattice[k]))
    return k, d, float(top)


class WindowedViterbi:
    """Streaming decoder; feed one frame of window LMLs per :meth:`step`."""

    def __init__(self, times_to_next: Sequence[float], frame_rate: float,
                 config: DecoderConfig = DecoderConfig(),
                 duration: DurationModel = DurationModel()):
        self.times_to_next = np.asarray(times_to_next, dtype=np.float64)
        if self.times_to_next.ndim != 1 or self.times_to_next.size < 1:
            raise ContractError("score must have at least one state")
        if np.any(~(self.times_to_next > 0)):
            raise ContractError("times_to_next must be positive")
        self.num_states = self.times_to_next.size
        self.config = config
        self.duration = duration
        self.tracker: TempoTracker = duration.tracker(frame_rate)
        self.width = min(config.window_length, self.num_states)
        self.window_start = 1
        self.frame_count = 0
        self.current_estimate = 1
        self.best_log_prob = 0.0
        # before the first frame only state 1 is possible
        self.lattice = np.full((self.width, 1), -np.inf)
        self.lattice[0, 0] = 0.0
        self._run_state = 1
        self._run_frames = 0
        self._completed: set[int] = set()

    @classmethod
    def for_score(cls, score, frame_rate: float, config: DecoderConfig = DecoderConfig(),
                  duration: DurationModel = DurationModel()) -> "WindowedViterbi":
        return cls(score.times_to_next, frame_rate, config, duration)

    # -- views ---------------------------------------------------------------

    @property
    def window_states(self) -> range:
        return range(self.window_start, self.window_start + self.width)

    @property
    def log_probs(self) -> np.ndarray:
        """Best log-probability per window state, over all run lengths."""
        return self.lattice.max(axis=1)

    @property
    def run_lengths(self) -> np.ndarray:
        """Run length of each window state's best cell (0 where unreachable)."""
        return np.argmax(self.lattice, axis=1)

    # -- update --------------------------------------------------------------

    def _emissions(self, frame_lmls) -> np.ndarray:
        if isinstance(frame_lmls, Mapping):
            try:
                e = np.array([frame_lmls[k] for k in self.window_states], dtype=np.float64)
            except KeyError as exc:
                raise ContractError(f"missing LML for window state {exc.args[0]}") from None
        else:
            e = np.asarray(frame_lmls, dtype=np.float64)
            if e.shape != (self.width,):
                raise ContractError(f"expected {self.width} window LMLs, got shape {e.shape}")
        if np.any(np.isnan(e)):
            raise ContractError("LML is NaN")
        return e

    def step(self, frame_lmls) -> int:
        """Consume one frame; returns the new estimated state (1-based).

        ``frame_lmls`` maps every state in :attr:`window_states` to its LML,
        or is an array in window order.
        """
        e = self._emissions(frame_lmls)
        if self.frame_count == 0:
            self.lattice = np.full((self.width, 1), -np.inf)
            if self.window_start == 1:
                self.lattice[0, 0] = e[0]
        else:
            lo = self.window_start - 1
            ttn = self.times_to_next[lo: lo + self.width]
            log_r = self.duration.log_r(ttn, self.tracker)
            self.lattice, _ = _core.trellis_step(self.lattice, e, log_r,
                                                 self.duration.state_duration)
        self.frame_count += 1
        k, _, best = _best_cell(self.lattice)
        estimate = self.window_start + k
        self._track(estimate)
        self.current_estimate = estimate
        self.best_log_prob = best
        self._shift_window()
        return estimate

    def _track(self, estimate: int):
        """Record the observed frame count of a state once the estimate leaves it."""
        if estimate == self._run_state:
            self._run_frames += 1
            return
        if estimate > self._run_state and self._run_state not in self._completed and self._run_frames:
            self.tracker.record(self._run_frames, self.times_to_next[self._run_state - 1])
            self._completed.add(self._run_state)
        self._run_state = estimate
        self._run_frames = 1

    def _shift_window(self):
        phi = self.config.threshold
        if self.current_estimate <= self.window_start + phi:
            return
        new_start = min(self.current_estimate - phi, self.num_states - self.width + 1)
        shift = new_start - self.window_start
        if shift <= 0:
            return
        shifted = np.full_like(self.lattice, -np.inf)
        shifted[: self.width - shift] = self.lattice[shift:]
        self.lattice = shifted
        self.window_start = new_start


def decoder_init(score, frame_rate: float, config: DecoderConfig = DecoderConfig(),
                 duration: DurationModel = DurationModel()) -> WindowedViterbi:
    return WindowedViterbi.for_score(score, frame_rate, config, duration)


def decoder_step(decoder: WindowedViterbi, frame_lmls) -> tuple[WindowedViterbi, int]:
    return decoder, decoder.step(frame_lmls)


# -- offline ----------------------------------------------------------------

def static_log_r(times_to_next, frame_rate: float, num_frames: int,
                 duration: DurationModel = DurationModel()) -> np.ndarray:
    """``(N, K)`` log ratios for the offline decoder (tempo taken from the score)."""
    static = DurationModel(duration.state_duration, False, duration.h, duration.fallback_p_self)
    row = static.log_r(times_to_next, TempoTracker(duration.h, frame_rate))
    return np.repeat(row[None, :], num_frames, axis=0)


def viterbi_path(emissions, log_r, state_duration: bool = True) -> tuple[list[int], float]:
    """MAP state sequence (1-based) and its log-probability.

    ``emissions`` is ``(N, K)``; ``log_r`` is ``(N, K)`` (row 0 unused).
    """
    emissions = np.asarray(emissions, dtype=np.float64)
    if emissions.ndim != 2 or emissions.shape[0] == 0:
        raise ContractError("need at least one frame of emissions")
    log_r = np.asarray(log_r, dtype=np.float64)
    if log_r.shape != emissions.shape:
        raise ContractError("log_r must match the emission matrix shape")
    backptr, final = _core.viterbi_forward(emissions, log_r, state_duration)
    k, d, best = _best_cell(final)
    n = emissions.shape[0] - 1
    path = [0] * (n + 1)
    while n >= 0:
        path[n] = k + 1
        if d > 0:
            d -= 1
        else:
            if n > 0:
                d = int(backptr[n, k])
                k -= 1
        n -= 1
    return path, best


def full_viterbi(score, all_frame_lmls, frame_rate: float,
                 duration: DurationModel = DurationModel()) -> list[int]:
    """Offline MAP alignment of every frame, tempo taken from the score."""
    lmls = np.asarray(all_frame_lmls, dtype=np.float64)
    if lmls.ndim != 2 or lmls.shape[0] == 0:
        raise ContractError("full_viterbi needs at least one frame")
    if lmls.shape[1] != score.num_states:
        raise ContractError("one LML column per score state is required")
    log_r = static_log_r(score.times_to_next, frame_rate, lmls.shape[0], duration)
    return viterbi_path(lmls, log_r, duration.state_duration)[0]


def path_log_prob(path: Sequence[int], emissions, log_r, state_duration: bool = True) -> float:
    """Joint log-probability of one monotone path, by direct summation."""
    emissions = np.asarray(emissions, dtype=np.float64)
    log_r = np.asarray(log_r, dtype=np.float64)
    if path[0] != 1:
        return -np.inf
    total = emissions[0, 0]
    d = 0
    for n in range(1, len(path)):
        prev, cur = path[n - 1], path[n]
        lr = log_r[n, prev - 1]
        log_self = lr * (d + 1) if state_duration else lr
        if cur == prev:
            total += log_self
            d += 1
        elif cur == prev + 1:
            total += np.log(-np.expm1(log_self))
            d = 0
        else:
            return -np.inf
        total += emissions[n, cur - 1]
    return float(total)


# -- trace files ------------------------------------------------------------

def write_trace(trace: AlignmentTrace | Iterable, sink):
    """One ``frame<TAB>state<TAB>log_prob`` line per entry, 6 decimals."""
    for frame, state, lp in trace:
        sink.write(f"{frame}\t{state}\t{lp:.6f}\n")


def format_trace(trace) -> str:
    buf = io.StringIO()
    write_trace(trace, buf)
    return buf.getvalue()


def read_trace(source) -> AlignmentTrace:
    text = source.read() if hasattr(source, "read") else str(source)
    out = AlignmentTrace()
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line:
            continue
        try:
            frame, state, lp = line.split("\t")
            out.append(int(frame), int(state), float(lp))
        except ValueError as exc:
            raise ContractError(f"trace line {lineno}: {exc}") from exc
    return out
