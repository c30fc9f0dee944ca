"""Concurrent follower: frame source -> decoder -> backend, plus optional playback.

Stages run in their own threads and talk through bounded queues. A ``None``
item closes a queue; every stage forwards it downstream on exit, so shutdown
propagates whether a stage finished or failed. The first failure is kept as
a :class:`StageError` and mapped to an exit status.
"""
from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .audio import FrameConfig, LiveCapture, iter_paced, read_wav, slice_wav
from .duration import DurationModel
from .errors import (ConfigError, ContractError, MidiParseError,
                     NumericError, ResourceError, StageError)
from .kernel import CovarianceSpec, SpectralHyperparams, load_params
from .lml import LMLTraceWriter, precompute_cache
from .score import Score, apply_sustain, read_midi
from .viterbi import AlignmentTrace, DecoderConfig, WindowedViterbi

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3
SIGMA_N_RANGE = (1e-4, 10.0)
_CLOSE = None


@dataclass
class RunConfig:
    mode: str = "prerecorded"
    score_path: str | None = None
    audio_path: str | None = None
    frame_length: int = 800
    hop_length: int = 4000
    energy_threshold: float = 1e-4
    sample_rate: float = 44100.0
    params_path: str | None = None
    sigma_n: float | None = None
    sustain: int = 0
    state_duration: bool = True
    adaptive_tempo: bool = True
    fallback_p_self: float = 0.95
    window_length: int = 6
    window_threshold: int = 4
    h: int = 4
    udp: tuple[str, int] | None = None
    trace_path: str | None = None
    lml_trace_path: str | None = None
    paced: bool = False
    play: bool = False
    frame_capacity: int = 64
    estimate_capacity: int = 1024
    live_seconds: float | None = None

    def validate(self):
        """Raise :class:`ConfigError` for any illegal combination or value."""
        if self.mode not in ("prerecorded", "live"):
            raise ConfigError(f"mode must be 'prerecorded' or 'live', not {self.mode!r}")
        if not self.score_path:
            raise ConfigError("a score is required")
        if self.mode == "prerecorded" and not self.audio_path:
            raise ConfigError("prerecorded mode needs an audio file")
        if self.play and self.mode != "prerecorded":
            raise ConfigError("playback is only available in prerecorded mode")
        if self.sigma_n is not None and not SIGMA_N_RANGE[0] <= self.sigma_n <= SIGMA_N_RANGE[1]:
            raise ConfigError(f"sigma_n must lie in [{SIGMA_N_RANGE[0]:g}, {SIGMA_N_RANGE[1]:g}]")
        if int(self.sustain) != self.sustain or self.sustain < 0:
            raise ConfigError("sustain must be a nonnegative integer")
        if self.frame_capacity < 1 or self.estimate_capacity < 1:
            raise ConfigError("queue capacities must be positive")
        try:
            self.frame_config()
            self.decoder_config()
            self.duration_model()
        except ContractError as exc:
            raise ConfigError(str(exc)) from exc

    def frame_config(self) -> FrameConfig:
        return FrameConfig(self.frame_length, self.hop_length, self.energy_threshold, self.sample_rate)

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(self.window_length, self.window_threshold)

    def duration_model(self) -> DurationModel:
        return DurationModel(self.state_duration, self.adaptive_tempo, self.h, self.fallback_p_self)

    def hyperparams(self) -> SpectralHyperparams:
        params = load_params(self.params_path) if self.params_path else SpectralHyperparams()
        if self.sigma_n is not None:
            params = replace(params, noise_sigma=self.sigma_n)
        return params


@dataclass
class RunStats:
    frames_processed: int = 0
    cache_hits: int = 0
    cache_misses: int = 0
    factorizations: int = 0
    overruns: int = 0
    datagrams_sent: int = 0
    send_errors: int = 0
    latency_violations: int = 0
    step_latencies: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def mean_step_latency(self) -> float:
        return float(np.mean(self.step_latencies)) if self.step_latencies else 0.0

    def summary(self) -> str:
        return (f"frames={self.frames_processed} cache_hits={self.cache_hits} "
                f"cache_misses={self.cache_misses} factorizations={self.factorizations} "
                f"overruns={self.overruns} datagrams={self.datagrams_sent} "
                f"send_errors={self.send_errors} latency_violations={self.latency_violations} "
                f"mean_step_ms={1e3 * self.mean_step_latency:.3f} wall_s={self.wall_time:.3f}")


@dataclass
class RunResult:
    status: int
    trace: AlignmentTrace
    stats: RunStats
    error: StageError | None = None


def exit_status(exc: BaseException) -> int:
    """Map a failure to the CLI exit code."""
    cause = exc.cause if isinstance(exc, StageError) else exc
    if isinstance(cause, (NumericError, ResourceError)):
        return EXIT_NUMERIC
    if isinstance(cause, (OSError, MidiParseError)):
        return EXIT_IO
    if isinstance(cause, (ConfigError, ContractError)):
        return EXIT_CONFIG
    return EXIT_NUMERIC if isinstance(cause, ArithmeticError) else EXIT_IO


# -- backend ----------------------------------------------------------------

def format_datagram(frame_index: int, state_index: int, total: int) -> bytes:
    return f"{frame_index} {state_index} {total}\n".encode("ascii")


def emit_position(sock: socket.socket, address, frame_index: int, state_index: int,
                  total: int) -> bool:
    """Send one estimate; returns False (and logs) if the send failed."""
    try:
        sock.sendto(format_datagram(frame_index, state_index, total), address)
        return True
    except OSError as exc:
        log.debug("datagram to %s failed: %s", address, exc)
        return False


# -- playback ---------------------------------------------------------------

def _sounddevice_player(pcm, sample_rate):
    import sounddevice as sd  # ImportError/OSError handled by the caller

    sd.play(pcm.astype(np.float32), int(sample_rate))
    sd.wait()


def play_audio(pcm, sample_rate: float, start: threading.Event, *,
               player: Callable | None = None, abort: threading.Event | None = None) -> bool:
    """Wait for ``start`` then play ``pcm``; device problems only warn."""
    while not start.wait(0.05):
        if abort is not None and abort.is_set():
            return False
    try:
        (player or _sounddevice_player)(pcm, sample_rate)
        return True
    except Exception as exc:  # no device, PortAudio missing, ...
        log.warning("playback unavailable: %s", exc)
        return False


# -- stages -----------------------------------------------------------------

def _put(q: queue.Queue, item, abort: threading.Event):
    while True:
        try:
            q.put(item, timeout=0.05)
            return
        except queue.Full:
            if abort.is_set():
                return


def _get(q: queue.Queue, abort: threading.Event):
    while True:
        try:
            return q.get(timeout=0.05)
        except queue.Empty:
            if abort.is_set():
                return _CLOSE


class _Run:
    def __init__(self, config: RunConfig, score: Score, pcm, cache, params, *,
                 clock, sleep, stream_factory, player):
        self.config = config
        self.score = score
        self.pcm = pcm
        self.cache = cache
        self.params = params
        self.cfg = config.frame_config()
        self.clock = clock
        self.sleep = sleep
        self.stream_factory = stream_factory
        self.player = player
        self.frames: queue.Queue = queue.Queue(config.frame_capacity)
        self.estimates: queue.Queue = queue.Queue(config.estimate_capacity)
        self.abort = threading.Event()
        self.follower_started = threading.Event()
        self.errors: list[StageError] = []
        self.stats = RunStats(cache_hits=0, factorizations=cache.factorizations)
        self.trace = AlignmentTrace()
        self._lock = threading.Lock()

    def _fail(self, stage, exc):
        with self._lock:
            self.errors.append(exc if isinstance(exc, StageError) else StageError(stage, exc))
        self.abort.set()

    def source(self):
        try:
            if self.config.mode == "live":
                self._live_source()
            else:
                frames = slice_wav(self.pcm, self.cfg)
                if self.config.paced:
                    self.follower_started.wait()
                    frames = iter_paced(frames, self.cfg, self.clock, self.sleep, self.t0)
                for frame in frames:
                    if self.abort.is_set():
                        break
                    _put(self.frames, frame, self.abort)
        except BaseException as exc:
            self._fail("source", exc)
        finally:
            _put(self.frames, _CLOSE, self.abort)

    def _live_source(self):
        cap = LiveCapture(self.cfg, lambda f: _put(self.frames, f, self.abort),
                          capacity=self.config.frame_capacity, stream_factory=self.stream_factory)
        cap.start()
        try:
            deadline = None if self.config.live_seconds is None else self.clock() + self.config.live_seconds
            while not self.abort.is_set() and (deadline is None or self.clock() < deadline):
                self.sleep(0.02)
        finally:
            cap.stop()
            self.stats.overruns = cap.overruns

    def follower(self):
        lml_file = None
        try:
            decoder = WindowedViterbi.for_score(self.score, self.cfg.frame_rate,
                                                self.config.decoder_config(),
                                                self.config.duration_model())
            notes = [s.midi_notes for s in self.score.states]
            lml_writer = None
            if self.config.lml_trace_path:
                lml_file = open(self.config.lml_trace_path, "w", newline="")
                lml_writer = LMLTraceWriter(lml_file)
            hop = self.cfg.hop_seconds
            self.t0 = self.clock()
            self.follower_started.set()
            while True:
                frame = _get(self.frames, self.abort)
                if frame is _CLOSE:
                    break
                began = self.clock()
                lmls = {k: self.cache.lml(frame.samples, notes[k - 1]) for k in decoder.window_states}
                state = decoder.step(lmls)
                elapsed = self.clock() - began
                self.stats.step_latencies.append(elapsed)
                if self.config.paced and elapsed > hop:
                    self.stats.latency_violations += 1
                if lml_writer is not None:
                    lml_writer.write(frame.frame_index, lmls)
                self.stats.frames_processed += 1
                _put(self.estimates, (frame.frame_index, state, decoder.best_log_prob), self.abort)
        except BaseException as exc:
            self._fail("follower", exc)
        finally:
            self.follower_started.set()
            if lml_file is not None:
                lml_file.close()
            self.stats.cache_hits = self.cache.hits
            self.stats.cache_misses = self.cache.misses
            _put(self.estimates, _CLOSE, self.abort)

    def backend(self):
        sock = None
        trace_file = None
        try:
            if self.config.udp is not None:
                sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            if self.config.trace_path:
                trace_file = open(self.config.trace_path, "w", newline="")
            total = self.score.num_states
            while True:
                item = _get(self.estimates, self.abort)
                if item is _CLOSE:
                    break
                frame_index, state, lp = item
                self.trace.append(frame_index, state, lp)
                if trace_file is not None:
                    trace_file.write(f"{frame_index}\t{state}\t{lp:.6f}\n")
                if sock is not None:
                    if emit_position(sock, self.config.udp, frame_index, state, total):
                        self.stats.datagrams_sent += 1
                    else:
                        self.stats.send_errors += 1
        except BaseException as exc:
            self._fail("backend", exc)
        finally:
            if sock is not None:
                sock.close()
            if trace_file is not None:
                trace_file.close()

    def playback(self):
        play_audio(self.pcm, self.cfg.sample_rate, self.follower_started,
                   player=self.player, abort=self.abort)

    def execute(self):
        self.t0 = self.clock()
        workers = [threading.Thread(target=self.follower, name="follower"),
                   threading.Thread(target=self.backend, name="backend"),
                   threading.Thread(target=self.source, name="source")]
        if self.config.play:
            workers.append(threading.Thread(target=self.playback, name="player", daemon=True))
        started = self.clock()
        for w in workers:
            w.start()
        try:
            for w in workers[:3]:
                while w.is_alive():
                    w.join(0.1)
        except KeyboardInterrupt:
            self.abort.set()
            for w in workers[:3]:
                w.join()
        self.stats.wall_time = self.clock() - started


def _load_inputs(config: RunConfig):
    try:
        config.validate()
        params = config.hyperparams()
    except ConfigError as exc:
        raise StageError("config", exc) from exc
    try:
        score = apply_sustain(read_midi(config.score_path), config.sustain)
    except (OSError, MidiParseError) as exc:
        raise StageError("score", exc) from exc
    except ContractError as exc:  # well-formed file without a usable score
        raise StageError("score", OSError(str(exc))) from exc
    pcm = None
    if config.audio_path:
        try:
            pcm, _ = read_wav(config.audio_path, config.sample_rate)
            if pcm.size < config.frame_length:
                raise ContractError("audio shorter than one frame")
        except ConfigError as exc:
            raise StageError("audio", exc) from exc
        except (OSError, ContractError) as exc:
            raise StageError("audio", OSError(str(exc))) from exc
    try:
        spec = CovarianceSpec(config.frame_length, config.sample_rate)
        cache = precompute_cache(score, spec, params)
    except (NumericError, ResourceError) as exc:
        raise StageError("precompute", exc) from exc
    return score, pcm, cache, params


def run(config: RunConfig, *, clock=time.perf_counter, sleep=time.sleep,
        stream_factory=None, player=None) -> RunResult:
    """Follow one performance end to end; never raises for stage failures.

    ``stream_factory`` (live input) and ``player`` (playback) can be injected
    for testing or for non-default devices.
    """
    try:
        score, pcm, cache, params = _load_inputs(config)
    except StageError as exc:
        return RunResult(exit_status(exc), AlignmentTrace(), RunStats(), exc)
    r = _Run(config, score, pcm, cache, params, clock=clock, sleep=sleep,
             stream_factory=stream_factory, player=player)
    r.execute()
    if r.errors:
        err = r.errors[0]
        return RunResult(exit_status(err), r.trace, r.stats, err)
    log.info("%s", r.stats.summary())
    return RunResult(EXIT_OK, r.trace, r.stats)
