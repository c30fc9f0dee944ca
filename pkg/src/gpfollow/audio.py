"""Audioframes from WAV files or a live input stream, plus spectrum analysis.

Frames start every ``hop_length`` samples. Frames whose RMS falls below the
energy threshold are withheld but still consume a frame index, so the index
of an emitted frame always equals ``start_sample // hop_length``.
"""
from __future__ import annotations

import collections
import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

import numpy as np
from scipy.io import wavfile
from scipy.signal.windows import hann

from .errors import AudioDeviceError, ConfigError, ContractError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Audioframe:
    samples: np.ndarray
    frame_index: int
    start_sample: int


@dataclass(frozen=True)
class FrameConfig:
    frame_length: int = 800
    hop_length: int = 4000
    energy_threshold: float = 1e-4
    sample_rate: float = 44100.0

    def __post_init__(self):
        if int(self.frame_length) != self.frame_length or self.frame_length < 2:
            raise ContractError("frame_length must be an integer >= 2")
        if int(self.hop_length) != self.hop_length or self.hop_length < 1:
            raise ContractError("hop_length must be a positive integer")
        if self.energy_threshold < 0:
            raise ContractError("energy_threshold must be nonnegative")
        if not self.sample_rate > 0:
            raise ContractError("sample_rate must be positive")
        object.__setattr__(self, "frame_length", int(self.frame_length))
        object.__setattr__(self, "hop_length", int(self.hop_length))

    @property
    def frame_rate(self) -> float:
        """Audioframes per second."""
        return self.sample_rate / self.hop_length

    @property
    def hop_seconds(self) -> float:
        return self.hop_length / self.sample_rate


def frame_energy(samples) -> float:
    """Root mean square of ``samples``."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ContractError("cannot take the energy of an empty frame")
    return float(np.sqrt(np.mean(x * x)))


def _gate(samples, index, start, cfg) -> Audioframe | None:
    if frame_energy(samples) < cfg.energy_threshold:
        return None
    return Audioframe(samples, index, start)


def slice_wav(pcm, cfg: FrameConfig) -> list[Audioframe]:
    """Cut a whole recording into gated audioframes."""
    pcm = np.asarray(pcm, dtype=np.float64)
    if pcm.ndim != 1:
        raise ContractError("pcm must be a mono sample vector")
    if pcm.size < cfg.frame_length:
        raise ContractError(f"{pcm.size} samples is shorter than one frame of {cfg.frame_length}")
    count = (pcm.size - cfg.frame_length) // cfg.hop_length + 1
    frames = []
    for n in range(count):
        start = n * cfg.hop_length
        frame = _gate(pcm[start:start + cfg.frame_length].copy(), n, start, cfg)
        if frame is not None:
            frames.append(frame)
    return frames


class FrameSlicer:
    """Incremental slicer: feed arbitrary chunks, get the frames they complete."""

    def __init__(self, cfg: FrameConfig):
        self.cfg = cfg
        self._buf = np.zeros(0)
        self._buf_start = 0
        self.next_index = 0

    def push(self, chunk) -> list[Audioframe]:
        chunk = np.asarray(chunk, dtype=np.float64).reshape(-1)
        self._buf = np.concatenate([self._buf, chunk])
        cfg = self.cfg
        out = []
        while True:
            start = self.next_index * cfg.hop_length
            offset = start - self._buf_start
            if offset + cfg.frame_length > self._buf.size:
                break
            frame = _gate(self._buf[offset:offset + cfg.frame_length].copy(),
                          self.next_index, start, cfg)
            if frame is not None:
                out.append(frame)
            self.next_index += 1
        drop = min(self.next_index * cfg.hop_length - self._buf_start, self._buf.size)
        self._buf = self._buf[drop:]
        self._buf_start += drop
        return out


# -- WAV files --------------------------------------------------------------

def read_wav(path, sample_rate: float | None = None) -> tuple[np.ndarray, int]:
    """Mono float samples in [-1, 1] and the file's sample rate.

    16/24/32-bit integer PCM and 32-bit float are accepted; stereo is
    averaged. A rate different from ``sample_rate`` is a configuration error.
    """
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read WAV file {path}: {exc}") from exc
    if data.dtype == np.int16:
        x = data / 32768.0
    elif data.dtype == np.int32:  # 24-bit data arrives left-justified in int32
        x = data / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise ContractError(f"unsupported WAV sample type {data.dtype}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    if sample_rate is not None and rate != sample_rate:
        raise ConfigError(f"WAV sample rate {rate} Hz differs from configured {sample_rate:g} Hz")
    return np.ascontiguousarray(x, dtype=np.float64), int(rate)


def write_wav(path, pcm, sample_rate: int, *, float32: bool = False):
    """Write mono samples as 16-bit PCM (clipped) or 32-bit float."""
    x = np.asarray(pcm, dtype=np.float64)
    if float32:
        data = x.astype(np.float32)
    else:
        data = np.round(np.clip(x, -1.0, 32767 / 32768) * 32768.0).astype(np.int16)
    wavfile.write(path, int(sample_rate), data)


# -- live capture -----------------------------------------------------------

def _sounddevice_factory(samplerate, blocksize, callback):
    try:
        import sounddevice as sd
    except (ImportError, OSError) as exc:
        raise AudioDeviceError(f"no audio backend available: {exc}") from exc
    try:
        return sd.InputStream(samplerate=samplerate, blocksize=blocksize, channels=1,
                              dtype="float32", callback=callback)
    except Exception as exc:  # PortAudioError does not subclass OSError
        raise AudioDeviceError(f"cannot open audio input: {exc}") from exc


class LiveCapture:
    """Push-based capture: device callback -> bounded buffer -> ``sink``.

    The device callback only slices and enqueues. A consumer thread hands
    frames to ``sink``. When the buffer is full the oldest frame is dropped
    and ``overruns`` is incremented.

    ``stream_factory(samplerate, blocksize, callback)`` must return an object
    with ``start`` and ``stop`` (and optionally ``close``); the callback is
    called as ``callback(indata, frames, time, status)``.
    """

    def __init__(self, cfg: FrameConfig, sink: Callable[[Audioframe], None], *,
                 capacity: int = 64, stream_factory=None):
        if capacity < 1:
            raise ContractError("capacity must be positive")
        self.cfg = cfg
        self.sink = sink
        self.capacity = capacity
        self.overruns = 0
        self.delivered = 0
        self._slicer = FrameSlicer(cfg)
        self._buffer: collections.deque = collections.deque()
        self._cond = threading.Condition()
        self._stopping = False
        self._factory = stream_factory or _sounddevice_factory
        self._stream = None
        self._consumer = None

    def _callback(self, indata, frames, time, status):
        if status:
            log.warning("audio input status: %s", status)
        data = np.asarray(indata, dtype=np.float64)
        if data.ndim == 2:
            data = data.mean(axis=1)
        new = self._slicer.push(data)
        if not new:
            return
        with self._cond:
            for frame in new:
                if len(self._buffer) >= self.capacity:
                    self._buffer.popleft()
                    self.overruns += 1
                self._buffer.append(frame)
            self._cond.notify()

    def _consume(self):
        while True:
            with self._cond:
                while not self._buffer and not self._stopping:
                    self._cond.wait()
                if not self._buffer:
                    return
                frame = self._buffer.popleft()
            self.sink(frame)
            self.delivered += 1

    def start(self) -> "LiveCapture":
        self._stream = self._factory(self.cfg.sample_rate, self.cfg.hop_length, self._callback)
        self._consumer = threading.Thread(target=self._consume, name="capture-consumer", daemon=True)
        self._consumer.start()
        try:
            self._stream.start()
        except Exception as exc:
            self.stop()
            raise AudioDeviceError(f"cannot start audio input: {exc}") from exc
        return self

    def stop(self):
        """Stop the device, deliver frames already buffered, join the consumer."""
        if self._stream is not None:
            try:
                self._stream.stop()
                close = getattr(self._stream, "close", None)
                if close is not None:
                    close()
            finally:
                self._stream = None
        with self._cond:
            self._stopping = True
            self._cond.notify_all()
        if self._consumer is not None:
            self._consumer.join()
            self._consumer = None
        if self.overruns:
            log.warning("live capture dropped %d frames", self.overruns)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def live_capture(cfg: FrameConfig, sink, **kwargs) -> LiveCapture:
    """Open the default input device and start delivering frames to ``sink``."""
    return LiveCapture(cfg, sink, **kwargs).start()


# -- spectrum ---------------------------------------------------------------

def hann_power_spectrum(frame, sample_rate: float) -> tuple[np.ndarray, np.ndarray]:
    """Bin frequencies ``i * fs / l`` and ``|DFT(hann * x)|^2`` for ``i <= l/2``."""
    x = frame.samples if isinstance(frame, Audioframe) else frame
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise ContractError("need at least two samples")
    power = np.abs(np.fft.rfft(x * hann(x.size, sym=False))) ** 2
    freqs = np.arange(power.size) * (sample_rate / x.size)
    return freqs, power


def iter_paced(frames, cfg: FrameConfig, clock, sleep, t0: float | None = None) -> Iterator[Audioframe]:
    """Yield each frame no earlier than ``t0 + start_sample / sample_rate``.

    A frame is complete once its last sample has been captured, so the
    release time uses the frame's end.
    """
    t0 = clock() if t0 is None else t0
    for frame in frames:
        due = t0 + (frame.start_sample + cfg.frame_length) / cfg.sample_rate
        wait = due - clock()
        if wait > 0:
            sleep(wait)
        yield frame
