"""Command-line entry point: ``gpfollow <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace

import numpy as np

from . import _core
from .audio import hann_power_spectrum, read_wav, write_wav
from .calibration import estimate_weights, fit_envelope, fit_inharmonicity, lml_sweep
from .errors import ConfigError, FollowerError
from .kernel import CovarianceSpec, SpectralHyperparams, format_params, freq_to_midi, load_params
from .pipeline import EXIT_CONFIG, EXIT_OK, RunConfig, exit_status, run
from .score import apply_sustain, dump_score, midi_to_freq, read_midi
from .synth import render_score

log = logging.getLogger("gpfollow")


def _udp(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise argparse.ArgumentTypeError("expected host:port")
    try:
        return host, int(port)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad port {port!r}") from None


def _freq_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _params(args) -> SpectralHyperparams:
    return load_params(args.params) if args.params else SpectralHyperparams()


def _spectrum(path, start: int, length: int):
    pcm, rate = read_wav(path)
    if start + length > pcm.size:
        raise ConfigError(f"{path}: window {start}..{start + length} exceeds {pcm.size} samples")
    return hann_power_spectrum(pcm[start:start + length], rate)


# -- subcommands ------------------------------------------------------------

def cmd_follow(args) -> int:
    config = RunConfig(
        mode=args.mode, score_path=args.score, audio_path=args.audio,
        frame_length=args.frame_length, hop_length=args.hop_length,
        energy_threshold=args.energy_threshold, sample_rate=args.sample_rate,
        params_path=args.params, sigma_n=args.sigma_n, sustain=args.sustain,
        state_duration=not args.no_state_duration, adaptive_tempo=not args.static_tempo,
        fallback_p_self=args.fallback_p_self, window_length=args.window_length,
        window_threshold=args.window_threshold, h=args.h, udp=args.udp,
        trace_path=args.trace, lml_trace_path=args.lml_trace, paced=args.paced,
        play=args.play, live_seconds=args.seconds,
    )
    result = run(config)
    if result.error is not None:
        print(f"error: {result.error}", file=sys.stderr)
    else:
        print(result.stats.summary(), file=sys.stderr)
        if not args.trace:
            for frame, state, lp in result.trace:
                print(f"{frame}\t{state}\t{lp:.6f}")
    return result.status


def cmd_sweep(args) -> int:
    pcm, rate = read_wav(args.audio)
    params = _params(args)
    spec = CovarianceSpec(args.frame_length, rate)
    y = pcm[args.start: args.start + args.frame_length]
    if y.size != args.frame_length:
        raise ConfigError("sweep window runs past the end of the recording")
    grid = args.grid or list(np.geomspace(args.fmin, args.fmax, args.num))
    res = lml_sweep(y, grid, params, spec)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["frequency", "lml"])
    for f, v in zip(res.grid, res.lmls):
        w.writerow([f"{f:.6f}", f"{v:.6f}"])
    print(f"argmax {res.argmax_freq:.6f}", file=sys.stderr)
    return EXIT_OK


def cmd_fit_envelope(args) -> int:
    if len(args.audio) != len(args.f0):
        raise ConfigError("give one --f0 per --audio")
    spectra = [(*_spectrum(p, args.start, args.window), f0) for p, f0 in zip(args.audio, args.f0)]
    T, v = fit_envelope(spectra, (args.T, args.v), args.harmonics)
    print(f"T = {T!r}\nv = {v!r}")
    return EXIT_OK


def cmd_fit_inharmonicity(args) -> int:
    freqs, power = _spectrum(args.audio, args.start, args.window)
    f0 = midi_to_freq(args.midi) if args.midi is not None else args.f0
    if f0 is None:
        raise ConfigError("give --f0 or --midi")
    B = fit_inharmonicity(freqs, power, f0, args.harmonics, args.initial)
    note = args.midi if args.midi is not None else freq_to_midi(f0)
    sys.stdout.write(format_params(SpectralHyperparams(inharmonicity={note: B}), table_only=True))
    return EXIT_OK


def cmd_estimate_weights(args) -> int:
    freqs, power = _spectrum(args.audio, args.start, args.window)
    params = _params(args)
    if args.sigma_f is not None:
        params = replace(params, sigma_f=args.sigma_f)
    w = estimate_weights(freqs, power, args.f0, params)
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["fundamental", "weight"])
    for f, x in zip(args.f0, w):
        out.writerow([f"{f:.6f}", f"{x:.6f}"])
    return EXIT_OK


def cmd_dump_score(args) -> int:
    sys.stdout.write(dump_score(apply_sustain(read_midi(args.score), args.sustain)))
    return EXIT_OK


def cmd_render(args) -> int:
    score = read_midi(args.score)
    pcm = render_score(score, args.sample_rate, params=_params(args), stretch=args.stretch,
                       snr_db=args.snr, seed=args.seed, law=args.law)
    write_wav(args.output, pcm, int(args.sample_rate), float32=args.float32)
    return EXIT_OK


def cmd_info(args) -> int:
    print(f"backend {_core.BACKEND}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gpfollow", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("follow", help="follow a performance against a MIDI score")
    f.add_argument("--mode", choices=["prerecorded", "live"], default="prerecorded")
    f.add_argument("--score", required=True)
    f.add_argument("--audio")
    f.add_argument("--frame-length", type=int, default=800)
    f.add_argument("--hop-length", type=int, default=4000)
    f.add_argument("--energy-threshold", type=float, default=1e-4)
    f.add_argument("--sample-rate", type=float, default=44100.0)
    f.add_argument("--sigma-n", type=float)
    f.add_argument("--sustain", type=int, default=0)
    f.add_argument("--no-state-duration", action="store_true")
    f.add_argument("--static-tempo", action="store_true",
                   help="take expected note lengths from the score tempo only")
    f.add_argument("--fallback-p-self", type=float, default=0.95)
    f.add_argument("--window-length", type=int, default=6)
    f.add_argument("--window-threshold", type=int, default=4)
    f.add_argument("--h", type=int, default=4)
    f.add_argument("--udp", type=_udp)
    f.add_argument("--trace")
    f.add_argument("--lml-trace")
    f.add_argument("--paced", action="store_true")
    f.add_argument("--play", action="store_true")
    f.add_argument("--seconds", type=float, help="stop live capture after this long")
    f.add_argument("--params")
    f.set_defaults(func=cmd_follow)

    def spectrum_args(s, window=8192):
        s.add_argument("--start", type=int, default=0, help="first sample of the analysis window")
        s.add_argument("--window", type=int, default=window, help="analysis window length")

    s = sub.add_parser("sweep", help="LML of one frame across candidate fundamentals (CSV)")
    s.add_argument("--audio", required=True)
    s.add_argument("--start", type=int, default=0)
    s.add_argument("--frame-length", type=int, default=800)
    s.add_argument("--grid", type=_freq_list)
    s.add_argument("--fmin", type=float, default=50.0)
    s.add_argument("--fmax", type=float, default=2000.0)
    s.add_argument("--num", type=int, default=200)
    s.add_argument("--params")
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("fit-envelope", help="fit T and v from single-note recordings")
    e.add_argument("--audio", action="append", required=True)
    e.add_argument("--f0", type=float, action="append", required=True)
    e.add_argument("--harmonics", type=int, default=9)
    e.add_argument("--T", type=float, default=0.465)
    e.add_argument("--v", type=float, default=2.37)
    spectrum_args(e)
    e.set_defaults(func=cmd_fit_envelope)

    i = sub.add_parser("fit-inharmonicity", help="fit B for one note; prints a config line")
    i.add_argument("--audio", required=True)
    i.add_argument("--f0", type=float)
    i.add_argument("--midi", type=int)
    i.add_argument("--harmonics", type=int, default=9)
    i.add_argument("--initial", type=float, default=0.0)
    spectrum_args(i)
    i.set_defaults(func=cmd_fit_inharmonicity)

    w = sub.add_parser("estimate-weights", help="relative note weights of a chord (CSV)")
    w.add_argument("--audio", required=True)
    w.add_argument("--f0", type=_freq_list, required=True)
    w.add_argument("--sigma-f", type=float)
    w.add_argument("--params")
    spectrum_args(w)
    w.set_defaults(func=cmd_estimate_weights)

    d = sub.add_parser("dump-score", help="print the state sequence of a MIDI file")
    d.add_argument("--score", required=True)
    d.add_argument("--sustain", type=int, default=0)
    d.set_defaults(func=cmd_dump_score)

    r = sub.add_parser("render", help="synthesize a score to WAV")
    r.add_argument("--score", required=True)
    r.add_argument("--output", required=True)
    r.add_argument("--sample-rate", type=float, default=44100.0)
    r.add_argument("--stretch", type=float, default=1.0)
    r.add_argument("--snr", type=float, default=20.0)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--float32", action="store_true")
    r.add_argument("--law", choices=["envelope", "variance"], default="envelope",
                   help="harmonic amplitude E_m or sqrt(2 E_m)")
    r.add_argument("--params")
    r.set_defaults(func=cmd_render)

    b = sub.add_parser("info", help="show which numerical backend is active")
    b.set_defaults(func=cmd_info)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors; those are config errors
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FollowerError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_status(exc)


if __name__ == "__main__":
    sys.exit(main())
