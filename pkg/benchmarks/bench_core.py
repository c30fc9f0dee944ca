"""Time the compiled core against the numpy fallback.

    python benchmarks/bench_core.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from gpfollow._core import _fallback

try:
    from gpfollow._core import _ext
except ImportError:
    _ext = None


def cases(rng):
    E = rng.normal(0.0, 4.0, (400, 40))
    lr = np.log(rng.uniform(0.5, 0.99, E.shape))
    prev = rng.normal(0.0, 1.0, (6, 64))
    prev[:, 1:] -= np.arange(1, 64)  # finite but decaying run-length columns
    e = rng.normal(0.0, 1.0, 6)
    lr6 = np.log(rng.uniform(0.5, 0.99, 6))
    tau = np.arange(800) / 44100.0
    f, a = rng.uniform(50.0, 5000.0, 27), rng.uniform(0.0, 1.0, 27)
    return {
        "viterbi_forward 400x40": lambda m: m.viterbi_forward(E, lr, True),
        "trellis_step W=6 D=64": lambda m: m.trellis_step(prev, e, lr6, True),
        "kernel_lags l=800 27 partials": lambda m: m.kernel_lags(tau, f, a, 0.005),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    backends = {"python": _fallback}
    if _ext is not None:
        backends["compiled"] = _ext
    print(f"{'case':32s}" + "".join(f"{name:>14s}" for name in backends) + ("     speedup" if _ext else ""))
    for label, fn in cases(np.random.default_rng(0)).items():
        times = {}
        for name, mod in backends.items():
            timer = timeit.Timer(lambda: fn(mod))
            number, _ = timer.autorange()
            times[name] = min(timer.repeat(args.repeat, number)) / number
        row = f"{label:32s}" + "".join(f"{1e6 * t:12.1f}us" for t in times.values())
        if _ext is not None:
            row += f"{times['python'] / times['compiled']:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
