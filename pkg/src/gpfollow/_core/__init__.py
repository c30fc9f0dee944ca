"""Hot numerical kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it was built and imports cleanly.
Set ``GPFOLLOW_BACKEND=python`` to force the numpy fallback.

Exports
-------
kernel_lags
    Covariance values at a vector of lags for a sum of decaying cosines.
trellis_step
    One frame of the (state, run-length) Viterbi lattice.
viterbi_forward
    The lattice over a whole emission matrix, with back-pointers.
"""
import os

from . import _fallback

_forced = os.environ.get("GPFOLLOW_BACKEND", "").strip().lower()

if _forced in ("python", "numpy", "fallback"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _ext as _impl
        BACKEND = "compiled"
    except ImportError:
        if _forced == "compiled":
            raise
        _impl = _fallback
        BACKEND = "python"

kernel_lags = _impl.kernel_lags
trellis_step = _impl.trellis_step
viterbi_forward = _impl.viterbi_forward
log1mexp = _fallback.log1mexp

__all__ = ["BACKEND", "kernel_lags", "trellis_step", "viterbi_forward", "log1mexp"]
