"""Kernel backend selection.

The compiled extension is used when it was built and ``NOISYJOINT_PURE`` is
unset; otherwise the numpy fallback is used. Both give identical bits.
"""
import os

from . import _fallback

if os.environ.get("NOISYJOINT_PURE"):
    _compiled = None
else:
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

_impl = _compiled if _compiled is not None else _fallback
BACKEND = "compiled" if _compiled is not None else "python"

adam_update = _impl.adam_update
sample_from_cdf = _impl.sample_from_cdf
vote = _impl.vote
confusion = _impl.confusion


def backends():
    """Mapping of available backend name to module (used by parity tests and the benchmark)."""
    out = {"python": _fallback}
    try:
        from . import _kernels
    except ImportError:
        return out
    out["compiled"] = _kernels
    return out
