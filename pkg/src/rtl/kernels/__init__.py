"""Hot kernels for the attention and pooling steps of the encoder.

The compiled extension is used when it was built; otherwise, or when
``RTL_PURE_PYTHON=1`` is set, the numpy implementation is used. Both expose
the same functions, callable with C-contiguous float64 arrays.
"""
import os

import numpy as np

from . import _reference

try:
    from . import _ckernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_NAMES = ("attention_forward", "attention_backward", "pool_forward", "pool_backward", "cdf_l1")
BACKENDS = {"python": _reference}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled


def _pick():
    if os.environ.get("RTL_PURE_PYTHON", "") not in ("", "0") or _compiled is None:
        return "python"
    return "compiled"


BACKEND = _pick()


def use_backend(name):
    """Switch the active backend at runtime (``"python"`` or ``"compiled"``)."""
    global BACKEND
    if name not in BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}")
    BACKEND = name


def _dispatch(fname):
    def call(*arrays):
        fn = getattr(BACKENDS[BACKEND], fname)
        args = [
            np.ascontiguousarray(a, dtype=np.int64 if a.dtype.kind in "iu" else np.float64)
            for a in arrays
        ]
        return fn(*args)

    call.__name__ = fname
    return call


attention_forward = _dispatch("attention_forward")
attention_backward = _dispatch("attention_backward")
pool_forward = _dispatch("pool_forward")
pool_backward = _dispatch("pool_backward")
cdf_l1 = _dispatch("cdf_l1")
