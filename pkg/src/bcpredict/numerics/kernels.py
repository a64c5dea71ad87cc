"""Backend selection for the hot kernels.

``BCPREDICT_KERNELS`` picks the implementation:

* ``auto`` (default): compiled relu/max-pool kernels, numpy convolution.
  The numpy conv is an im2col product handed to BLAS and beats the compiled
  loop; the pooling loops beat numpy's fancy indexing
  (see ``benchmarks/bench_kernels.py``).
* ``cython``: every kernel from the compiled extension.
* ``python``: every kernel from the numpy fallback.

Without a built extension every mode falls back to numpy.
"""
import os

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

MODE = os.environ.get("BCPREDICT_KERNELS", "auto").lower()
if MODE not in ("auto", "cython", "python"):
    raise ImportError(f"BCPREDICT_KERNELS must be auto, cython or python, got {MODE!r}")

_compiled = _ckernels if MODE != "python" else None
_conv = _compiled if (_compiled is not None and MODE == "cython") else _pykernels
_pool = _compiled if _compiled is not None else _pykernels

# which module serves each kernel family
BACKENDS = {
    "conv": "cython" if _conv is _ckernels else "python",
    "pool": "cython" if _pool is _ckernels else "python",
}
BACKEND = "python" if set(BACKENDS.values()) == {"python"} else (
    "cython" if set(BACKENDS.values()) == {"cython"} else "mixed")


def _c(a, dtype=np.float64):
    return np.ascontiguousarray(a, dtype=dtype)


def conv_forward(x, w, b):
    return _conv.conv_forward(_c(x), _c(w), _c(b))


def conv_backward(x, w, gout):
    return _conv.conv_backward(_c(x), _c(w), _c(gout))


def relu_maxpool_forward(m, pool):
    return _pool.relu_maxpool_forward(_c(m), int(pool))


def relu_maxpool_backward(gout, out, arg, rows):
    return _pool.relu_maxpool_backward(_c(gout), _c(out), _c(arg, np.intp), int(rows))
