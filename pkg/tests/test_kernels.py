"""The compiled and numpy kernels must agree."""
import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcpredict.numerics import _pykernels as py
from bcpredict.numerics import kernels

ck = pytest.importorskip("bcpredict.numerics._ckernels")


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python", "mixed")
    assert set(kernels.BACKENDS) == {"conv", "pool"}


@pytest.mark.parametrize("mode, expect", [
    ("python", {"conv": "python", "pool": "python"}),
    ("cython", {"conv": "cython", "pool": "cython"}),
    ("auto", {"conv": "python", "pool": "cython"}),
])
def test_backend_override(mode, expect):
    code = "import json; from bcpredict.numerics import kernels; print(json.dumps(kernels.BACKENDS))"
    env = {**os.environ, "BCPREDICT_KERNELS": mode}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert json.loads(out.stdout) == expect


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 30), st.integers(1, 13), st.integers(1, 6),
       st.integers(1, 8), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_conv_forward_backward_agree(B, extra, d, width, F, pool, seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(B, width + extra - 1, d))
    w, b = r.normal(size=(F, width, d)), r.normal(size=F)
    a, c = py.conv_forward(x, w, b), ck.conv_forward(x, w, b)
    np.testing.assert_allclose(a, c, rtol=0, atol=1e-12)
    g = r.normal(size=a.shape)
    for u, v in zip(py.conv_backward(x, w, g), ck.conv_backward(x, w, g)):
        np.testing.assert_allclose(u, v, rtol=0, atol=1e-11)
    o1, a1 = py.relu_maxpool_forward(a, pool)
    o2, a2 = ck.relu_maxpool_forward(a, pool)
    np.testing.assert_array_equal(o1, o2)
    np.testing.assert_array_equal(a1, a2)
    go = r.normal(size=o1.shape)
    np.testing.assert_array_equal(py.relu_maxpool_backward(go, o1, a1, a.shape[1]),
                                  ck.relu_maxpool_backward(go, o2, a2, a.shape[1]))


def test_maxpool_ties_pick_first_row():
    m = np.zeros((1, 4, 1))
    m[0, 1, 0] = m[0, 3, 0] = 2.0
    for mod in (py, ck):
        out, arg = mod.relu_maxpool_forward(m, 4)
        assert out[0, 0, 0] == 2.0 and arg[0, 0, 0] == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 5))
def test_maxpool_nan_propagates_identically(seed, pool):
    r = np.random.default_rng(seed)
    m = r.normal(size=(2, 12, 3))
    m[r.random(m.shape) < 0.2] = np.nan
    o1, a1 = py.relu_maxpool_forward(m, pool)
    o2, a2 = ck.relu_maxpool_forward(m, pool)
    np.testing.assert_array_equal(o1, o2)  # NaN positions must match too
    np.testing.assert_array_equal(a1, a2)
