"""Kernel dispatch: backend selection, cross-backend agreement, shapes."""

import os
import subprocess
import sys

import numpy as np
import pytest

from flowmi import _kernels as K
from flowmi.errors import ConfigError
from flowmi.rng import Rng


@pytest.fixture
def both_backends():
    """Yields the list of available backends and restores the active one."""
    current = K.backend_name()
    yield K.available_backends()
    K.set_backend(current)


def test_backend_roundtrip(both_backends):
    for name in both_backends:
        K.set_backend(name)
        assert K.backend_name() == name
    with pytest.raises(ConfigError):
        K.set_backend("fortran")


def test_compiled_backend_present():
    # the build is expected to produce the compiled twin; if this fails the
    # extension did not compile
    assert "cython" in K.available_backends()


def _sample_args(rng):
    a = rng.normals(12).reshape(3, 4)
    b = rng.normals(20).reshape(4, 5)
    w = rng.normals(12).reshape(4, 3)
    x = rng.normals(3)
    g = rng.normals(4)
    return a, b, w, x, g


def test_backends_agree(both_backends):
    """The numpy reference and the compiled twin agree to a few ulps on
    every kernel (addition chains and libm calls may round differently)."""
    rng = Rng(31)
    a, b, w, x, g = _sample_args(rng)
    y = rng.normals(7)
    outputs = {}
    for name in both_backends:
        K.set_backend(name)
        outputs[name] = {
            "mm_nn": K.mm_nn(a, b),
            "mm_nt": K.mm_nt(a, b.T.copy()),
            "mm_tn": K.mm_tn(a.T.copy(), b),
            "matvec": K.matvec(w, x),
            "vecmat": K.vecmat(g, w),
            "outer": K.outer(g, x),
            "exp": K.ew_exp(y),
            "log": K.ew_log(np.abs(y) + 0.5),
            "tanh": K.ew_tanh(y),
            "relu": K.ew_relu(y),
            "clip": K.ew_clip(y, -0.5, 0.5),
            "add": K.ew_add(y, y),
            "sub": K.ew_sub(y, 2.0 * y),
            "mul": K.ew_mul(y, y),
            "div": K.ew_div(y, np.abs(y) + 1.0),
            "add_s": K.ew_add_s(y, 0.25),
            "mul_s": K.ew_mul_s(y, -3.0),
            "exp_grad": K.ew_exp_grad(np.exp(y), y),
            "log_grad": K.ew_log_grad(np.abs(y) + 0.5, y),
            "tanh_grad": K.ew_tanh_grad(np.tanh(y), y),
            "relu_grad": K.ew_relu_grad(y, y),
            "clip_grad": K.ew_clip_grad(y, y, -0.5, 0.5),
            "sum": K.reduce_sum(y),
        }
    if len(both_backends) < 2:
        pytest.skip("only one backend available")
    ref, other = (outputs[name] for name in both_backends[:2])
    for key in ref:
        np.testing.assert_allclose(
            ref[key], other[key], rtol=1e-14, atol=1e-15, err_msg=key
        )


def test_linear_kernels_match_numpy_exactly():
    rng = Rng(5)
    a, b, w, x, g = _sample_args(rng)
    np.testing.assert_allclose(K.mm_nn(a, b), a @ b, rtol=1e-13)
    np.testing.assert_allclose(K.mm_nt(a, b.T.copy()), a @ b, rtol=1e-13)
    np.testing.assert_allclose(K.mm_tn(a.T.copy(), b), a @ b, rtol=1e-13)
    np.testing.assert_allclose(K.matvec(w, x), w @ x, rtol=1e-13)
    np.testing.assert_allclose(K.vecmat(g, w), g @ w, rtol=1e-13)
    np.testing.assert_allclose(K.outer(g, x), np.outer(g, x), rtol=1e-15)


def test_elementwise_kernels_preserve_shape():
    x = Rng(2).normals(6).reshape(2, 3)
    assert K.ew_exp(x).shape == (2, 3)
    assert K.ew_clip(x, -1.0, 1.0).shape == (2, 3)
    assert K.ew_add(x, x).shape == (2, 3)
    assert np.isscalar(K.reduce_sum(x)) or K.reduce_sum(x).shape == ()


def test_reduce_sum_row_major_order():
    # fixed accumulation order: result is bitwise equal to a python loop over
    # the flattened array
    x = Rng(13).normals(17)
    acc = 0.0
    for v in x:
        acc += v
    assert float(K.reduce_sum(x)) == acc


def test_env_override_selects_backend():
    env = dict(os.environ)
    env["FLOWMI_KERNELS"] = "numpy"
    out = subprocess.run(
        [sys.executable, "-c",
         "from flowmi import _kernels; print(_kernels.backend_name())"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "numpy"

    env["FLOWMI_KERNELS"] = "nonsense"
    out = subprocess.run(
        [sys.executable, "-c", "import flowmi"],
        env=env, capture_output=True, text=True,
    )
    assert out.returncode != 0
    assert "FLOWMI_KERNELS" in out.stderr
