"""Kernel dispatch layer.

Selects the compiled backend when the extension module is importable and
falls back to the numpy reference implementation otherwise.  The active
backend can be forced with the ``FLOWMI_KERNELS`` environment variable
(``numpy`` or ``cython``) or switched at runtime with :func:`set_backend`.

The wrappers below adapt shapes: elementwise kernels operate on flat views
and the result is reshaped to the operand shape, so callers may pass arrays
of any dimensionality (including 0-d).
"""

import os

from ..errors import ConfigError
from . import numpy_impl

try:
    from . import _speedups
except ImportError:
    _speedups = None

_impl = numpy_impl if _speedups is None else _speedups

_forced = os.environ.get("FLOWMI_KERNELS")
if _forced == "numpy":
    _impl = numpy_impl
elif _forced == "cython":
    if _speedups is None:
        raise ConfigError("FLOWMI_KERNELS=cython but the extension is not built")
    _impl = _speedups
elif _forced is not None:
    raise ConfigError(f"unknown FLOWMI_KERNELS value: {_forced!r}")


def available_backends():
    names = ["numpy"]
    if _speedups is not None:
        names.append("cython")
    return names


def backend_name():
    return _impl.name


def set_backend(name):
    global _impl
    if name == "numpy":
        _impl = numpy_impl
    elif name == "cython":
        if _speedups is None:
            raise ConfigError("compiled backend requested but not built")
        _impl = _speedups
    else:
        raise ConfigError(f"unknown backend: {name!r}")


def _flat(x):
    return x if x.ndim == 1 else x.reshape(-1)


# matrix products (shapes already canonical, no adaptation)

def mm_nn(a, b):
    return _impl.mm_nn(a, b)


def mm_nt(a, b):
    return _impl.mm_nt(a, b)


def mm_tn(a, b):
    return _impl.mm_tn(a, b)


def matvec(w, x):
    return _impl.matvec(w, x)


def vecmat(g, w):
    return _impl.vecmat(g, w)


def outer(g, x):
    return _impl.outer(g, x)


# elementwise

def ew_exp(x):
    return _impl.ew_exp(_flat(x)).reshape(x.shape)


def ew_log(x):
    return _impl.ew_log(_flat(x)).reshape(x.shape)


def ew_tanh(x):
    return _impl.ew_tanh(_flat(x)).reshape(x.shape)


def ew_relu(x):
    return _impl.ew_relu(_flat(x)).reshape(x.shape)


def ew_clip(x, lo, hi):
    return _impl.ew_clip(_flat(x), lo, hi).reshape(x.shape)


def ew_add(a, b):
    return _impl.ew_add(_flat(a), _flat(b)).reshape(a.shape)


def ew_sub(a, b):
    return _impl.ew_sub(_flat(a), _flat(b)).reshape(a.shape)


def ew_mul(a, b):
    return _impl.ew_mul(_flat(a), _flat(b)).reshape(a.shape)


def ew_div(a, b):
    return _impl.ew_div(_flat(a), _flat(b)).reshape(a.shape)


def ew_add_s(x, s):
    return _impl.ew_add_s(_flat(x), s).reshape(x.shape)


def ew_mul_s(x, s):
    return _impl.ew_mul_s(_flat(x), s).reshape(x.shape)


def ew_exp_grad(y, g):
    return _impl.ew_exp_grad(_flat(y), _flat(g)).reshape(y.shape)


def ew_log_grad(x, g):
    return _impl.ew_log_grad(_flat(x), _flat(g)).reshape(x.shape)


def ew_tanh_grad(y, g):
    return _impl.ew_tanh_grad(_flat(y), _flat(g)).reshape(y.shape)


def ew_relu_grad(x, g):
    return _impl.ew_relu_grad(_flat(x), _flat(g)).reshape(x.shape)


def ew_clip_grad(x, g, lo, hi):
    return _impl.ew_clip_grad(_flat(x), _flat(g), lo, hi).reshape(x.shape)


def reduce_sum(x):
    return _impl.reduce_sum(_flat(x))
