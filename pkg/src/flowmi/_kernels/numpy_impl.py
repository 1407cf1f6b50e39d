"""Reference kernel backend implemented with numpy.

Every kernel here has a bit-compatible signature twin in ``_speedups.pyx``.
Inputs are float64 and C-contiguous: matrices are 2-D, vectors and
elementwise operands are 1-D (the dispatch layer in ``__init__`` flattens
and reshapes around these calls).  Each backend is individually
deterministic; the two backends are not required to agree bitwise with each
other because their summation orders differ.
"""

import numpy as np

name = "numpy"


# matrix products

def mm_nn(a, b):
    return a @ b


def mm_nt(a, b):
    return a @ b.T


def mm_tn(a, b):
    return a.T @ b


def matvec(w, x):
    return w @ x


def vecmat(g, w):
    return g @ w


def outer(g, x):
    return np.outer(g, x)


# elementwise forward

def ew_exp(x):
    return np.exp(x)


def ew_log(x):
    return np.log(x)


def ew_tanh(x):
    return np.tanh(x)


def ew_relu(x):
    return np.maximum(x, 0.0)


def ew_clip(x, lo, hi):
    return np.clip(x, lo, hi)


def ew_add(a, b):
    return a + b


def ew_sub(a, b):
    return a - b


def ew_mul(a, b):
    return a * b


def ew_div(a, b):
    return a / b


def ew_add_s(x, s):
    return x + s


def ew_mul_s(x, s):
    return x * s


# elementwise backward (g is the upstream gradient)

def ew_exp_grad(y, g):
    return g * y


def ew_log_grad(x, g):
    return g / x


def ew_tanh_grad(y, g):
    return g * (1.0 - y * y)


def ew_relu_grad(x, g):
    return np.where(x > 0.0, g, 0.0)


def ew_clip_grad(x, g, lo, hi):
    return np.where((x >= lo) & (x <= hi), g, 0.0)


# reductions

def reduce_sum(x):
    return float(np.sum(x))
