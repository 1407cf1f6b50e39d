"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is the implicit tape held by ``Tensor._parents``: every operation
records its inputs and a closure that maps the upstream gradient to parent
gradients.  :func:`backward` walks the tape in reverse topological order.
Gradients of leaf tensors accumulate across calls until reset, which is what
gradient accumulation over micro-batches relies on.

All heavy arithmetic is routed through the kernel dispatch layer so the tape
and the no-tape inference paths produce bitwise identical numbers on a given
backend.  Exactly rounded scalar arithmetic (+, -, *, /) may use numpy
directly because every IEEE implementation agrees on those.

Broadcasting is restricted to scalar-with-tensor: binary operations accept
two operands of identical shape, or one operand of shape () (python numbers
are lifted to constant 0-d tensors).  This keeps every gradient rule a
one-liner that can be audited against the finite-difference oracle.
"""

from __future__ import annotations

import math

import numpy as np

from . import _kernels as K
from .errors import ContractError, DomainError, NumericError, ShapeError

__all__ = [
    "Tensor",
    "affine",
    "backward",
    "concat",
    "finite_diff_check",
    "matmul",
    "stop_gradient",
]


class Tensor:
    """A dense float64 array plus the tape bookkeeping for reverse mode."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        """Off-tape copy; mutating it never touches this tensor."""
        return Tensor(self.data.copy())

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic operators

    def __add__(self, other):
        return _add(self, _lift(other))

    def __radd__(self, other):
        return _add(_lift(other), self)

    def __sub__(self, other):
        return _sub(self, _lift(other))

    def __rsub__(self, other):
        return _sub(_lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return _scale(self, float(other))
        return _mul(self, _lift(other))

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return _scale(self, float(other))
        return _mul(_lift(other), self)

    def __truediv__(self, other):
        return _div(self, _lift(other))

    def __rtruediv__(self, other):
        return _div(_lift(other), self)

    def __neg__(self):
        return _scale(self, -1.0)

    def __getitem__(self, key):
        if not isinstance(key, slice):
            raise ContractError("tensor indexing supports contiguous slices only")
        if self.data.ndim != 1:
            raise ShapeError("slicing is defined for 1-D tensors only")
        start, stop, step = key.indices(self.data.shape[0])
        if step != 1:
            raise ContractError("slicing with a step is not supported")
        return slice1d(self, start, stop)

    # elementwise methods

    def exp(self) -> "Tensor":
        out_data = K.ew_exp(self.data)

        def grad_fn(g, out_data=out_data, x=self):
            _accum(x, K.ew_exp_grad(out_data, g))

        return _from_op(out_data, (self,), grad_fn)

    def log(self) -> "Tensor":
        if not np.all(self.data > 0.0):
            raise DomainError("log requires strictly positive inputs")
        out_data = K.ew_log(self.data)

        def grad_fn(g, x=self):
            _accum(x, K.ew_log_grad(x.data, g))

        return _from_op(out_data, (self,), grad_fn)

    def tanh(self) -> "Tensor":
        out_data = K.ew_tanh(self.data)

        def grad_fn(g, out_data=out_data, x=self):
            _accum(x, K.ew_tanh_grad(out_data, g))

        return _from_op(out_data, (self,), grad_fn)

    def relu(self) -> "Tensor":
        out_data = K.ew_relu(self.data)

        def grad_fn(g, x=self):
            _accum(x, K.ew_relu_grad(x.data, g))

        return _from_op(out_data, (self,), grad_fn)

    def clip(self, lo: float, hi: float) -> "Tensor":
        if not lo < hi:
            raise ContractError(f"clip bounds must satisfy lo < hi, got [{lo}, {hi}]")
        out_data = K.ew_clip(self.data, lo, hi)

        def grad_fn(g, x=self, lo=lo, hi=hi):
            _accum(x, K.ew_clip_grad(x.data, g, lo, hi))

        return _from_op(out_data, (self,), grad_fn)

    # reductions

    def sum(self) -> "Tensor":
        if self.data.size == 0:
            raise DomainError("sum of an empty tensor")
        out_data = np.asarray(K.reduce_sum(self.data))

        def grad_fn(g, x=self):
            _accum(x, np.full(x.data.shape, float(g)))

        return _from_op(out_data, (self,), grad_fn)

    def mean(self) -> "Tensor":
        if self.data.size == 0:
            raise DomainError("mean of an empty tensor")
        n = self.data.size
        out_data = np.asarray(K.reduce_sum(self.data) / n)

        def grad_fn(g, x=self, n=n):
            _accum(x, np.full(x.data.shape, float(g) / n))

        return _from_op(out_data, (self,), grad_fn)

    # shape manipulation

    def reshape(self, shape) -> "Tensor":
        try:
            out_data = self.data.reshape(shape)
        except ValueError as exc:
            raise ShapeError(f"cannot reshape {self.data.shape} to {shape}") from exc

        def grad_fn(g, x=self):
            _accum(x, g.reshape(x.data.shape))

        return _from_op(out_data, (self,), grad_fn)

    def transpose(self) -> "Tensor":
        if self.data.ndim != 2:
            raise ShapeError("transpose is defined for 2-D tensors")
        out_data = np.ascontiguousarray(self.data.T)

        def grad_fn(g, x=self):
            _accum(x, np.ascontiguousarray(g.T))

        return _from_op(out_data, (self,), grad_fn)


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _from_op(data, parents, grad_fn) -> Tensor:
    out = Tensor(data)
    grad_parents = tuple(p for p in parents if p.requires_grad)
    if grad_parents:
        out.requires_grad = True
        out._parents = grad_parents
        out._backward = grad_fn
    return out


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        # copy: g may alias a buffer shared with another consumer
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _binary_shapes(a: Tensor, b: Tensor) -> str:
    if a.data.shape == b.data.shape:
        return "same"
    if b.data.shape == ():
        return "scalar_right"
    if a.data.shape == ():
        return "scalar_left"
    raise ShapeError(
        f"operands have incompatible shapes {a.data.shape} and {b.data.shape}; "
        "only scalar-with-tensor broadcasting is supported"
    )


def _add(a: Tensor, b: Tensor) -> Tensor:
    kind = _binary_shapes(a, b)
    if kind == "same":
        out_data = K.ew_add(a.data, b.data)

        def grad_fn(g, a=a, b=b):
            _accum(a, g)
            _accum(b, g)

    elif kind == "scalar_right":
        out_data = K.ew_add_s(a.data, float(b.data))

        def grad_fn(g, a=a, b=b):
            _accum(a, g)
            _accum(b, np.asarray(K.reduce_sum(g)))

    else:
        out_data = K.ew_add_s(b.data, float(a.data))

        def grad_fn(g, a=a, b=b):
            _accum(a, np.asarray(K.reduce_sum(g)))
            _accum(b, g)

    return _from_op(out_data, (a, b), grad_fn)


def _sub(a: Tensor, b: Tensor) -> Tensor:
    kind = _binary_shapes(a, b)
    if kind == "same":
        out_data = K.ew_sub(a.data, b.data)

        def grad_fn(g, a=a, b=b):
            _accum(a, g)
            _accum(b, K.ew_mul_s(g, -1.0))

    elif kind == "scalar_right":
        out_data = K.ew_add_s(a.data, -float(b.data))

        def grad_fn(g, a=a, b=b):
            _accum(a, g)
            _accum(b, np.asarray(-K.reduce_sum(g)))

    else:
        out_data = float(a.data) - b.data

        def grad_fn(g, a=a, b=b):
            _accum(a, np.asarray(K.reduce_sum(g)))
            _accum(b, K.ew_mul_s(g, -1.0))

    return _from_op(out_data, (a, b), grad_fn)


def _mul(a: Tensor, b: Tensor) -> Tensor:
    kind = _binary_shapes(a, b)
    if kind == "same":
        out_data = K.ew_mul(a.data, b.data)

        def grad_fn(g, a=a, b=b):
            _accum(a, K.ew_mul(g, b.data))
            _accum(b, K.ew_mul(g, a.data))

    elif kind == "scalar_right":
        s = float(b.data)
        out_data = K.ew_mul_s(a.data, s)

        def grad_fn(g, a=a, b=b, s=s):
            _accum(a, K.ew_mul_s(g, s))
            _accum(b, np.asarray(K.reduce_sum(K.ew_mul(g, a.data))))

    else:
        s = float(a.data)
        out_data = K.ew_mul_s(b.data, s)

        def grad_fn(g, a=a, b=b, s=s):
            _accum(a, np.asarray(K.reduce_sum(K.ew_mul(g, b.data))))
            _accum(b, K.ew_mul_s(g, s))

    return _from_op(out_data, (a, b), grad_fn)


def _div(a: Tensor, b: Tensor) -> Tensor:
    kind = _binary_shapes(a, b)
    if kind == "same":
        out_data = K.ew_div(a.data, b.data)

        def grad_fn(g, a=a, b=b, out_data=out_data):
            _accum(a, K.ew_div(g, b.data))
            _accum(b, K.ew_mul_s(K.ew_div(K.ew_mul(g, out_data), b.data), -1.0))

    elif kind == "scalar_right":
        s = float(b.data)
        out_data = a.data / s

        def grad_fn(g, a=a, b=b, s=s, out_data=out_data):
            _accum(a, g / s)
            _accum(b, np.asarray(-K.reduce_sum(K.ew_mul(g, out_data)) / s))

    else:
        s = float(a.data)
        out_data = s / b.data

        def grad_fn(g, a=a, b=b, out_data=out_data):
            _accum(a, np.asarray(K.reduce_sum(K.ew_div(g, b.data))))
            _accum(b, K.ew_mul_s(K.ew_div(K.ew_mul(g, out_data), b.data), -1.0))

    return _from_op(out_data, (a, b), grad_fn)


def _scale(x: Tensor, s: float) -> Tensor:
    out_data = K.ew_mul_s(x.data, s)

    def grad_fn(g, x=x, s=s):
        _accum(x, K.ew_mul_s(g, s))

    return _from_op(out_data, (x,), grad_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; accepts 2-D x 2-D and 2-D x 1-D operands."""
    a, b = _lift(a), _lift(b)
    if a.data.ndim == 2 and b.data.ndim == 2:
        if a.data.shape[1] != b.data.shape[0]:
            raise ShapeError(
                f"matmul inner extents differ: {a.data.shape} x {b.data.shape}"
            )
        out_data = K.mm_nn(a.data, b.data)

        def grad_fn(g, a=a, b=b):
            _accum(a, K.mm_nt(g, b.data))
            _accum(b, K.mm_tn(a.data, g))

    elif a.data.ndim == 2 and b.data.ndim == 1:
        if a.data.shape[1] != b.data.shape[0]:
            raise ShapeError(
                f"matmul inner extents differ: {a.data.shape} x {b.data.shape}"
            )
        out_data = K.matvec(a.data, b.data)

        def grad_fn(g, a=a, b=b):
            _accum(a, K.outer(g, b.data))
            _accum(b, K.vecmat(g, a.data))

    else:
        raise ShapeError(
            f"matmul supports 2-D x 2-D or 2-D x 1-D, got {a.data.shape} x {b.data.shape}"
        )
    return _from_op(out_data, (a, b), grad_fn)


def affine(w: Tensor, x: Tensor, b: Tensor) -> Tensor:
    """Fused W @ x + b for a 1-D activation; one tape node per layer."""
    if w.data.ndim != 2 or x.data.ndim != 1 or b.data.ndim != 1:
        raise ShapeError(
            f"affine expects (out,in), (in,), (out,), got {w.data.shape}, "
            f"{x.data.shape}, {b.data.shape}"
        )
    if w.data.shape[1] != x.data.shape[0] or w.data.shape[0] != b.data.shape[0]:
        raise ShapeError(
            f"affine shapes do not chain: {w.data.shape}, {x.data.shape}, {b.data.shape}"
        )
    out_data = K.ew_add(K.matvec(w.data, x.data), b.data)

    def grad_fn(g, w=w, x=x, b=b):
        _accum(w, K.outer(g, x.data))
        _accum(x, K.vecmat(g, w.data))
        _accum(b, g)

    return _from_op(out_data, (w, x, b), grad_fn)


def concat(parts) -> Tensor:
    """Concatenate 1-D tensors along their only axis."""
    parts = [_lift(p) for p in parts]
    if not parts:
        raise ContractError("concat of an empty list")
    for p in parts:
        if p.data.ndim != 1:
            raise ShapeError("concat expects 1-D tensors")
    out_data = np.concatenate([p.data for p in parts])
    offsets = np.cumsum([0] + [p.data.shape[0] for p in parts])

    def grad_fn(g, parts=parts, offsets=offsets):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[lo:hi])

    return _from_op(out_data, tuple(parts), grad_fn)


def slice1d(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice of a 1-D tensor; gradient scatters back in place."""
    if x.data.ndim != 1:
        raise ShapeError("slice1d expects a 1-D tensor")
    n = x.data.shape[0]
    if not (0 <= start < stop <= n):
        raise ContractError(f"slice [{start}:{stop}] invalid for length {n}")
    out_data = x.data[start:stop].copy()

    def grad_fn(g, x=x, start=start, stop=stop):
        buf = np.zeros(x.data.shape)
        buf[start:stop] = g
        _accum(x, buf)

    return _from_op(out_data, (x,), grad_fn)


def stop_gradient(x: Tensor) -> Tensor:
    """Value identical to x, detached from the tape."""
    return Tensor(x.data)


def backward(loss: Tensor) -> None:
    """Populate grad buffers of every reachable tensor with requires_grad.

    Interior grad buffers are reset at the start of each call; leaf buffers
    persist, so gradients of parameters accumulate across calls until
    explicitly zeroed.
    """
    if loss.data.shape != ():
        raise ContractError(
            f"backward expects a scalar loss, got shape {loss.data.shape}"
        )
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    for node in topo:
        if node._backward is not None:
            node.grad = None
    if loss._backward is None:
        if loss.requires_grad:
            _accum(loss, np.ones(()))
        return
    loss.grad = np.ones(())
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def finite_diff_check(f, params, eps: float = 1e-5) -> float:
    """Compare reverse-mode gradients of f() against central differences.

    f is a zero-argument callable returning a scalar Tensor and must be
    deterministic (reseed any generator it uses on every call).  Returns the
    maximum over all coordinates of
    ``|g_ad - g_fd| / max(1e-12, |g_ad| + |g_fd|)``.
    """
    params = list(params)
    for p in params:
        if not p.requires_grad:
            raise ContractError("finite_diff_check params must require gradients")
        p.grad = None
    out = f()
    if not isinstance(out, Tensor) or out.data.shape != ():
        raise ContractError("f must return a scalar Tensor")
    if not math.isfinite(out.item()):
        raise NumericError("f evaluated to a non-finite value")
    backward(out)
    analytic = [
        np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params
    ]
    worst = 0.0
    for p, g_ad in zip(params, analytic):
        flat = p.data.reshape(-1)
        g_flat = g_ad.reshape(-1)
        for i in range(flat.shape[0]):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = f().item()
            flat[i] = orig - eps
            f_minus = f().item()
            flat[i] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise NumericError("f evaluated to a non-finite value during probing")
            g_fd = (f_plus - f_minus) / (2.0 * eps)
            err = abs(g_flat[i] - g_fd) / max(1e-12, abs(g_flat[i]) + abs(g_fd))
            if err > worst:
                worst = err
    return worst
