"""MLP building blocks, AdamW, the warmup-cosine schedule, and the shared
mini-batch training loop used by every model in the package."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .autodiff import Tensor, affine, backward
from .errors import ContractError, NumericError
from .rng import Rng

_ACTIVATIONS = ("tanh", "relu")


@dataclass
class Mlp:
    """Fully connected stack; activation between layers, identity at the
    output layer."""

    layers: list  # list of (weight Tensor[out,in], bias Tensor[out]) pairs
    activation: str

    @property
    def dims(self):
        first_in = self.layers[0][0].data.shape[1]
        return (first_in,) + tuple(w.data.shape[0] for w, _ in self.layers)

    def parameters(self):
        params = []
        for w, b in self.layers:
            params.append(w)
            params.append(b)
        return params


def init_mlp(rng: Rng, dims, activation: str = "tanh") -> Mlp:
    """Glorot-uniform weights, zero biases.

    Weights are drawn in row-major order from u in [-s, s] with
    s = sqrt(6 / (fan_in + fan_out)), so a fixed seed pins every parameter.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2:
        raise ContractError(f"need at least input and output dims, got {dims}")
    if any(d <= 0 for d in dims):
        raise ContractError(f"all layer dims must be positive, got {dims}")
    if activation not in _ACTIVATIONS:
        raise ContractError(f"unknown activation {activation!r}")
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        s = math.sqrt(6.0 / (fan_in + fan_out))
        w = np.empty((fan_out, fan_in))
        for i in range(fan_out):
            for j in range(fan_in):
                w[i, j] = (2.0 * rng.uniform() - 1.0) * s
        layers.append(
            (Tensor(w, requires_grad=True), Tensor(np.zeros(fan_out), requires_grad=True))
        )
    return Mlp(layers=layers, activation=activation)


def mlp_forward(net: Mlp, x: Tensor) -> Tensor:
    """Tape-recorded forward pass for a single 1-D activation."""
    h = x
    last = len(net.layers) - 1
    for i, (w, b) in enumerate(net.layers):
        h = affine(w, h, b)
        if i < last:
            h = h.tanh() if net.activation == "tanh" else h.relu()
    return h


def mlp_forward_np(net: Mlp, x: np.ndarray) -> np.ndarray:
    """No-tape forward pass.

    Calls the same kernel sequence as :func:`mlp_forward`, so on a given
    backend the outputs are bitwise identical to the tape path.
    """
    h = x
    last = len(net.layers) - 1
    for i, (w, b) in enumerate(net.layers):
        h = K.ew_add(K.matvec(w.data, h), b.data)
        if i < last:
            h = K.ew_tanh(h) if net.activation == "tanh" else K.ew_relu(h)
    return h


class AdamW:
    """AdamW with decoupled weight decay and bias correction.

    The update is theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta).
    """

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr: float):
        # validate before mutating anything so an aborted step leaves the
        # optimizer state untouched
        for p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericError("non-finite gradient; optimizer step aborted")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p.data)


@dataclass
class WarmupCosine:
    """Linear ramp 0 -> base_lr over ceil(warmup_fraction * total_steps)
    steps, then cosine decay to 0 at total_steps."""

    base_lr: float
    total_steps: int
    warmup_fraction: float = 0.05

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ContractError(f"base_lr must be positive, got {self.base_lr}")
        if not self.total_steps > 0:
            raise ContractError(f"total_steps must be positive, got {self.total_steps}")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ContractError(
                f"warmup_fraction must lie in (0, 1), got {self.warmup_fraction}"
            )

    @property
    def warmup_steps(self) -> int:
        w = math.ceil(self.warmup_fraction * self.total_steps)
        # keep at least one cosine step so the schedule can reach 0
        return max(1, min(w, self.total_steps - 1)) if self.total_steps > 1 else 1

    def lr_at(self, step: int) -> float:
        if not 0 <= step <= self.total_steps:
            raise ContractError(
                f"step {step} outside schedule range [0, {self.total_steps}]"
            )
        w = self.warmup_steps
        if step <= w:
            return self.base_lr * step / w
        progress = (step - w) / (self.total_steps - w)
        return 0.5 * self.base_lr * (1.0 + math.cos(math.pi * progress))


@dataclass
class TrainHistory:
    """Per-epoch mean losses plus the exact id set the run trained on."""

    epochs: list = field(default_factory=list)
    train_ids: list = field(default_factory=list)

    def first(self, key: str) -> float:
        return self.epochs[0][key]

    def last(self, key: str) -> float:
        return self.epochs[-1][key]


def fit(parameters, ids, chunk_loss, *, epochs, effective_batch, base_lr,
        weight_decay, warmup_fraction, rng: Rng) -> TrainHistory:
    """Generic deterministic training loop.

    ``chunk_loss(chunk_ids, rng)`` must return ``(loss, parts)`` where loss
    is a scalar Tensor already normalized over the chunk and parts maps name
    to float.  Each epoch shuffles ids with the caller's rng, walks chunks of
    ``effective_batch`` (the final chunk may be short), and takes one AdamW
    step per chunk at the scheduled learning rate.
    """
    ids = list(ids)
    if not ids:
        raise ContractError("training id list is empty")
    history = TrainHistory(train_ids=list(ids))
    if epochs == 0:
        return history
    opt = AdamW(parameters, weight_decay=weight_decay)
    steps_per_epoch = math.ceil(len(ids) / effective_batch)
    schedule = WarmupCosine(base_lr, epochs * steps_per_epoch, warmup_fraction)
    step = 0
    for epoch in range(epochs):
        order = list(ids)
        rng.shuffle(order)
        sums = {}
        n_chunks = 0
        for lo in range(0, len(order), effective_batch):
            chunk = order[lo:lo + effective_batch]
            opt.zero_grad()
            loss, parts = chunk_loss(chunk, rng)
            if not math.isfinite(loss.item()):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, optimizer step {step}"
                )
            backward(loss)
            step += 1
            opt.step(schedule.lr_at(step))
            for key, value in parts.items():
                sums[key] = sums.get(key, 0.0) + value
            n_chunks += 1
        history.epochs.append({k: v / n_chunks for k, v in sums.items()})
    return history
