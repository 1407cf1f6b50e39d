"""Analytic self-check suites.

Each suite exercises one batch of invariants against an independent oracle
(numerical integration, closed forms, finite differences) and returns a
(name, ok, detail) record.  ``run_all`` executes them in a fixed order; the
CLI `verify` subcommand prints the table and exits nonzero on any failure.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor, backward, finite_diff_check
from .dataset import split
from .latentflow import (
    IntegratorConfig,
    InterpolantConfig,
    integrate,
    interpolate,
    target_velocity_conditional,
    target_velocity_endpoint,
)
from .metrics import aggregate, mse_to_psnr, ssim
from .mmvae import GaussianPosterior, loss_kl, poe_fuse_np
from .nn import init_mlp, mlp_forward
from .rng import Rng, derive_seed


def poe_grid_error(fuse_fn=None, rng: Rng = None, n_sets: int = 100,
                   grid_points: int = 4001, lo: float = -10.0,
                   hi: float = 10.0) -> float:
    """Max absolute density error between fused Gaussians and the
    numerically normalized pointwise product of expert densities.

    Each set draws one to three scalar experts with means in [-3, 3] and
    log-variances in [-2, 2]; the unit-Gaussian prior participates in both
    the fused result and the grid product.  ``fuse_fn`` takes a list of
    (mu, logvar) arrays and returns fused (mu, logvar) arrays; the default
    is the production fusion.
    """
    if fuse_fn is None:
        fuse_fn = poe_fuse_np
    if rng is None:
        rng = Rng(derive_seed(0, "poe-grid"))
    x = np.linspace(lo, hi, grid_points)
    worst = 0.0
    for _ in range(n_sets):
        k = 1 + rng.below(3)
        moments = []
        log_prod = -0.5 * x * x - 0.5 * math.log(2.0 * math.pi)
        for _ in range(k):
            mu = -3.0 + 6.0 * rng.uniform()
            logvar = -2.0 + 4.0 * rng.uniform()
            moments.append((np.array([mu]), np.array([logvar])))
            var = math.exp(logvar)
            log_prod = log_prod - 0.5 * (x - mu) ** 2 / var \
                - 0.5 * math.log(2.0 * math.pi * var)
        prod = np.exp(log_prod - log_prod.max())
        prod /= np.trapezoid(prod, x)
        mu_f, logvar_f = fuse_fn(moments)
        var_f = float(np.exp(logvar_f[0]))
        fused = np.exp(-0.5 * (x - float(mu_f[0])) ** 2 / var_f) \
            / math.sqrt(2.0 * math.pi * var_f)
        worst = max(worst, float(np.max(np.abs(fused - prod))))
    return worst


def verify_gradients():
    """Finite-difference agreement on a mixed-op network loss, plus
    linearity of the backward pass."""
    rng = Rng(derive_seed(0, "verify-grad"))
    net = init_mlp(rng, (3, 5, 2), activation="tanh")
    x = Tensor(rng.normals(3))

    def f():
        out = mlp_forward(net, x)
        return (out * out).mean() + (out.clip(-0.8, 0.8)).sum() * 0.1

    fd_err = finite_diff_check(f, net.parameters())

    def grads(loss_fn):
        for p in net.parameters():
            p.grad = None
        backward(loss_fn())
        return [p.grad.copy() for p in net.parameters()]

    def f1():
        return (mlp_forward(net, x) * mlp_forward(net, x)).sum()

    def f2():
        return mlp_forward(net, x).mean()

    a, b = 0.7, -1.3
    g1 = grads(f1)
    g2 = grads(f2)
    g_combo = grads(lambda: f1() * a + f2() * b)
    lin_err = max(
        float(np.max(np.abs(gc - (a * ga + b * gb))))
        for gc, ga, gb in zip(g_combo, g1, g2)
    )
    ok = fd_err < 1e-6 and lin_err < 1e-12
    return ("gradients", ok,
            f"finite-diff err {fd_err:.3e}, linearity err {lin_err:.3e}")


def verify_poe(fuse_fn=None):
    err = poe_grid_error(fuse_fn, Rng(derive_seed(0, "verify-poe")), n_sets=100)
    return ("poe-fusion", err < 1e-3, f"max density err {err:.3e}")


def verify_kl():
    d = 4
    post = GaussianPosterior(
        mu=Tensor(np.zeros(d)), logvar=Tensor(np.full(d, math.log(2.0)))
    )
    value = loss_kl([post]).item()
    expected = 0.5 * (2.0 - math.log(2.0) - 1.0)
    closed_err = abs(value - expected)
    rng = Rng(derive_seed(0, "verify-kl"))
    min_kl = math.inf
    for _ in range(2500):
        post = GaussianPosterior(
            mu=Tensor(rng.normals(d)),
            logvar=Tensor(-2.0 + 4.0 * rng.uniforms(d)),
        )
        min_kl = min(min_kl, loss_kl([post]).item())
    ok = closed_err < 1e-10 and min_kl >= 0.0
    return ("kl-divergence", ok,
            f"closed-form err {closed_err:.3e}, min over draws {min_kl:.3e}")


def verify_interpolant():
    rng = Rng(derive_seed(0, "verify-interp"))
    z0 = rng.normals(6)
    z1 = rng.normals(6)
    endpoint_ok = True
    for sigma in (0.0, 0.5):
        cfg = InterpolantConfig(sigma=sigma)
        at0 = interpolate(z0, z1, 0.0, cfg, rng)
        at1 = interpolate(z0, z1, 1.0, cfg, rng)
        endpoint_ok = endpoint_ok and np.array_equal(at0, z0) \
            and np.array_equal(at1, z1)
    line_err = 0.0
    v_end = target_velocity_endpoint(z0, z1)
    for t in [0.1 * k for k in range(1, 10)]:
        z_t = interpolate(z0, z1, t)
        v_cond = target_velocity_conditional(z1, z_t, t)
        line_err = max(line_err, float(np.max(np.abs(v_cond - v_end))))
    ok = endpoint_ok and line_err < 1e-10
    return ("interpolant", ok,
            f"endpoints exact: {endpoint_ok}, straight-line err {line_err:.3e}")


def verify_integrator():
    z0 = np.array([0.25])
    constant = np.array([0.5])
    one_step = integrate(
        lambda z, t: constant, z0, IntegratorConfig(steps=1)
    )
    const_ok = np.array_equal(one_step, z0 + constant)
    errors = []
    for n in (8, 16, 32, 64):
        z_n = integrate(lambda z, t: z, np.array([1.0]),
                        IntegratorConfig(steps=n))
        errors.append(abs(float(z_n[0]) - math.e))
    ratios = [errors[i] / errors[i + 1] for i in range(len(errors) - 1)]
    ratio_ok = all(1.7 <= r <= 2.3 for r in ratios)
    detail = "constant-field exact: {}, ratios {}".format(
        const_ok, ", ".join(f"{r:.3f}" for r in ratios)
    )
    return ("euler-integrator", const_ok and ratio_ok, detail)


def verify_split():
    pairs = [(f"s{i:04d}", i % 2) for i in range(100)]
    parts = split(pairs, seed=3)
    sizes = tuple(len(parts[name]) for name in ("train", "val", "test"))
    size_ok = sizes == (70, 10, 20) and len(parts["test_mini"]) == 5
    partition = sorted(parts["train"] + parts["val"] + parts["test"])
    partition_ok = partition == sorted(sid for sid, _ in pairs)
    nested_ok = set(parts["test_mini"]) <= set(parts["test"])
    cls = dict(pairs)
    strat_ok = True
    for name, expect in (("train", 35.0), ("val", 5.0), ("test", 10.0)):
        count = sum(1 for sid in parts[name] if cls[sid] == 0)
        strat_ok = strat_ok and abs(count - expect) <= 1.0
    again = split(pairs, seed=3)
    det_ok = again == parts
    ok = size_ok and partition_ok and nested_ok and strat_ok and det_ok
    return ("split-protocol", ok,
            f"sizes {sizes}+{len(parts['test_mini'])}, partition {partition_ok}, "
            f"nested {nested_ok}, stratified {strat_ok}, deterministic {det_ok}")


def verify_metrics():
    psnr_exact = mse_to_psnr(0.01) == 20.0
    rng = Rng(derive_seed(0, "verify-metrics"))
    img = rng.uniforms(256).reshape(16, 16)
    other = img + 0.05 * rng.normals(256).reshape(16, 16)
    self_ok = ssim(img, img) == 1.0
    sym_err = abs(ssim(img, other) - ssim(other, img))
    agg = aggregate([20.0, 30.0])
    agg_ok = abs(agg.mean - 25.0) < 1e-3 and abs(agg.std - 7.071) < 1e-3
    ok = psnr_exact and self_ok and sym_err < 1e-12 and agg_ok
    return ("metric-identities", ok,
            f"psnr(0.01)=20 exact: {psnr_exact}, ssim(x,x)=1: {self_ok}, "
            f"symmetry err {sym_err:.3e}, aggregate: {agg_ok}")


SUITES = (
    verify_gradients,
    verify_poe,
    verify_kl,
    verify_interpolant,
    verify_integrator,
    verify_split,
    verify_metrics,
)


def run_all():
    """Run every suite in declaration order; returns (name, ok, detail)
    records."""
    return [suite() for suite in SUITES]
