"""Timing comparison between the compiled and numpy kernel backends.

Times the individual kernels on MLP-sized operands, then a full
forward/backward/step cycle of the multimodal VAE loss, under each
available backend.  Usage:

    python3 benchmarks/kernel_bench.py [--repeats 200] [--hidden 256]
"""

import argparse
import time

import numpy as np

from flowmi import _kernels
from flowmi.autodiff import backward
from flowmi.mmvae import LossWeights, Mask, init_vae, vae_total_loss
from flowmi.nn import AdamW
from flowmi.phantom import Modality, PhantomSpec, generate_study
from flowmi.rng import Rng


def _best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(hidden: int):
    rng = Rng(0)
    w = rng.normals(hidden * 256).reshape(hidden, 256)
    x = rng.normals(256)
    g = rng.normals(hidden)
    v = rng.normals(hidden)
    u = rng.normals(hidden)
    return [
        ("matvec", lambda: _kernels.matvec(w, x)),
        ("vecmat", lambda: _kernels.vecmat(g, w)),
        ("outer", lambda: _kernels.outer(g, x)),
        ("ew_tanh", lambda: _kernels.ew_tanh(v)),
        ("ew_relu", lambda: _kernels.ew_relu(v)),
        ("ew_exp", lambda: _kernels.ew_exp(v)),
        ("ew_mul", lambda: _kernels.ew_mul(v, u)),
        ("ew_add", lambda: _kernels.ew_add(v, u)),
        ("reduce_sum", lambda: _kernels.reduce_sum(v)),
    ]


def vae_step_case(hidden: int):
    spec = PhantomSpec()
    rng = Rng(1)
    study = generate_study(rng, spec, "dce_triplet", organ_class=0)
    modalities = (Modality.DCE1, Modality.DCE2, Modality.DCE3)
    params = init_vae(Rng(2), modalities, image_dim=spec.grid * spec.grid,
                      latent_dim=16, hidden=(hidden,))
    opt = AdamW(params.parameters())
    mask = Mask.from_indices(3, [0, 2])
    weights = LossWeights(lambda_pull=0.1, beta_kl=1e-4)

    def step():
        for p in params.parameters():
            p.grad = None
        loss, _ = vae_total_loss(params, study, mask, weights, Rng(3))
        backward(loss)
        opt.step(1e-4)

    return step


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=200,
                    help="repeats per kernel (best-of timing)")
    ap.add_argument("--step-repeats", type=int, default=20,
                    help="repeats for the full VAE step")
    ap.add_argument("--hidden", type=int, default=256,
                    help="hidden width used for the operands")
    args = ap.parse_args()

    backends = _kernels.available_backends()
    print(f"backends: {', '.join(backends)}")
    results = {}
    for backend in backends:
        _kernels.set_backend(backend)
        rows = {}
        for name, fn in kernel_cases(args.hidden):
            rows[name] = _best_of(fn, args.repeats)
        rows["vae_step"] = _best_of(vae_step_case(args.hidden),
                                    args.step_repeats)
        results[backend] = rows

    names = list(results[backends[0]])
    header = f"{'kernel':<12}" + "".join(f"{b:>14}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name in names:
        line = f"{name:<12}"
        for backend in backends:
            line += f"{results[backend][name] * 1e6:>12.1f}us"
        if len(backends) == 2:
            ratio = results[backends[0]][name] / results[backends[1]][name]
            line += f"{ratio:>9.2f}x"
        print(line)


if __name__ == "__main__":
    main()
