"""Latent flow matching: stochastic interpolants, target velocities, the
flow-matching loss, Euler/Euler-Maruyama integration, and the end-to-end
imputation path.

The velocity field acts on the latent space of a trained multimodal VAE.
Its training data are (broken latent, full latent) pairs built from PoE
fusion under strict-subset masks; the VAE itself stays frozen, so all
encoder/decoder evaluation here goes through the no-tape twins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ContractError, DomainError, NumericError, ShapeError
from .mmvae import (
    Mask,
    MultimodalVaeParams,
    decode_np,
    encode_modality_np,
    poe_fuse_np,
    sample_mask,
)
from .nn import Mlp, fit, init_mlp, mlp_forward, mlp_forward_np
from .phantom import FAMILIES
from .rng import Rng, derive_seed

_T_SINGULAR = 1.0 - 1e-6


@dataclass
class VelocityFieldParams:
    """Velocity network v(z, t); input is the latent concatenated with the
    scalar time."""

    net: Mlp

    @property
    def latent_dim(self) -> int:
        return self.net.layers[-1][0].data.shape[0]

    def parameters(self):
        return self.net.parameters()


@dataclass
class FlowPair:
    """One training pair: broken latent z0, full latent z1, and the mask
    that produced z0."""

    z0: np.ndarray
    z1: np.ndarray
    mask: Mask | None = None


@dataclass
class InterpolantConfig:
    """Bridge noise scale; sigma=0 is the deterministic straight line."""

    sigma: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ContractError(f"sigma must be finite and non-negative, got {self.sigma}")


@dataclass
class IntegratorConfig:
    steps: int = 50
    scheme: str = "euler"
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.steps < 1:
            raise ContractError(f"need at least one step, got {self.steps}")
        if self.scheme not in ("euler", "euler_maruyama"):
            raise ContractError(f"unknown scheme {self.scheme!r}")
        if self.noise_sigma < 0:
            raise ContractError("noise_sigma must be non-negative")

    def to_dict(self) -> dict:
        return {"steps": self.steps, "scheme": self.scheme,
                "noise_sigma": self.noise_sigma}


def init_velocity_field(rng: Rng, latent_dim: int, hidden=(64, 64),
                        activation: str = "tanh") -> VelocityFieldParams:
    net = init_mlp(rng, (latent_dim + 1, *hidden, latent_dim), activation)
    return VelocityFieldParams(net=net)


def interpolate(z0, z1, t: float, cfg: InterpolantConfig = None,
                rng: Rng = None) -> np.ndarray:
    """Bridge sample z_t = (1-t) z0 + t z1 + sigma sqrt(t(1-t)) eps.

    The noise coefficient vanishes at both endpoints, so t=0 and t=1 return
    z0 and z1 exactly for any sigma (noise is still drawn, keeping the rng
    stream independent of t).
    """
    z0 = np.asarray(z0, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    if z0.shape != z1.shape:
        raise ShapeError(f"endpoint shapes differ: {z0.shape} vs {z1.shape}")
    if not 0.0 <= t <= 1.0:
        raise ContractError(f"t must lie in [0, 1], got {t}")
    z_t = (1.0 - t) * z0 + t * z1
    sigma = 0.0 if cfg is None else cfg.sigma
    if sigma > 0:
        if rng is None:
            raise ContractError("rng required when sigma > 0")
        z_t = z_t + sigma * math.sqrt(t * (1.0 - t)) * rng.normals(z0.shape[0])
    return z_t


def target_velocity_endpoint(z0, z1) -> np.ndarray:
    """Constant velocity of the straight-line path, z1 - z0."""
    z0 = np.asarray(z0, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    if z0.shape != z1.shape:
        raise ShapeError(f"endpoint shapes differ: {z0.shape} vs {z1.shape}")
    return z1 - z0


def target_velocity_conditional(z1, z_t, t: float) -> np.ndarray:
    """Conditional target (z1 - z_t) / (1 - t); singular as t -> 1."""
    z1 = np.asarray(z1, dtype=np.float64)
    z_t = np.asarray(z_t, dtype=np.float64)
    if z1.shape != z_t.shape:
        raise ShapeError(f"shapes differ: {z1.shape} vs {z_t.shape}")
    if t < 0.0:
        raise ContractError(f"t must be non-negative, got {t}")
    if t >= _T_SINGULAR:
        raise DomainError(f"t={t} is within 1e-6 of the t=1 singularity")
    return (z1 - z_t) / (1.0 - t)


def velocity_tape(vparams: VelocityFieldParams, z_t: np.ndarray, t: float) -> Tensor:
    """Tape forward of the velocity net on constant inputs [z_t || t]."""
    x = Tensor(np.concatenate([z_t, [t]]))
    return mlp_forward(vparams.net, x)


def velocity_np(vparams: VelocityFieldParams, z: np.ndarray, t: float) -> np.ndarray:
    """No-tape twin of :func:`velocity_tape`."""
    return mlp_forward_np(vparams.net, np.concatenate([z, [t]]))


def lfm_loss(vparams: VelocityFieldParams, pairs, rng: Rng,
             interp: InterpolantConfig = None,
             target_kind: str = "endpoint") -> Tensor:
    """Flow-matching regression loss over a batch of pairs.

    Per pair: t ~ U(0,1), z_t from the interpolant, squared error between
    v(z_t, t) and the target velocity, averaged over dimensions; the result
    averages over the batch.  The conditional target resamples t whenever it
    falls inside the singular band at t=1.
    """
    pairs = list(pairs)
    if not pairs:
        raise ContractError("lfm_loss needs a non-empty batch")
    if target_kind not in ("endpoint", "conditional"):
        raise ContractError(f"unknown target kind {target_kind!r}")
    total = None
    for pair in pairs:
        t = rng.uniform()
        if target_kind == "conditional":
            while t >= _T_SINGULAR:
                t = rng.uniform()
        z_t = interpolate(pair.z0, pair.z1, t, interp, rng)
        if target_kind == "endpoint":
            target = target_velocity_endpoint(pair.z0, pair.z1)
        else:
            target = target_velocity_conditional(pair.z1, z_t, t)
        diff = velocity_tape(vparams, z_t, t) - Tensor(target)
        term = (diff * diff).mean()
        total = term if total is None else total + term
    return total * (1.0 / len(pairs))


def integrate(v, z0, cfg: IntegratorConfig = None, rng: Rng = None) -> np.ndarray:
    """Euler (or Euler-Maruyama) transport of z0 from t=0 to t=1.

    ``v`` is either VelocityFieldParams or any callable (z, t) -> velocity
    array; the latter keeps analytic fields usable for convergence checks.
    """
    cfg = IntegratorConfig() if cfg is None else cfg
    if isinstance(v, VelocityFieldParams):
        field = lambda z, t: velocity_np(v, z, t)
    elif callable(v):
        field = v
    else:
        raise ContractError(f"cannot integrate velocity of type {type(v)!r}")
    z = np.array(z0, dtype=np.float64)
    n = cfg.steps
    dt = 1.0 / n
    stochastic = cfg.scheme == "euler_maruyama" and cfg.noise_sigma > 0
    if stochastic and rng is None:
        raise ContractError("euler_maruyama with noise requires an rng")
    for k in range(n):
        t = k * dt
        z = z + dt * np.asarray(field(z, t), dtype=np.float64)
        if stochastic:
            z = z + cfg.noise_sigma * math.sqrt(dt) * rng.normals(z.shape[0])
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite state at integration step {k}")
    return z


def study_moments(vae: MultimodalVaeParams, study):
    """Per-modality posterior moments (mu, logvar) of one study, no tape."""
    moments = []
    for i, modality in enumerate(vae.modalities):
        if modality not in study.images:
            raise ContractError(f"study {study.id} lacks modality {modality!r}")
        moments.append(encode_modality_np(vae, i, study.images[modality].reshape(-1)))
    return moments


def train_flow(config, vae: MultimodalVaeParams, manifest, studies, family: str,
               vparams: VelocityFieldParams = None):
    """Train the velocity field on broken-to-full latent pairs.

    The VAE is frozen: its parameters never enter the optimizer and all its
    evaluations run off-tape.  Per-study posterior moments are computed once
    up front.  Pairs use strict-subset masks for z0; z0/z1 are PoE means by
    default, or reparameterized samples when config.flow_pair_source is
    "sample".
    """
    train_ids = manifest.ids_of_family(family, "train")
    if not train_ids:
        raise ContractError(f"train split holds no {family} studies")
    m = vae.n_modalities
    d = vae.latent_dim
    moments = {sid: study_moments(vae, studies[sid]) for sid in train_ids}
    full_cache = {sid: poe_fuse_np(moments[sid]) for sid in train_ids}
    if vparams is None:
        init_rng = Rng(derive_seed(config.seed, f"flow-init-{family}"))
        vparams = init_velocity_field(
            init_rng, latent_dim=d, hidden=config.model.velocity_hidden,
            activation=config.model.activation,
        )
    interp = config.interpolant
    target_kind = config.flow_target
    source = config.flow_pair_source
    if source not in ("mean", "sample"):
        raise ContractError(f"unknown flow pair source {source!r}")

    def draw(mu_lv, rng):
        mu, lv = mu_lv
        if source == "mean":
            return mu
        return mu + np.exp(0.5 * lv) * rng.normals(d)

    def chunk_loss(chunk, rng):
        batch = []
        for sid in chunk:
            mask = sample_mask(rng, m, "uniform_strict_subset")
            subset = [moments[sid][i] for i in mask.indices]
            z0 = draw(poe_fuse_np(subset), rng)
            z1 = draw(full_cache[sid], rng)
            batch.append(FlowPair(z0=z0, z1=z1, mask=mask))
        loss = lfm_loss(vparams, batch, rng, interp, target_kind)
        return loss, {"total": loss.item()}

    opt = config.optimizer
    history = fit(
        vparams.parameters(), train_ids, chunk_loss,
        epochs=opt.epochs, effective_batch=opt.effective_batch,
        base_lr=opt.lr, weight_decay=opt.weight_decay,
        warmup_fraction=opt.warmup_fraction,
        rng=Rng(derive_seed(config.seed, f"flow-train-{family}")),
    )
    return vparams, history


@dataclass
class ImputeResult:
    """Decoded images for every modality plus the composite where observed
    inputs replace their decoded counterparts."""

    decoded: dict
    composited: dict


def impute(vae: MultimodalVaeParams, flow: VelocityFieldParams, study_partial,
           mask: Mask, integrator: IntegratorConfig = None,
           rng: Rng = None) -> ImputeResult:
    """Encode observed modalities, transport the fused mean along the
    learned flow, decode all modalities, and composite observed inputs back
    in."""
    m = vae.n_modalities
    if len(mask) != m:
        raise ContractError(f"mask length {len(mask)} != modality count {m}")
    if mask.count == 0:
        raise ContractError("impute needs at least one observed modality")
    observed_moments = []
    for i in mask.indices:
        modality = vae.modalities[i]
        if modality not in study_partial.images:
            raise ContractError(
                f"mask marks {modality!r} observed but study {study_partial.id} "
                "lacks it"
            )
        observed_moments.append(
            encode_modality_np(vae, i, study_partial.images[modality].reshape(-1))
        )
    z0 = poe_fuse_np(observed_moments)[0]
    z_hat = integrate(flow, z0, integrator, rng)
    flats = decode_np(vae, z_hat)
    grid = math.isqrt(vae.image_dim)
    if grid * grid != vae.image_dim:
        raise ContractError(f"image_dim {vae.image_dim} is not a square grid")
    decoded = {}
    composited = {}
    for i, modality in enumerate(vae.modalities):
        decoded[modality] = flats[i].reshape(grid, grid)
        if mask.observed[i]:
            composited[modality] = study_partial.images[modality].copy()
        else:
            composited[modality] = decoded[modality].copy()
    return ImputeResult(decoded=decoded, composited=composited)
