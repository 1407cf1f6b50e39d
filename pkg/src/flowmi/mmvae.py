"""Multimodal VAE: per-modality Gaussian encoders, product-of-experts
fusion, a shared decoder over all modalities, and the three-part training
objective (reconstruction + latent alignment + KL).

Tape functions here have ``*_np`` twins that execute the identical kernel
sequence without gradient bookkeeping; on a given backend the two paths are
bitwise equal, which the frozen-model inference paths rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .autodiff import Tensor, stop_gradient
from .errors import ContractError, ShapeError
from .nn import Mlp, fit, init_mlp, mlp_forward, mlp_forward_np
from .phantom import FAMILIES
from .rng import Rng, derive_seed

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0


@dataclass(frozen=True)
class Mask:
    """Modality availability vector; entry i is True iff modality i is
    observed."""

    observed: tuple

    @classmethod
    def full(cls, m: int) -> "Mask":
        return cls(tuple([True] * m))

    @classmethod
    def from_indices(cls, m: int, indices) -> "Mask":
        flags = [False] * m
        for i in indices:
            flags[i] = True
        return cls(tuple(flags))

    @property
    def count(self) -> int:
        return sum(self.observed)

    @property
    def indices(self) -> tuple:
        return tuple(i for i, flag in enumerate(self.observed) if flag)

    @property
    def is_full(self) -> bool:
        return all(self.observed)

    def __len__(self) -> int:
        return len(self.observed)


@dataclass
class GaussianPosterior:
    """Diagonal Gaussian over the shared latent, mean plus log-variance."""

    mu: Tensor
    logvar: Tensor


@dataclass
class LossWeights:
    lambda_pull: float = 0.1
    beta_kl: float = 1e-4

    def __post_init__(self):
        if self.lambda_pull < 0 or self.beta_kl < 0:
            raise ContractError("loss weights must be non-negative")


@dataclass
class MultimodalVaeParams:
    """One encoder per modality plus the shared decoder."""

    modalities: tuple
    image_dim: int
    latent_dim: int
    encoders: list  # Mlp per modality, image_dim -> 2 * latent_dim
    decoder: Mlp  # latent_dim -> len(modalities) * image_dim

    def parameters(self):
        params = []
        for enc in self.encoders:
            params.extend(enc.parameters())
        params.extend(self.decoder.parameters())
        return params

    @property
    def n_modalities(self) -> int:
        return len(self.modalities)


def init_vae(rng: Rng, modalities, image_dim: int, latent_dim: int,
             hidden=(64,), activation: str = "tanh",
             logvar_bias_init: float = -5.0) -> MultimodalVaeParams:
    """Initialize encoders (in modality order) then the decoder from one
    generator, so a fixed seed pins all parameters.

    The logvar half of each encoder's output bias starts at
    ``logvar_bias_init`` instead of zero: posteriors begin near
    deterministic, which keeps early reconstruction gradients from being
    swamped by reparameterization noise at this training scale.
    """
    modalities = tuple(modalities)
    hidden = tuple(hidden)
    encoders = []
    for _ in modalities:
        enc = init_mlp(rng, (image_dim, *hidden, 2 * latent_dim), activation)
        enc.layers[-1][1].data[latent_dim:] = logvar_bias_init
        encoders.append(enc)
    decoder = init_mlp(
        rng, (latent_dim, *reversed(hidden), len(modalities) * image_dim), activation
    )
    return MultimodalVaeParams(
        modalities=modalities, image_dim=image_dim, latent_dim=latent_dim,
        encoders=encoders, decoder=decoder,
    )


def encode_modality(params: MultimodalVaeParams, index: int, x: Tensor) -> GaussianPosterior:
    """Posterior of one modality expert; logvar clamped to keep PoE
    precisions bounded."""
    if not 0 <= index < params.n_modalities:
        raise ContractError(f"modality index {index} out of range")
    if x.data.shape != (params.image_dim,):
        raise ShapeError(
            f"encoder input shape {x.data.shape}, expected ({params.image_dim},)"
        )
    out = mlp_forward(params.encoders[index], x)
    d = params.latent_dim
    return GaussianPosterior(
        mu=out[:d], logvar=out[d:].clip(LOGVAR_MIN, LOGVAR_MAX)
    )


def encode_modality_np(params: MultimodalVaeParams, index: int, x: np.ndarray):
    """No-tape twin of :func:`encode_modality`; returns (mu, logvar) arrays."""
    out = mlp_forward_np(params.encoders[index], x)
    d = params.latent_dim
    return out[:d].copy(), K.ew_clip(out[d:], LOGVAR_MIN, LOGVAR_MAX)


def poe_fuse(posteriors, include_prior: bool = True, latent_dim=None) -> GaussianPosterior:
    """Product-of-experts fusion of diagonal Gaussians.

    Precisions add (plus 1 for the unit prior when included); means combine
    precision-weighted.  With no experts and the prior included this is the
    unit Gaussian, which needs ``latent_dim`` to fix the dimensionality.
    """
    posteriors = list(posteriors)
    if not posteriors:
        if not include_prior:
            raise ContractError("poe_fuse needs at least one expert or the prior")
        if latent_dim is None:
            raise ContractError("latent_dim required when fusing the bare prior")
        zeros = Tensor(np.zeros(latent_dim))
        return GaussianPosterior(mu=zeros, logvar=Tensor(np.zeros(latent_dim)))
    precisions = [(-post.logvar).exp() for post in posteriors]
    lam = precisions[0]
    for prec in precisions[1:]:
        lam = lam + prec
    if include_prior:
        lam = lam + 1.0
    num = posteriors[0].mu * precisions[0]
    for post, prec in zip(posteriors[1:], precisions[1:]):
        num = num + post.mu * prec
    return GaussianPosterior(mu=num / lam, logvar=-(lam.log()))


def poe_fuse_np(moments, include_prior: bool = True):
    """No-tape twin of :func:`poe_fuse` over (mu, logvar) array pairs."""
    moments = list(moments)
    if not moments:
        raise ContractError("poe_fuse_np needs at least one expert")
    precisions = [K.ew_exp(K.ew_mul_s(lv, -1.0)) for _, lv in moments]
    lam = precisions[0]
    for prec in precisions[1:]:
        lam = K.ew_add(lam, prec)
    if include_prior:
        lam = K.ew_add_s(lam, 1.0)
    num = K.ew_mul(moments[0][0], precisions[0])
    for (mu, _), prec in zip(moments[1:], precisions[1:]):
        num = K.ew_add(num, K.ew_mul(mu, prec))
    return K.ew_div(num, lam), K.ew_mul_s(K.ew_log(lam), -1.0)


def sample_posterior(post: GaussianPosterior, rng: Rng = None, eps=None) -> Tensor:
    """Reparameterized draw z = mu + exp(logvar / 2) * eps; differentiable
    in mu and logvar."""
    if eps is None:
        if rng is None:
            raise ContractError("sample_posterior needs rng or explicit eps")
        eps = rng.normals(post.mu.data.shape[0])
    return post.mu + (post.logvar * 0.5).exp() * Tensor(eps)


def decode(params: MultimodalVaeParams, z: Tensor):
    """Decode a latent into every modality, regardless of the input mask."""
    if z.data.shape != (params.latent_dim,):
        raise ShapeError(f"latent shape {z.data.shape}, expected ({params.latent_dim},)")
    out = mlp_forward(params.decoder, z)
    d = params.image_dim
    return [out[m * d:(m + 1) * d] for m in range(params.n_modalities)]


def decode_np(params: MultimodalVaeParams, z: np.ndarray):
    """No-tape twin of :func:`decode`; returns a list of flat arrays."""
    out = mlp_forward_np(params.decoder, z)
    d = params.image_dim
    return [out[m * d:(m + 1) * d].copy() for m in range(params.n_modalities)]


def sample_mask(rng: Rng, m: int, scheme: str = "uniform_nonempty") -> Mask:
    """Draw a modality mask uniformly over the scheme's support.

    ``uniform_nonempty`` covers all 2^m - 1 non-empty masks;
    ``uniform_strict_subset`` additionally excludes the all-ones mask.
    """
    if m < 1:
        raise ContractError(f"need at least one modality, got {m}")
    if scheme == "uniform_nonempty":
        code = 1 + rng.below(2 ** m - 1)
    elif scheme == "uniform_strict_subset":
        if m < 2:
            raise ContractError("strict-subset masks require at least 2 modalities")
        code = 1 + rng.below(2 ** m - 2)
    else:
        raise ContractError(f"unknown mask scheme {scheme!r}")
    return Mask(tuple(bool((code >> i) & 1) for i in range(m)))


def loss_rec(recon, targets) -> Tensor:
    """Mean squared error over all modalities and pixels against the fully
    observed study."""
    if len(recon) != len(targets):
        raise ContractError(
            f"got {len(recon)} reconstructions for {len(targets)} targets"
        )
    total = None
    count = 0
    for rec, target in zip(recon, targets):
        target = target if isinstance(target, Tensor) else Tensor(target)
        if rec.data.shape != target.data.shape:
            raise ShapeError(
                f"reconstruction shape {rec.data.shape} != target {target.data.shape}"
            )
        diff = rec - target
        term = (diff * diff).sum()
        total = term if total is None else total + term
        count += rec.data.size
    return total * (1.0 / count)


def loss_pull(z_broken: Tensor, z_full: Tensor) -> Tensor:
    """Alignment penalty |z_broken - sg(z_full)|^2 / d; no gradient flows
    into the full-observation path."""
    if z_broken.data.shape != z_full.data.shape:
        raise ShapeError(
            f"latent shapes differ: {z_broken.data.shape} vs {z_full.data.shape}"
        )
    diff = z_broken - stop_gradient(z_full)
    return (diff * diff).mean()


def loss_kl(posteriors) -> Tensor:
    """Closed-form KL(N(mu, sigma^2) || N(0, 1)), averaged over latent dims
    per modality and summed over modalities."""
    posteriors = list(posteriors)
    if not posteriors:
        raise ContractError("loss_kl needs at least one posterior")
    total = None
    for post in posteriors:
        t = post.mu * post.mu + post.logvar.exp()
        t = t - post.logvar
        t = t - 1.0
        term = t.mean() * 0.5
        total = term if total is None else total + term
    return total


def vae_total_loss(params: MultimodalVaeParams, study, mask: Mask,
                   weights: LossWeights, rng: Rng):
    """Masked-reconstruction objective for one fully observed study.

    Encodes every modality, fuses the masked subset and the full set, draws
    one latent from the masked posterior, and scores reconstruction of all
    modalities plus the mean-alignment and KL penalties.  Returns the scalar
    loss and a float breakdown.
    """
    m = params.n_modalities
    if len(mask) != m:
        raise ContractError(f"mask length {len(mask)} != modality count {m}")
    if mask.count == 0:
        raise ContractError("mask must observe at least one modality")
    for modality in params.modalities:
        if modality not in study.images:
            raise ContractError(f"study {study.id} lacks modality {modality!r}")
    xs = [Tensor(study.images[mod].reshape(-1)) for mod in params.modalities]
    posts = [encode_modality(params, i, xs[i]) for i in range(m)]
    fused_masked = poe_fuse([posts[i] for i in mask.indices])
    fused_full = poe_fuse(posts)
    z = sample_posterior(fused_masked, rng)
    recon = decode(params, z)
    l_rec = loss_rec(recon, xs)
    l_pull = loss_pull(fused_masked.mu, fused_full.mu)
    l_kl = loss_kl(posts)
    total = l_rec + weights.lambda_pull * l_pull + weights.beta_kl * l_kl
    parts = {
        "total": total.item(), "rec": l_rec.item(),
        "pull": l_pull.item(), "kl": l_kl.item(),
    }
    return total, parts


def train_vae(config, manifest, studies, family: str, params=None):
    """Train the VAE for one modality family on the manifest's train split.

    ``config`` is a run configuration (seed, model, weights, optimizer
    sections).  Masks are drawn per sample from the non-empty scheme.  Pass
    ``params`` to continue training an existing model; otherwise parameters
    are initialized from a seed derived from config.seed and the family.
    """
    modalities = FAMILIES[family]
    train_ids = [
        sid for sid in manifest.ids_of_family(family, "train")
    ]
    if not train_ids:
        raise ContractError(f"train split holds no {family} studies")
    if params is None:
        init_rng = Rng(derive_seed(config.seed, f"vae-init-{family}"))
        params = init_vae(
            init_rng, modalities, image_dim=manifest.spec.grid ** 2,
            latent_dim=config.model.latent_dim, hidden=config.model.hidden,
            activation=config.model.activation,
            logvar_bias_init=config.model.logvar_bias_init,
        )
    weights = config.weights
    m = params.n_modalities

    def chunk_loss(chunk, rng):
        total = None
        sums = {}
        for sid in chunk:
            mask = sample_mask(rng, m, "uniform_nonempty")
            loss, parts = vae_total_loss(params, studies[sid], mask, weights, rng)
            total = loss if total is None else total + loss
            for key, value in parts.items():
                sums[key] = sums.get(key, 0.0) + value
        scale = 1.0 / len(chunk)
        return total * scale, {k: v * scale for k, v in sums.items()}

    opt = config.optimizer
    history = fit(
        params.parameters(), train_ids, chunk_loss,
        epochs=opt.epochs, effective_batch=opt.effective_batch,
        base_lr=opt.lr, weight_decay=opt.weight_decay,
        warmup_fraction=opt.warmup_fraction,
        rng=Rng(derive_seed(config.seed, f"vae-train-{family}")),
    )
    return params, history
