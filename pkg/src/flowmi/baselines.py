"""Zero-substitution direct regression baseline.

One shared MLP maps the concatenation of all modality images (zero-filled
at missing slots) plus the mask vector straight to all modality images.  It
is trained with the same optimizer, schedule, and mask distribution as the
VAE so comparisons isolate the generative mechanism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ContractError
from .latentflow import ImputeResult
from .mmvae import Mask, sample_mask
from .nn import Mlp, fit, init_mlp, mlp_forward, mlp_forward_np
from .phantom import FAMILIES
from .rng import Rng, derive_seed


@dataclass
class DirectRegressorParams:
    modalities: tuple
    image_dim: int
    net: Mlp  # (M * image_dim + M) -> M * image_dim

    def parameters(self):
        return self.net.parameters()

    @property
    def n_modalities(self) -> int:
        return len(self.modalities)


def init_direct(rng: Rng, modalities, image_dim: int, hidden=(64,),
                activation: str = "tanh") -> DirectRegressorParams:
    modalities = tuple(modalities)
    m = len(modalities)
    net = init_mlp(
        rng, (m * image_dim + m, *hidden, m * image_dim), activation
    )
    return DirectRegressorParams(modalities=modalities, image_dim=image_dim, net=net)


def build_direct_input(params: DirectRegressorParams, study, mask: Mask) -> np.ndarray:
    """Missing slots are exactly zero; the mask vector is appended last."""
    if len(mask) != params.n_modalities:
        raise ContractError(
            f"mask length {len(mask)} != modality count {params.n_modalities}"
        )
    parts = []
    for i, modality in enumerate(params.modalities):
        if mask.observed[i]:
            parts.append(study.images[modality].reshape(-1))
        else:
            parts.append(np.zeros(params.image_dim))
    parts.append(np.array([1.0 if flag else 0.0 for flag in mask.observed]))
    return np.concatenate(parts)


def train_direct(config, manifest, studies, family: str,
                 params: DirectRegressorParams = None):
    """Minimize MSE from the zero-filled masked input to the full study."""
    modalities = FAMILIES[family]
    train_ids = manifest.ids_of_family(family, "train")
    if not train_ids:
        raise ContractError(f"train split holds no {family} studies")
    if params is None:
        init_rng = Rng(derive_seed(config.seed, f"direct-init-{family}"))
        params = init_direct(
            init_rng, modalities, image_dim=manifest.spec.grid ** 2,
            hidden=config.model.direct_hidden, activation=config.model.activation,
        )
    m = params.n_modalities
    targets = {
        sid: np.concatenate(
            [studies[sid].images[mod].reshape(-1) for mod in modalities]
        )
        for sid in train_ids
    }

    def chunk_loss(chunk, rng):
        total = None
        for sid in chunk:
            mask = sample_mask(rng, m, "uniform_nonempty")
            x = Tensor(build_direct_input(params, studies[sid], mask))
            diff = mlp_forward(params.net, x) - Tensor(targets[sid])
            term = (diff * diff).mean()
            total = term if total is None else total + term
        loss = total * (1.0 / len(chunk))
        return loss, {"total": loss.item()}

    opt = config.optimizer
    history = fit(
        params.parameters(), train_ids, chunk_loss,
        epochs=opt.epochs, effective_batch=opt.effective_batch,
        base_lr=opt.lr, weight_decay=opt.weight_decay,
        warmup_fraction=opt.warmup_fraction,
        rng=Rng(derive_seed(config.seed, f"direct-train-{family}")),
    )
    return params, history


def predict_direct(params: DirectRegressorParams, study_partial,
                   mask: Mask) -> ImputeResult:
    """Forward pass plus the same compositing contract as impute."""
    if mask.count == 0:
        raise ContractError("predict_direct needs at least one observed modality")
    for i in mask.indices:
        modality = params.modalities[i]
        if modality not in study_partial.images:
            raise ContractError(
                f"mask marks {modality!r} observed but study {study_partial.id} "
                "lacks it"
            )
    x = build_direct_input(params, study_partial, mask)
    out = mlp_forward_np(params.net, x)
    d = params.image_dim
    grid = math.isqrt(d)
    if grid * grid != d:
        raise ContractError(f"image_dim {d} is not a square grid")
    decoded = {}
    composited = {}
    for i, modality in enumerate(params.modalities):
        decoded[modality] = out[i * d:(i + 1) * d].reshape(grid, grid).copy()
        if mask.observed[i]:
            composited[modality] = study_partial.images[modality].copy()
        else:
            composited[modality] = decoded[modality].copy()
    return ImputeResult(decoded=decoded, composited=composited)
