"""Latent flow matching for missing-modality imputation.

A product-of-experts multimodal VAE maps co-registered images of one
modality family into a shared latent space; a velocity field learned by
flow matching transports partially observed latents onto fully observed
ones; decoding the transported latent imputes the missing modalities.
Everything runs on a deterministic synthetic phantom with a fixed
benchmark protocol.
"""

__version__ = "0.1.0"

from .autodiff import Tensor, backward, finite_diff_check
from .baselines import predict_direct, train_direct
from .config import RunConfig, config_from_dict, load_config
from .dataset import generate_dataset, load_dataset, save_dataset, split
from .latentflow import (
    IntegratorConfig,
    InterpolantConfig,
    impute,
    integrate,
    interpolate,
    lfm_loss,
    train_flow,
)
from .metrics import aggregate, psnr, ssim, ssim_percent
from .mmvae import Mask, init_vae, poe_fuse, train_vae, vae_total_loss
from .phantom import FAMILIES, Modality, PhantomSpec, Study, generate_study
from .rng import Rng, derive_seed
from .tasks import DEFAULT_TASKS, TaskSpec, format_task, parse_task
from .bench import ResultsTable, run_benchmark

__all__ = [
    "__version__",
    "Tensor", "backward", "finite_diff_check",
    "predict_direct", "train_direct",
    "RunConfig", "config_from_dict", "load_config",
    "generate_dataset", "load_dataset", "save_dataset", "split",
    "IntegratorConfig", "InterpolantConfig", "impute", "integrate",
    "interpolate", "lfm_loss", "train_flow",
    "aggregate", "psnr", "ssim", "ssim_percent",
    "Mask", "init_vae", "poe_fuse", "train_vae", "vae_total_loss",
    "FAMILIES", "Modality", "PhantomSpec", "Study", "generate_study",
    "Rng", "derive_seed",
    "DEFAULT_TASKS", "TaskSpec", "format_task", "parse_task",
    "ResultsTable", "run_benchmark",
]
