"""Synthetic paired-modality phantom studies.

Each study is one simulated patient on a small square grid: an elliptical
organ containing a circular lesion, rendered once per modality.  Contrast
behaviour is a per-modality enhancement weight applied to the lesion region
only, so the non-enhanced and enhanced images share identical anatomy
(perfect registration by construction) and differ exactly where contrast
accumulates.  The CT family renders {CT, CTC}; the DCE family renders the
three phases {DCE1, DCE2, DCE3} with a wash-in / peak / wash-out weight
curve.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError
from .rng import Rng


class Modality(enum.IntEnum):
    """Modality identifiers; the integer codes are the on-disk ids."""

    CT = 0
    CTC = 1
    DCE1 = 2
    DCE2 = 3
    DCE3 = 4


FAMILIES = {
    "ct_pair": (Modality.CT, Modality.CTC),
    "dce_triplet": (Modality.DCE1, Modality.DCE2, Modality.DCE3),
}


def family_of(modality: Modality) -> str:
    for name, members in FAMILIES.items():
        if modality in members:
            return name
    raise ContractError(f"modality {modality!r} belongs to no family")


@dataclass
class PhantomSpec:
    """Geometry, intensity, and noise parameters of the generator.

    Base values describe the nominal phantom; the ``*_jitter`` fields give
    the half-width of the per-study uniform perturbation applied to each
    quantity.  ``class_axis_step`` stretches the organ's horizontal semi-axis
    per organ class so the stratification label has geometric meaning.
    """

    grid: int = 16
    organ_center: tuple = (7.5, 7.5)
    organ_axes: tuple = (5.2, 6.2)
    organ_intensity: float = 0.45
    lesion_radius: float = 4.2
    lesion_intensity: float = 0.10
    enhancement: float = 0.45
    dce_weights: tuple = (0.3, 1.0, 0.6)
    ct_weight: float = 1.0
    noise_sigma: float = 0.02
    center_jitter: float = 0.5
    axis_jitter: float = 0.05
    intensity_jitter: float = 0.08
    radius_jitter: float = 0.4
    lesion_center_jitter: float = 1.0
    class_axis_step: float = 0.06

    def validate(self):
        if self.grid < 7:
            raise ContractError(f"grid must be at least 7, got {self.grid}")
        if not 0.0 < self.organ_intensity < 1.0:
            raise ContractError("organ intensity must lie in (0, 1)")
        if not 0.0 <= self.lesion_intensity < 1.0:
            raise ContractError("lesion base intensity must lie in [0, 1)")
        if self.lesion_radius <= 0:
            raise ContractError("lesion radius must be positive")
        if self.enhancement < 0:
            raise ContractError("enhancement must be non-negative")
        w1, w2, w3 = self.dce_weights
        if not (w2 >= w1 and w2 >= w3):
            raise ContractError(
                f"DCE weights must peak at phase 2, got {self.dce_weights}"
            )
        if self.ct_weight < 0:
            raise ContractError("ct_weight must be non-negative")
        if self.noise_sigma < 0:
            raise ContractError("noise sigma must be non-negative")
        for name in ("center_jitter", "axis_jitter", "intensity_jitter",
                     "radius_jitter", "lesion_center_jitter"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be non-negative")

    def enhancement_weight(self, modality: Modality) -> float:
        if modality == Modality.CT:
            return 0.0
        if modality == Modality.CTC:
            return self.ct_weight
        return self.dce_weights[int(modality) - int(Modality.DCE1)]

    def to_dict(self) -> dict:
        return {
            "grid": self.grid,
            "organ_center": list(self.organ_center),
            "organ_axes": list(self.organ_axes),
            "organ_intensity": self.organ_intensity,
            "lesion_radius": self.lesion_radius,
            "lesion_intensity": self.lesion_intensity,
            "enhancement": self.enhancement,
            "dce_weights": list(self.dce_weights),
            "ct_weight": self.ct_weight,
            "noise_sigma": self.noise_sigma,
            "center_jitter": self.center_jitter,
            "axis_jitter": self.axis_jitter,
            "intensity_jitter": self.intensity_jitter,
            "radius_jitter": self.radius_jitter,
            "lesion_center_jitter": self.lesion_center_jitter,
            "class_axis_step": self.class_axis_step,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        spec = cls()
        known = spec.to_dict()
        for key, value in d.items():
            if key not in known:
                raise ContractError(f"unknown phantom spec field {key!r}")
            if key in ("organ_center", "organ_axes", "dce_weights"):
                value = tuple(value)
            spec = replace(spec, **{key: value})
        return spec


@dataclass
class Study:
    """One synthetic patient: co-registered images of a single modality
    family plus the generator's region masks (in-memory only; masks are
    reproducible from the manifest seed and are not serialized)."""

    id: str
    organ_class: int
    family: str
    images: dict = field(default_factory=dict)
    lesion_mask: np.ndarray | None = None
    organ_mask: np.ndarray | None = None

    @property
    def grid(self) -> int:
        return next(iter(self.images.values())).shape[0]

    @property
    def modalities(self):
        return tuple(sorted(self.images.keys()))


_PLACEMENT_ATTEMPTS = 200


def generate_study(rng: Rng, spec: PhantomSpec, family: str, organ_class: int,
                   study_id: str = "s0") -> Study:
    """Render one study; every random draw comes from ``rng`` in a fixed
    order, so a fixed seed reproduces the study bitwise."""
    spec.validate()
    if family not in FAMILIES:
        raise ContractError(f"unknown family {family!r}")
    g = spec.grid
    yy, xx = np.mgrid[0:g, 0:g].astype(np.float64)

    def jitter(width):
        return (2.0 * rng.uniform() - 1.0) * width

    cy = spec.organ_center[0] + jitter(spec.center_jitter)
    cx = spec.organ_center[1] + jitter(spec.center_jitter)
    ay = spec.organ_axes[0] * (1.0 + jitter(spec.axis_jitter))
    ax = spec.organ_axes[1] * (1.0 + jitter(spec.axis_jitter))
    ax *= 1.0 + spec.class_axis_step * organ_class
    intensity = spec.organ_intensity * (1.0 + jitter(spec.intensity_jitter))
    radius = max(1.0, spec.lesion_radius + jitter(spec.radius_jitter))

    organ = ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2 <= 1.0

    # place the lesion by rejection so its pixel support sits fully inside
    # the organ's pixel support
    lesion = None
    for _ in range(_PLACEMENT_ATTEMPTS):
        ly = cy + jitter(spec.lesion_center_jitter)
        lx = cx + jitter(spec.lesion_center_jitter)
        candidate = (yy - ly) ** 2 + (xx - lx) ** 2 <= radius * radius
        if candidate.any() and bool(np.all(organ[candidate])):
            lesion = candidate
            break
    if lesion is None:
        raise ContractError(
            f"could not place a lesion of radius {radius:.2f} inside the organ; "
            "the spec geometry leaves no room"
        )

    base = intensity * organ + spec.lesion_intensity * lesion
    images = {}
    for modality in FAMILIES[family]:
        img = base + spec.enhancement_weight(modality) * spec.enhancement * lesion
        if spec.noise_sigma > 0:
            noise = rng.normals(g * g).reshape(g, g)
            img = img + spec.noise_sigma * noise
        images[modality] = np.clip(img, 0.0, 1.0)
    return Study(
        id=study_id,
        organ_class=organ_class,
        family=family,
        images=images,
        lesion_mask=lesion,
        organ_mask=organ,
    )


def normalize_ct(image_hu, window=(-200.0, 300.0)) -> np.ndarray:
    """Window a raw HU image and min-max scale the window to [0, 1]."""
    lo, hi = float(window[0]), float(window[1])
    if not lo < hi:
        raise ContractError(f"window must satisfy lo < hi, got [{lo}, {hi}]")
    arr = np.asarray(image_hu, dtype=np.float64)
    return (np.clip(arr, lo, hi) - lo) / (hi - lo)


def normalize_mr(image) -> np.ndarray:
    """Per-scan z-score; a (near-)constant image maps to all zeros."""
    arr = np.asarray(image, dtype=np.float64)
    std = float(arr.std())
    if std < 1e-8:
        return np.zeros_like(arr)
    return (arr - arr.mean()) / std
