"""Dataset assembly: stratified splits, the manifest, and study file IO.

Studies are generated with per-study derived seeds (``seed XOR index``) so
any subset regenerates identically without running the whole batch.  Splits
use per-class shuffling plus largest-remainder rounding, giving per-class
proportionality within one study.

Study file layout (little-endian): magic ``PMPB``, version u32, grid u32,
modality count u32, modality id list u32 each, then one row-major float64
image per listed modality.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, FormatError
from .jsonutil import read_json, write_json
from .phantom import FAMILIES, Modality, PhantomSpec, Study, generate_study
from .rng import Rng, derive_seed

STUDY_MAGIC = b"PMPB"
STUDY_VERSION = 1

DEFAULT_CLASS_MIX = {0: 0.3, 1: 0.7}
DEFAULT_CLASS_FAMILIES = {0: "ct_pair", 1: "dce_triplet"}

SPLIT_NAMES = ("train", "val", "test", "test_mini")


def largest_remainder(total: int, weights) -> list:
    """Apportion ``total`` into integer counts proportional to ``weights``.

    Floors the exact shares, then hands the remaining units to the largest
    fractional parts; ties break toward the lower index so the result is
    deterministic.
    """
    weights = [float(w) for w in weights]
    wsum = sum(weights)
    exact = [total * w / wsum for w in weights]
    counts = [math.floor(e) for e in exact]
    order = sorted(range(len(weights)), key=lambda i: (counts[i] - exact[i], i))
    for i in order[: total - sum(counts)]:
        counts[i] += 1
    return counts


def split(id_class_pairs, ratios=(0.7, 0.1, 0.2), mini_fraction=0.05, seed=0) -> dict:
    """Stratified train/val/test split plus the nested test_mini subset.

    ``id_class_pairs`` is an ordered list of (study id, organ class); the
    caller's ordering plus the seed fully determine the outcome.  test_mini
    holds ceil(mini_fraction * total) ids drawn from the test split with the
    same per-class proportionality.
    """
    pairs = list(id_class_pairs)
    total = len(pairs)
    if total < 20:
        raise ContractError(f"need at least 20 studies to split, got {total}")
    if len(set(sid for sid, _ in pairs)) != total:
        raise ContractError("duplicate study ids")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ContractError(f"ratios must sum to 1, got {ratios}")
    if any(r < 0 for r in ratios):
        raise ContractError(f"ratios must be non-negative, got {ratios}")
    if not 0.0 <= mini_fraction <= ratios[2]:
        raise ContractError(
            f"mini_fraction must lie in [0, test ratio], got {mini_fraction}"
        )

    by_class = {}
    for sid, cls in pairs:
        by_class.setdefault(cls, []).append(sid)
    for cls, ids in by_class.items():
        if len(ids) < 5:
            raise ContractError(f"class {cls} has only {len(ids)} studies, need 5")

    rng = Rng(derive_seed(seed, "split"))
    parts = {name: [] for name in SPLIT_NAMES}
    test_slices = {}
    for cls in sorted(by_class):
        ids = list(by_class[cls])
        rng.shuffle(ids)
        n_train, n_val, n_test = largest_remainder(len(ids), ratios)
        parts["train"].extend(ids[:n_train])
        parts["val"].extend(ids[n_train:n_train + n_val])
        test_slices[cls] = ids[n_train + n_val:]
        parts["test"].extend(test_slices[cls])

    n_mini = math.ceil(mini_fraction * total)
    n_test_total = len(parts["test"])
    classes = sorted(test_slices)
    quotas = largest_remainder(n_mini, [len(test_slices[c]) / n_test_total for c in classes])
    for cls, quota in zip(classes, quotas):
        parts["test_mini"].extend(test_slices[cls][: min(quota, len(test_slices[cls]))])

    return {name: sorted(ids) for name, ids in parts.items()}


@dataclass
class DatasetManifest:
    """Everything needed to regenerate or reload a dataset."""

    seed: int
    spec: PhantomSpec
    studies: list = field(default_factory=list)  # {id, class, family} records
    splits: dict = field(default_factory=dict)
    class_families: dict = field(default_factory=dict)

    @property
    def n_studies(self) -> int:
        return len(self.studies)

    def class_of(self, study_id: str) -> int:
        for record in self.studies:
            if record["id"] == study_id:
                return record["class"]
        raise ContractError(f"unknown study id {study_id!r}")

    def ids_of_family(self, family: str, split_name: str) -> list:
        members = {r["id"] for r in self.studies if r["family"] == family}
        return [sid for sid in self.splits[split_name] if sid in members]

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "spec": self.spec.to_dict(),
            "studies": self.studies,
            "splits": self.splits,
            "class_families": {str(k): v for k, v in self.class_families.items()},
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "DatasetManifest":
        return cls(
            seed=d["seed"],
            spec=PhantomSpec.from_dict(d["spec"]),
            studies=list(d["studies"]),
            splits={k: list(v) for k, v in d["splits"].items()},
            class_families={int(k): v for k, v in d["class_families"].items()},
        )

    def save(self, path):
        write_json(path, self.to_json_dict())

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        return cls.from_json_dict(read_json(path))


def generate_dataset(seed: int, n_studies: int, class_mix=None, spec=None,
                     class_families=None, ratios=(0.7, 0.1, 0.2),
                     mini_fraction=0.05):
    """Generate all studies and the split manifest.

    Returns (manifest, studies) with studies keyed by id.  Study ``i`` uses
    the derived seed ``seed XOR i``, so :func:`regenerate_study` can rebuild
    any single study later.
    """
    if n_studies < 20:
        raise ContractError(f"need at least 20 studies, got {n_studies}")
    class_mix = dict(DEFAULT_CLASS_MIX if class_mix is None else class_mix)
    class_families = dict(
        DEFAULT_CLASS_FAMILIES if class_families is None else class_families
    )
    spec = PhantomSpec() if spec is None else spec
    spec.validate()
    if any(w <= 0 for w in class_mix.values()):
        raise ContractError(f"class mix weights must be positive, got {class_mix}")
    for cls in class_mix:
        if cls not in class_families:
            raise ContractError(f"class {cls} has no family assignment")
        if class_families[cls] not in FAMILIES:
            raise ContractError(f"unknown family {class_families[cls]!r}")

    classes = sorted(class_mix)
    counts = largest_remainder(n_studies, [class_mix[c] for c in classes])
    class_sequence = []
    for cls, count in zip(classes, counts):
        class_sequence.extend([cls] * count)

    manifest = DatasetManifest(seed=seed, spec=spec, class_families=class_families)
    studies = {}
    for index, cls in enumerate(class_sequence):
        study = generate_study(
            Rng(seed ^ index), spec, class_families[cls], cls,
            study_id=f"s{index:04d}",
        )
        studies[study.id] = study
        manifest.studies.append(
            {"id": study.id, "class": cls, "family": study.family}
        )
    manifest.splits = split(
        [(r["id"], r["class"]) for r in manifest.studies],
        ratios=ratios, mini_fraction=mini_fraction, seed=seed,
    )
    return manifest, studies


def regenerate_study(manifest: DatasetManifest, study_id: str) -> Study:
    """Rebuild a single study (with its region masks) from the manifest."""
    for index, record in enumerate(manifest.studies):
        if record["id"] == study_id:
            return generate_study(
                Rng(manifest.seed ^ index), manifest.spec,
                record["family"], record["class"], study_id=study_id,
            )
    raise ContractError(f"unknown study id {study_id!r}")


def write_study_file(path, study: Study):
    mods = FAMILIES[study.family]
    grid = study.grid
    with open(path, "wb") as handle:
        handle.write(STUDY_MAGIC)
        handle.write(struct.pack("<III", STUDY_VERSION, grid, len(mods)))
        handle.write(struct.pack(f"<{len(mods)}I", *(int(m) for m in mods)))
        for modality in mods:
            image = study.images[modality]
            if image.shape != (grid, grid):
                raise ContractError(f"image shape {image.shape} does not match grid")
            handle.write(np.ascontiguousarray(image, dtype="<f8").tobytes())


def read_study_file(path):
    """Read one study file; returns (grid, images dict)."""
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[:4] != STUDY_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated header")
    version, grid, count = struct.unpack("<III", blob[4:16])
    if version != STUDY_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    offset = 16 + 4 * count
    if len(blob) < offset:
        raise FormatError(f"{path}: truncated modality list")
    codes = struct.unpack(f"<{count}I", blob[16:offset])
    try:
        modalities = [Modality(code) for code in codes]
    except ValueError as exc:
        raise FormatError(f"{path}: unknown modality code in {codes}") from exc
    per_image = grid * grid * 8
    if len(blob) != offset + per_image * count:
        raise FormatError(
            f"{path}: expected {offset + per_image * count} bytes, got {len(blob)}"
        )
    images = {}
    for modality in modalities:
        raw = np.frombuffer(blob, dtype="<f8", count=grid * grid, offset=offset)
        images[modality] = raw.reshape(grid, grid).copy()
        offset += per_image
    return grid, images


def save_dataset(manifest: DatasetManifest, studies: dict, out_dir):
    os.makedirs(os.path.join(out_dir, "studies"), exist_ok=True)
    manifest.save(os.path.join(out_dir, "manifest.json"))
    for record in manifest.studies:
        write_study_file(
            os.path.join(out_dir, "studies", f"{record['id']}.bin"),
            studies[record["id"]],
        )


def load_dataset(out_dir):
    manifest = DatasetManifest.load(os.path.join(out_dir, "manifest.json"))
    studies = {}
    for record in manifest.studies:
        _, images = read_study_file(
            os.path.join(out_dir, "studies", f"{record['id']}.bin")
        )
        family = FAMILIES[record["family"]]
        if tuple(sorted(images)) != tuple(sorted(family)):
            raise FormatError(
                f"study {record['id']} holds {sorted(images)}, manifest says "
                f"{record['family']}"
            )
        studies[record["id"]] = Study(
            id=record["id"], organ_class=record["class"],
            family=record["family"], images=images,
        )
    return manifest, studies
