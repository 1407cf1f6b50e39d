"""Benchmark harness.

One run trains every needed modality family (VAE, velocity field, direct
regressor), evaluates every configured task with three methods, and writes
a fixed on-disk layout under the output directory:

    dataset/          manifest.json + studies/*.bin
    checkpoints/      vae_<family>.bin, velocity_<family>.bin, direct_<family>.bin
    history/          <family>.json training loss curves
    reports/          <method>__<task>.json per-sample metric reports
    results.json      canonical aggregate table
    results.csv       same rows, fixed header
    manifest.json     config, config hash, backend, versions, runtimes

results.json and results.csv are deterministic functions of the config;
manifest.json additionally records wall-clock timings and so differs
between runs.
"""

from __future__ import annotations

import math
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint, _kernels
from .baselines import predict_direct, train_direct
from .dataset import generate_dataset, save_dataset
from .errors import ContractError, FormatError
from .jsonutil import canonical_dumps, parse_float, read_json, write_json
from .latentflow import impute, train_flow
from .metrics import build_report, psnr, ssim_percent
from .mmvae import Mask, train_vae
from .phantom import FAMILIES
from .rng import Rng, derive_seed
from .tasks import TaskSpec

METHODS = ("flowmi", "direct", "copy_input")

CSV_HEADER = "method,task,seed,psnr_mean,psnr_std,ssim_mean,ssim_std,n"


@dataclass
class ResultRow:
    """One aggregate line: a (method, task, seed) cell of the benchmark."""

    method: str
    task: str
    seed: int
    psnr_mean: float
    psnr_std: float
    ssim_mean: float
    ssim_std: float
    n: int

    def to_json_dict(self) -> dict:
        return {
            "method": self.method, "task": self.task, "seed": self.seed,
            "psnr_mean": self.psnr_mean, "psnr_std": self.psnr_std,
            "ssim_mean": self.ssim_mean, "ssim_std": self.ssim_std,
            "n": self.n,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "ResultRow":
        return cls(
            method=data["method"], task=data["task"], seed=int(data["seed"]),
            psnr_mean=parse_float(data["psnr_mean"]),
            psnr_std=parse_float(data["psnr_std"]),
            ssim_mean=parse_float(data["ssim_mean"]),
            ssim_std=parse_float(data["ssim_std"]),
            n=int(data["n"]),
        )


def _fmt_float(value: float) -> str:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(float(value))


def _csv_field(value: str) -> str:
    """Quote a field if it holds a comma, per the usual CSV convention
    (task labels such as DCE1->DCE2,DCE3 need this)."""
    if "," in value or '"' in value:
        return '"' + value.replace('"', '""') + '"'
    return value


@dataclass
class ResultsTable:
    """Rows in canonical (task, method, seed) order."""

    rows: list = field(default_factory=list)

    @classmethod
    def from_rows(cls, rows) -> "ResultsTable":
        ordered = sorted(rows, key=lambda r: (r.task, r.method, r.seed))
        return cls(rows=ordered)

    def to_json_dict(self) -> dict:
        return {"rows": [row.to_json_dict() for row in self.rows]}

    @classmethod
    def from_json_dict(cls, data: dict) -> "ResultsTable":
        return cls(rows=[ResultRow.from_json_dict(r) for r in data["rows"]])

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for r in self.rows:
            lines.append(
                f"{r.method},{_csv_field(r.task)},{r.seed},"
                f"{_fmt_float(r.psnr_mean)},{_fmt_float(r.psnr_std)},"
                f"{_fmt_float(r.ssim_mean)},{_fmt_float(r.ssim_std)},{r.n}"
            )
        return "\n".join(lines) + "\n"

    def cell(self, method: str, task: str, seed: int = None) -> ResultRow:
        matches = [
            r for r in self.rows
            if r.method == method and r.task == task
            and (seed is None or r.seed == seed)
        ]
        if len(matches) != 1:
            raise ContractError(
                f"expected one row for ({method}, {task}, {seed}), "
                f"found {len(matches)}"
            )
        return matches[0]


def train_family(config, manifest, studies, family: str):
    """Train VAE, then velocity field on the frozen VAE, then the direct
    regressor, all for one family.  Returns (models, histories, runtimes)."""
    runtimes = {}
    t0 = time.perf_counter()
    vae, vae_hist = train_vae(config, manifest, studies, family)
    runtimes["vae"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    flow, flow_hist = train_flow(config, vae, manifest, studies, family)
    runtimes["flow"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    direct, direct_hist = train_direct(config, manifest, studies, family)
    runtimes["direct"] = time.perf_counter() - t0
    models = {"vae": vae, "flow": flow, "direct": direct}
    histories = {"vae": vae_hist, "flow": flow_hist, "direct": direct_hist}
    return models, histories, runtimes


def _copy_input_predict(task: TaskSpec, study):
    """Pixelwise mean of the observed input images, used for every output."""
    stack = np.stack([study.images[m] for m in task.inputs])
    return stack.mean(axis=0)


def evaluate_task(config, task: TaskSpec, models: dict, manifest, studies,
                  full_test: bool = False) -> dict:
    """Evaluate all methods on one task.  Returns {method: MetricReport}.

    Predictions see only the task's input modalities; metrics compare
    against the held-out ground truth of the output modalities.
    """
    split_name = "test" if full_test else "test_mini"
    ids = manifest.ids_of_family(task.family, split_name)
    if not ids:
        raise ContractError(
            f"{split_name} split holds no {task.family} studies"
        )
    family_mods = FAMILIES[task.family]
    mask = Mask.from_indices(
        len(family_mods), [family_mods.index(m) for m in task.inputs]
    )
    fam = models[task.family]
    samples = {method: [] for method in METHODS}
    for sid in ids:
        study = studies[sid]
        rng = Rng(derive_seed(config.seed, f"impute-{task.file_label}-{sid}"))
        flow_result = impute(
            fam["vae"], fam["flow"], study, mask,
            integrator=config.integrator, rng=rng,
        )
        direct_result = predict_direct(fam["direct"], study, mask)
        mean_image = _copy_input_predict(task, study)
        preds = {
            "flowmi": {m: flow_result.composited[m] for m in task.outputs},
            "direct": {m: direct_result.composited[m] for m in task.outputs},
            "copy_input": {m: mean_image for m in task.outputs},
        }
        for method in METHODS:
            for modality in task.outputs:
                truth = study.images[modality]
                pred = preds[method][modality]
                samples[method].append({
                    "study_id": sid,
                    "modality": modality.name,
                    "psnr_db": psnr(pred, truth, max_val=1.0),
                    "ssim_percent": ssim_percent(pred, truth, data_range=1.0),
                })
    return {
        method: build_report(task.label, method, samples[method])
        for method in METHODS
    }


def rows_from_reports(reports: dict, seed: int):
    """Flatten {method: MetricReport} into ResultRow records."""
    rows = []
    for method, report in reports.items():
        rows.append(ResultRow(
            method=method, task=report.task, seed=seed,
            psnr_mean=report.psnr.mean, psnr_std=report.psnr.std,
            ssim_mean=report.ssim.mean, ssim_std=report.ssim.std,
            n=report.psnr.n,
        ))
    return rows


def _history_json(histories: dict) -> dict:
    return {
        name: {"epochs": hist.epochs, "n_train": len(hist.train_ids)}
        for name, hist in histories.items()
    }


def checkpoint_paths(out_dir, family: str) -> dict:
    base = Path(out_dir) / "checkpoints"
    return {
        "vae": base / f"vae_{family}.bin",
        "flow": base / f"velocity_{family}.bin",
        "direct": base / f"direct_{family}.bin",
    }


def save_models(out_dir, family: str, models: dict):
    paths = checkpoint_paths(out_dir, family)
    paths["vae"].parent.mkdir(parents=True, exist_ok=True)
    checkpoint.save_vae(paths["vae"], models["vae"])
    checkpoint.save_velocity(paths["flow"], models["flow"])
    checkpoint.save_direct(paths["direct"], models["direct"])


def load_models(out_dir, family: str) -> dict:
    paths = checkpoint_paths(out_dir, family)
    for path in paths.values():
        if not path.exists():
            raise FormatError(f"missing checkpoint {path}")
    return {
        "vae": checkpoint.load_vae(paths["vae"]),
        "flow": checkpoint.load_velocity(paths["flow"]),
        "direct": checkpoint.load_direct(paths["direct"]),
    }


def families_of(config):
    return sorted({task.family for task in config.tasks})


def prepare_dataset(config, out_dir):
    """Generate the dataset from the config and save it under
    out_dir/dataset.  Returns (manifest, studies)."""
    ds = config.dataset
    manifest, studies = generate_dataset(
        seed=config.seed, n_studies=ds.n_studies, class_mix=ds.class_mix,
        spec=ds.spec, class_families=ds.class_families, ratios=ds.ratios,
        mini_fraction=ds.mini_fraction,
    )
    save_dataset(manifest, studies, Path(out_dir) / "dataset")
    return manifest, studies


def train_all(config, manifest, studies, out_dir):
    """Train and checkpoint every family the config's tasks need."""
    models = {}
    runtimes = {}
    history_dir = Path(out_dir) / "history"
    history_dir.mkdir(parents=True, exist_ok=True)
    for family in families_of(config):
        fam_models, histories, fam_times = train_family(
            config, manifest, studies, family
        )
        models[family] = fam_models
        runtimes[family] = fam_times
        save_models(out_dir, family, fam_models)
        write_json(history_dir / f"{family}.json", _history_json(histories))
    return models, runtimes


def evaluate_all(config, models, manifest, studies, out_dir,
                 full_test: bool = False):
    """Evaluate every task, write per-method reports, and return
    (ResultsTable, runtimes)."""
    reports_dir = Path(out_dir) / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    runtimes = {}
    for task in config.tasks:
        t0 = time.perf_counter()
        reports = evaluate_task(
            config, task, models, manifest, studies, full_test=full_test
        )
        runtimes[task.label] = time.perf_counter() - t0
        for method, report in reports.items():
            write_json(
                reports_dir / f"{method}__{task.file_label}.json",
                report.to_json_dict(),
            )
        rows.extend(rows_from_reports(reports, config.seed))
    return ResultsTable.from_rows(rows), runtimes


def write_results(out_dir, table: ResultsTable):
    out = Path(out_dir)
    with open(out / "results.json", "w") as handle:
        handle.write(canonical_dumps(table.to_json_dict()) + "\n")
    with open(out / "results.csv", "w") as handle:
        handle.write(table.to_csv())


def run_manifest_dict(config, *, full_test, wall_clock, train_runtimes,
                      eval_runtimes, n_rows) -> dict:
    from . import __version__

    return {
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "backend": _kernels.backend_name(),
        "versions": {
            "package": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "full_test": full_test,
        "n_rows": n_rows,
        "wall_clock_seconds": wall_clock,
        "runtimes": {"train": train_runtimes, "evaluate": eval_runtimes},
    }


def run_benchmark(config, out_dir, full_test: bool = False) -> ResultsTable:
    """End-to-end run: dataset, training, evaluation, result files."""
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t_start = time.perf_counter()
    manifest, studies = prepare_dataset(config, out)
    models, train_runtimes = train_all(config, manifest, studies, out)
    table, eval_runtimes = evaluate_all(
        config, models, manifest, studies, out, full_test=full_test
    )
    write_results(out, table)
    write_json(out / "manifest.json", run_manifest_dict(
        config, full_test=full_test,
        wall_clock=time.perf_counter() - t_start,
        train_runtimes=train_runtimes, eval_runtimes=eval_runtimes,
        n_rows=len(table.rows),
    ))
    return table


def load_results(out_dir) -> ResultsTable:
    return ResultsTable.from_json_dict(read_json(Path(out_dir) / "results.json"))
