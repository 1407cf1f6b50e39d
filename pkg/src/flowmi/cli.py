"""Command-line interface.

Subcommands: generate, train, impute, evaluate, benchmark, verify, report.
All state flows through flags and the config file; no environment
variables are consulted.
"""

from __future__ import annotations

import functools
import sys
from pathlib import Path

import click

from . import __version__, bench
from . import verify as verify_mod
from .config import RunConfig, load_config
from .dataset import load_dataset, write_study_file
from .errors import ConfigError, FlowmiError
from .latentflow import impute as impute_op
from .mmvae import Mask
from .phantom import FAMILIES, Study
from .rng import Rng, derive_seed
from .tasks import parse_task


def _resolve_config(config_path, seed, tasks) -> RunConfig:
    config = load_config(config_path) if config_path else RunConfig()
    if seed is not None:
        config.seed = seed
    if tasks:
        parsed = []
        for chunk in tasks:
            for text in chunk.split(";"):
                text = text.strip()
                if text:
                    parsed.append(parse_task(text))
        if not parsed:
            raise ConfigError("--tasks produced no task specs")
        config.tasks = tuple(parsed)
    config.validate()
    return config


def _cli_errors(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except FlowmiError as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


_config_option = click.option(
    "--config", "config_path", type=click.Path(exists=True, dir_okay=False),
    default=None, help="JSON run config (or a previous run's manifest.json).")
_seed_option = click.option(
    "--seed", type=int, default=None, help="Override the config seed.")
_tasks_option = click.option(
    "--tasks", multiple=True,
    help="Task specs like 'CT->CTC'; repeat or separate with ';'.")
_out_option = click.option(
    "--out", "out_dir", type=click.Path(file_okay=False), default="runs/latest",
    show_default=True, help="Run output directory.")
_full_test_option = click.option(
    "--full-test", is_flag=True,
    help="Evaluate on the full test split instead of test_mini.")


@click.group()
@click.version_option(version=__version__, prog_name="flowmi")
def main():
    """Latent flow matching for missing-modality imputation, benchmarked on a
    synthetic paired-modality phantom."""


@main.command()
@_config_option
@_seed_option
@_tasks_option
@_out_option
@_cli_errors
def generate(config_path, seed, tasks, out_dir):
    """Generate the phantom dataset and write it under OUT/dataset."""
    config = _resolve_config(config_path, seed, tasks)
    manifest, _ = bench.prepare_dataset(config, out_dir)
    counts = {name: len(ids) for name, ids in manifest.splits.items()}
    click.echo(
        f"generated {len(manifest.studies)} studies "
        f"(seed {config.seed}) under {out_dir}/dataset; splits {counts}"
    )


def _load_run_dataset(out_dir):
    dataset_dir = Path(out_dir) / "dataset"
    if not (dataset_dir / "manifest.json").exists():
        raise ConfigError(
            f"no dataset under {dataset_dir}; run `flowmi generate` first"
        )
    return load_dataset(dataset_dir)


@main.command()
@_config_option
@_seed_option
@_tasks_option
@_out_option
@_cli_errors
def train(config_path, seed, tasks, out_dir):
    """Train all models on an existing dataset; write checkpoints."""
    config = _resolve_config(config_path, seed, tasks)
    manifest, studies = _load_run_dataset(out_dir)
    _, runtimes = bench.train_all(config, manifest, studies, out_dir)
    for family in sorted(runtimes):
        times = runtimes[family]
        click.echo(
            f"{family}: vae {times['vae']:.1f}s, flow {times['flow']:.1f}s, "
            f"direct {times['direct']:.1f}s"
        )
    click.echo(f"checkpoints under {out_dir}/checkpoints")


def _load_models(config, out_dir):
    models = {}
    for family in bench.families_of(config):
        models[family] = bench.load_models(out_dir, family)
    return models


@main.command()
@_config_option
@_seed_option
@_tasks_option
@_out_option
@_full_test_option
@_cli_errors
def evaluate(config_path, seed, tasks, out_dir, full_test):
    """Evaluate trained checkpoints on every configured task."""
    config = _resolve_config(config_path, seed, tasks)
    manifest, studies = _load_run_dataset(out_dir)
    models = _load_models(config, out_dir)
    table, _ = bench.evaluate_all(
        config, models, manifest, studies, out_dir, full_test=full_test
    )
    bench.write_results(out_dir, table)
    _echo_table(table)


@main.command()
@_config_option
@_seed_option
@_tasks_option
@_out_option
@_full_test_option
@_cli_errors
def impute(config_path, seed, tasks, out_dir, full_test):
    """Impute missing modalities for evaluation studies; write the
    composited studies under OUT/imputed."""
    config = _resolve_config(config_path, seed, tasks)
    manifest, studies = _load_run_dataset(out_dir)
    models = _load_models(config, out_dir)
    split_name = "test" if full_test else "test_mini"
    for task in config.tasks:
        ids = manifest.ids_of_family(task.family, split_name)
        family_mods = FAMILIES[task.family]
        mask = Mask.from_indices(
            len(family_mods), [family_mods.index(m) for m in task.inputs]
        )
        fam = models[task.family]
        task_dir = Path(out_dir) / "imputed" / task.file_label
        task_dir.mkdir(parents=True, exist_ok=True)
        for sid in ids:
            study = studies[sid]
            rng = Rng(derive_seed(config.seed, f"impute-{task.file_label}-{sid}"))
            result = impute_op(
                fam["vae"], fam["flow"], study, mask,
                integrator=config.integrator, rng=rng,
            )
            out_study = Study(
                id=sid, organ_class=study.organ_class, family=study.family,
                images=result.composited,
            )
            write_study_file(task_dir / f"{sid}.bin", out_study)
        click.echo(f"{task.label}: wrote {len(ids)} studies to {task_dir}")


@main.command()
@_config_option
@_seed_option
@_tasks_option
@_out_option
@_full_test_option
@_cli_errors
def benchmark(config_path, seed, tasks, out_dir, full_test):
    """Generate, train, and evaluate end to end; write the results table."""
    config = _resolve_config(config_path, seed, tasks)
    table = bench.run_benchmark(config, out_dir, full_test=full_test)
    _echo_table(table)
    click.echo(f"results under {out_dir}")


@main.command()
@_cli_errors
def verify():
    """Run the analytic self-check suites; exit nonzero on any failure."""
    records = verify_mod.run_all()
    width = max(len(name) for name, _, _ in records)
    failures = 0
    for name, ok, detail in records:
        status = "pass" if ok else "FAIL"
        click.echo(f"{name:<{width}}  {status}  {detail}")
        failures += 0 if ok else 1
    if failures:
        click.echo(f"{failures} suite(s) failed", err=True)
        sys.exit(1)
    click.echo("all suites passed")


@main.command()
@_out_option
@_cli_errors
def report(out_dir):
    """Print the results table from a finished run."""
    path = Path(out_dir) / "results.json"
    if not path.exists():
        raise ConfigError(f"no results at {path}; run `flowmi benchmark` first")
    _echo_table(bench.load_results(out_dir))


def _echo_table(table):
    header = f"{'task':<22} {'method':<12} {'psnr':>16} {'ssim':>16} {'n':>4}"
    click.echo(header)
    click.echo("-" * len(header))
    for row in table.rows:
        psnr = f"{row.psnr_mean:.2f} ± {row.psnr_std:.2f}"
        ssim = f"{row.ssim_mean:.2f} ± {row.ssim_std:.2f}"
        click.echo(
            f"{row.task:<22} {row.method:<12} {psnr:>16} {ssim:>16} {row.n:>4}"
        )


if __name__ == "__main__":
    main()
