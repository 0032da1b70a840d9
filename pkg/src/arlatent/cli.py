"""Command-line surface: generate, train, evaluate, traverse, compare, sweep.

Exit codes: 0 on success, 1 on runtime failure (divergence, corrupt data),
2 on usage or configuration errors.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import synth
from .config import ExperimentConfig, load_config
from .errors import (
    CheckpointNotFoundError,
    ContractError,
    CorruptArchiveError,
    InvalidConfigError,
    TrainingDivergedError,
)
from .metrics import MetricsReport, evaluate_model
from .models import load_checkpoint
from .report import render_comparison_table, render_report_tables, render_sweep_table
from .training import REGULARIZED_METHODS, fit
from .traversal import sample_base_codes, save_traversal_report, traverse


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (InvalidConfigError, ContractError, CheckpointNotFoundError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except (TrainingDivergedError, CorruptArchiveError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


@click.group(invoke_without_command=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Experiment config (JSON, comments allowed).")
@click.option("--seed", type=int, default=None, help="Override the training seed.")
@click.option("--output-dir", type=click.Path(file_okay=False), default=None,
              help="Override the output directory.")
@click.option("--device", type=str, default=None, help="Override the torch device hint.")
@click.option("--print-config", is_flag=True, help="Print the fully resolved config and exit.")
@click.pass_context
def main(ctx, config_path, seed, output_dir, device, print_config):
    """Attribute-regularized latent representation learning on synthetic shapes."""
    try:
        cfg = load_config(config_path)
    except InvalidConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    if seed is not None:
        cfg.train.seed = seed
    if output_dir is not None:
        cfg.output_dir = output_dir
    if device is not None:
        cfg.train.device = device
    ctx.obj = cfg
    if print_config:
        click.echo(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        ctx.exit(0)
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())
        ctx.exit(2)


def _load_dataset(path: Path) -> synth.DatasetArchive:
    if not path.is_dir():
        raise InvalidConfigError(f"dataset archive not found at {path}; run `generate` first")
    return synth.load_archive(path)


@main.command()
@click.pass_obj
@_guarded
def generate(cfg: ExperimentConfig):
    """Generate the synthetic dataset archive."""
    ds = cfg.dataset
    data = synth.generate_dataset(
        ds.n, ds.seed, tuple(ds.canvas), tuple(ds.split_fractions), ds.variation
    )
    path = cfg.archive_path()
    synth.save_archive(data, path)
    fingerprint = synth.dataset_fingerprint(path)
    click.echo(f"archive: {path}")
    click.echo(f"samples: {data.n_samples}  canvas: {data.canvas}  "
               f"splits: { {k: len(v) for k, v in data.splits.items()} }")
    for j, name in enumerate(data.attribute_names):
        col = data.attributes[:, j]
        click.echo(f"  {name}: min {col.min():.0f}  max {col.max():.0f}  mean {col.mean():.1f}")
    click.echo(f"fingerprint: {fingerprint}")


@main.command()
@click.option("--method", type=str, default=None, help="Override train.method.")
@click.option("--run-dir", type=click.Path(file_okay=False), default=None)
@click.pass_obj
@_guarded
def train(cfg: ExperimentConfig, method, run_dir):
    """Train one model and write a run directory."""
    if method is not None:
        cfg.train.method = method
    cfg.train.validate()
    archive_path = cfg.archive_path()
    dataset = _load_dataset(archive_path)
    fingerprint = synth.dataset_fingerprint(archive_path)
    run_dir = Path(run_dir) if run_dir else (
        Path(cfg.output_dir) / f"{cfg.train.method}_seed{cfg.train.seed}"
    )
    result = fit(cfg.train, cfg.model, dataset, run_dir=run_dir, dataset_fingerprint=fingerprint)
    manifest = dict(result.manifest)
    manifest["dataset_path"] = str(archive_path)
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    click.echo(f"run: {run_dir}")
    click.echo(f"epochs trained: {result.state.epoch}  best epoch: {result.state.best_epoch}  "
               f"best val loss: {result.state.best_val_loss:.6g}")


def _run_manifest(run_dir: Path) -> dict:
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.is_file():
        raise InvalidConfigError(f"{run_dir} has no manifest.json; is it a run directory?")
    return json.loads(manifest_path.read_text())


def _resolve_archive(run_dir: Path, archive: str | None) -> Path:
    if archive is not None:
        return Path(archive)
    manifest = _run_manifest(run_dir)
    if manifest.get("dataset_path"):
        return Path(manifest["dataset_path"])
    raise InvalidConfigError("no --archive given and the run manifest records no dataset path")


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--archive", type=click.Path(exists=True, file_okay=False), default=None)
@click.pass_obj
@_guarded
def evaluate(cfg: ExperimentConfig, run_dir, archive):
    """Evaluate a run's best checkpoint; writes report.json and tables.txt."""
    run_dir = Path(run_dir)
    manifest = _run_manifest(run_dir)
    archive_path = _resolve_archive(run_dir, archive)
    dataset = _load_dataset(archive_path)
    model, _ = load_checkpoint(run_dir / "best")
    method = manifest.get("method", "-")
    report = evaluate_model(
        model,
        dataset,
        split=cfg.eval.split,
        batch_size=cfg.eval.batch_size,
        regularized=method in REGULARIZED_METHODS,
    )
    out = run_dir / "eval"
    out.mkdir(exist_ok=True)
    report.to_json(out / "report.json")
    fingerprint = synth.dataset_fingerprint(archive_path)
    (out / "eval_manifest.json").write_text(json.dumps(
        {"dataset_fingerprint": fingerprint, "split": cfg.eval.split, "method": method},
        indent=2, sort_keys=True))
    tables = render_report_tables(report, method, method in REGULARIZED_METHODS)
    (out / "tables.txt").write_text(tables)
    click.echo(tables)


@main.command(name="traverse")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--archive", type=click.Path(exists=True, file_okay=False), default=None)
@click.pass_obj
@_guarded
def traverse_cmd(cfg: ExperimentConfig, run_dir, archive):
    """Emit latent-walk strips and measured-area records for a run."""
    run_dir = Path(run_dir)
    manifest = _run_manifest(run_dir)
    dataset = _load_dataset(_resolve_archive(run_dir, archive))
    model, _ = load_checkpoint(run_dir / "best")
    n_reg = model.config.num_regularized_dims
    method = manifest.get("method", "-")
    if method in REGULARIZED_METHODS and n_reg > 0:
        dims = list(range(min(n_reg, len(dataset.attribute_names))))
        attr_for_dim = {d: dataset.attribute_names[d] for d in dims}
    else:
        dims = list(range(min(6, model.config.latent_dim)))
        attr_for_dim = {}
    bases = sample_base_codes(
        model, dataset, n_bases=1, seed=cfg.eval.traversal_seed, split=cfg.eval.split
    )
    grids = {
        d: traverse(model, bases[0], d, tuple(cfg.eval.traversal_range), cfg.eval.traversal_steps)
        for d in dims
    }
    png, record = save_traversal_report(grids, attr_for_dim, run_dir / "traversals")
    click.echo(f"wrote {png} and {record}")


@main.command()
@click.argument("run_dirs", nargs=-1, required=True,
                type=click.Path(exists=True, file_okay=False))
@click.option("--output", type=click.Path(dir_okay=False), default=None)
@_guarded
def compare(run_dirs, output):
    """Merge evaluated runs into one comparison table."""
    entries = []
    fingerprints = set()
    for rd in run_dirs:
        rd = Path(rd)
        manifest = _run_manifest(rd)
        report_path = rd / "eval" / "report.json"
        if not report_path.is_file():
            raise InvalidConfigError(f"{rd} has no eval/report.json; run `evaluate` first")
        eval_manifest_path = rd / "eval" / "eval_manifest.json"
        if eval_manifest_path.is_file():
            fingerprints.add(json.loads(eval_manifest_path.read_text())["dataset_fingerprint"])
        method = manifest.get("method", "-")
        entries.append({
            "method": method,
            "regularized": method in REGULARIZED_METHODS,
            "report": MetricsReport.from_json(report_path),
        })
    table = render_comparison_table(entries, mismatched_datasets=len(fingerprints) > 1)
    if output:
        Path(output).write_text(table)
    click.echo(table)


@main.command(name="ablate-gamma")
@click.option("--gammas", type=str, default="0,1,10,100,1000",
              help="Comma-separated attribute-loss weights to sweep.")
@click.pass_obj
@_guarded
def ablate_gamma(cfg: ExperimentConfig, gammas):
    """Train one run per attribute-loss weight and summarize the trade-off."""
    try:
        values = [float(g) for g in gammas.split(",") if g.strip() != ""]
    except ValueError as exc:
        raise InvalidConfigError(f"bad --gammas list {gammas!r}: {exc}") from exc
    if not values:
        raise InvalidConfigError("--gammas must name at least one value")
    archive_path = cfg.archive_path()
    dataset = _load_dataset(archive_path)
    fingerprint = synth.dataset_fingerprint(archive_path)
    rows = []
    sweep_dir = Path(cfg.output_dir) / "gamma_sweep"
    for gamma in values:
        import dataclasses

        train_cfg = dataclasses.replace(
            cfg.train, weights=dataclasses.replace(cfg.train.weights, gamma_reg=gamma)
        )
        run_dir = sweep_dir / f"gamma_{gamma:g}"
        result = fit(train_cfg, cfg.model, dataset, run_dir=run_dir,
                     dataset_fingerprint=fingerprint)
        report = evaluate_model(
            result.model, dataset, split=cfg.eval.split, batch_size=cfg.eval.batch_size,
            regularized=train_cfg.method in REGULARIZED_METHODS and gamma > 0,
        )
        (run_dir / "eval").mkdir(exist_ok=True)
        report.to_json(run_dir / "eval" / "report.json")
        rows.append({
            "gamma_reg": gamma,
            "scc": report.scc,
            "interp_all": report.interp_all,
            "ssim_all": report.ssim_all,
            "pfd_all": report.pfd_all,
        })
    sccs = [r["scc"] for r in rows]
    summary = {
        "rows": rows,
        "scc_non_decreasing_in_gamma": bool(np.all(np.diff(sccs) >= -1e-9)),
    }
    (sweep_dir / "sweep_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    table = render_sweep_table(rows)
    (sweep_dir / "sweep_table.txt").write_text(table)
    click.echo(table)



if __name__ == "__main__":
    main()
