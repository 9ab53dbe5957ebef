"""Command-line interface.

Exit codes: 0 on success, 1 on configuration errors (bad flags, invalid
manifests/configs), 2 on runtime failures.
"""

from __future__ import annotations

from datetime import datetime, timezone
from pathlib import Path

import click

from .backends import load_backend_config, load_mock_script
from .datasets import DEFAULT_SPLIT_RATIOS, assign_splits, load_manifest, save_manifest
from .errors import ConfigError, MedbenchError
from .filtering import (
    DEFAULT_CONFIDENCE_THRESHOLD,
    DEFAULT_MAX_RESPONSES,
    FilterCriteria,
    load_filter_artifact,
)
from .orchestrator import RunConfig, build_filter_from_results, run_benchmark
from .reporting import REPORT_FORMATS, render_report
from .resources import PLACEHOLDER_PROFILE, load_power_profile


@click.group()
def cli() -> None:
    """Benchmark harness for medical diagnostic image classification."""


def _default_run_id() -> str:
    return "run-" + datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")


@cli.command("run")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(path_type=Path))
@click.option("--split", required=True, type=click.Choice(["train", "val", "test"]))
@click.option("--backend-config", "backend_config_path", required=True, type=click.Path(path_type=Path))
@click.option("--filter", "filter_paths", multiple=True, type=click.Path(path_type=Path),
              help="Filter artifact file; repeat for one artifact per class.")
@click.option("--power-profile", "power_profile_path", type=click.Path(path_type=Path),
              help="Power profile JSON; defaults to the placeholder profile.")
@click.option("--out", "output_dir", required=True, type=click.Path(path_type=Path))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--run-id", default=None, help="Defaults to a timestamp-derived id.")
@click.option("--n-bins", type=int, default=10, show_default=True,
              help="Reliability bins for calibration analysis.")
def run_command(manifest_path, split, backend_config_path, filter_paths, power_profile_path,
                output_dir, seed, run_id, n_bins) -> None:
    """Benchmark one split of a dataset against a backend."""
    backend = load_backend_config(backend_config_path)
    if power_profile_path is not None:
        profile = load_power_profile(power_profile_path)
    else:
        profile = PLACEHOLDER_PROFILE
        click.echo("warning: using the placeholder power profile; energy and CO2 "
                   "figures are not reportable", err=True)
    config = RunConfig(
        run_id=run_id or _default_run_id(),
        manifest_path=manifest_path,
        split=split,
        backend=backend,
        power_profile=profile,
        output_dir=output_dir,
        filter_artifact_paths=tuple(filter_paths),
        seed=seed,
        n_bins=n_bins,
    )
    results_path, report, calibration = run_benchmark(config)
    click.echo(f"results: {results_path}")
    click.echo(f"summary: {config.summary_path()}")
    avg_cs = "n/a" if report.avg_confidence is None else f"{report.avg_confidence:.4f}"
    click.echo(
        f"accuracy={report.accuracy:.4f} macro_f1={report.macro_f1:.4f} avg_cs={avg_cs} "
        f"unparsed={report.n_unparsed}/{report.n_scored}"
    )
    if calibration is not None:
        click.echo(f"ece={calibration.ece:.4f} calibration_gap={calibration.calibration_gap:.4f}")


@cli.command("build-filter")
@click.option("--results", "results_path", required=True, type=click.Path(path_type=Path),
              help="Results CSV of a train-split run.")
@click.option("--label", "target_label", required=True, help="Target label to build the artifact for.")
@click.option("--threshold", type=float, default=DEFAULT_CONFIDENCE_THRESHOLD, show_default=True)
@click.option("--max-responses", type=int, default=DEFAULT_MAX_RESPONSES, show_default=True)
@click.option("--aggregator-config", "aggregator_config_path", required=True,
              type=click.Path(path_type=Path))
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
def build_filter_command(results_path, target_label, threshold, max_responses,
                         aggregator_config_path, out_path) -> None:
    """Build a filter artifact from high-confidence training responses."""
    try:
        criteria = FilterCriteria(
            target_label=target_label,
            confidence_threshold=threshold,
            max_responses=max_responses,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    aggregator = load_backend_config(aggregator_config_path)
    artifact_path = build_filter_from_results(results_path, criteria, aggregator, out_path)
    click.echo(f"artifact: {artifact_path}")


@cli.command("report")
@click.option("--results", "results_paths", multiple=True, required=True,
              type=click.Path(path_type=Path))
@click.option("--ab", is_flag=True, help="Treat two results files as a (without, with) filter pair.")
@click.option("--format", "fmt", type=click.Choice(REPORT_FORMATS), default="table_text",
              show_default=True)
@click.option("--out", "out_path", type=click.Path(path_type=Path), default=None,
              help="Write the report here instead of stdout.")
def report_command(results_paths, ab, fmt, out_path) -> None:
    """Render a metrics/resources report over results files."""
    document = render_report(list(results_paths), fmt=fmt, ab=ab)
    if out_path is not None:
        Path(out_path).write_text(document, encoding="utf-8")
        click.echo(f"report: {out_path}")
    else:
        click.echo(document, nl=False)


@cli.command("validate")
@click.option("--manifest", "manifest_path", type=click.Path(path_type=Path))
@click.option("--backend-config", "backend_config_path", type=click.Path(path_type=Path))
@click.option("--power-profile", "power_profile_path", type=click.Path(path_type=Path))
@click.option("--filter", "filter_path", type=click.Path(path_type=Path))
def validate_command(manifest_path, backend_config_path, power_profile_path, filter_path) -> None:
    """Lint manifests and config files without running anything."""

    def load_backend_and_script(path):
        config = load_backend_config(path)
        if config.kind == "mock":
            load_mock_script(config.mock_script_path)
        return config

    checks = [
        ("manifest", manifest_path, load_manifest),
        ("backend config", backend_config_path, load_backend_and_script),
        ("power profile", power_profile_path, load_power_profile),
        ("filter artifact", filter_path, load_filter_artifact),
    ]
    if all(path is None for _, path, _ in checks):
        raise ConfigError("nothing to validate; pass at least one file option")
    problems = 0
    for kind, path, loader in checks:
        if path is None:
            continue
        try:
            loader(path)
        except MedbenchError as exc:
            problems += 1
            click.echo(f"FAIL {kind}: {path}: {exc}", err=True)
        else:
            click.echo(f"ok {kind}: {path}")
    if problems:
        raise ConfigError(f"{problems} file(s) failed validation")


@cli.command("split")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(path_type=Path))
@click.option("--ratios", default=",".join(str(r) for r in DEFAULT_SPLIT_RATIOS), show_default=True,
              help="train,val,test fractions summing to 1.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
def split_command(manifest_path, ratios, seed, out_path) -> None:
    """Assign stratified train/val/test splits and write a new manifest."""
    parts = ratios.split(",")
    if len(parts) != 3:
        raise ConfigError(f"--ratios needs three comma-separated fractions, got {ratios!r}")
    try:
        ratio_tuple = tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"--ratios {ratios!r}: {exc}") from exc
    manifest = load_manifest(manifest_path)
    try:
        updated = assign_splits(manifest, ratio_tuple, seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    save_manifest(updated, out_path)
    counts = updated.split_counts()
    click.echo(f"manifest: {out_path}")
    click.echo(f"splits: train={counts['train']} val={counts['val']} test={counts['test']}")


def main(argv: list[str] | None = None) -> int:
    """Run the CLI, mapping errors to the documented exit codes."""
    try:
        cli.main(args=argv, prog_name="medbench", standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except MedbenchError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


def entrypoint() -> None:
    raise SystemExit(main())
