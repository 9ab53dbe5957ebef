"""Run engine: wires datasets, backends, filtering, metrics, and resource
accounting into reproducible benchmark runs with persisted per-sample rows.

A run writes ``<output_dir>/<run_id>/results.csv`` (fixed column schema)
and ``summary.txt`` (full config snapshot minus secrets, stage counts, and
metric values — enough to re-issue an identical run against a mock).
"""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .backends import (
    BackendConfig,
    ClassificationOutcome,
    UNPARSED,
    build_prompt,
    run_batch,
)
from .datasets import DatasetManifest, load_manifest, normalize_label
from .errors import ConfigError
from .filtering import (
    FilterCriteria,
    extract_contexts,
    formulate_questions,
    load_filter_artifact,
    save_filter_artifact,
    select_high_confidence,
)
from .metrics import (
    CalibrationCurve,
    ConfusionMatrix,
    MetricsReport,
    compute_calibration,
    compute_confusion,
    compute_metrics,
)
from .resources import PowerProfile, ResourceSummary, aggregate_resources, energy_wh

logger = logging.getLogger(__name__)

RESULTS_HEADER = [
    "sample_id",
    "ground_truth",
    "predicted_label",
    "confidence_score",
    "execution_time_s",
    "energy_wh",
    "full_response",
    "backend_id",
    "run_id",
    "timestamp",
]

RESULTS_FILENAME = "results.csv"
SUMMARY_FILENAME = "summary.txt"


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce a benchmark run (given a fixed backend)."""

    run_id: str
    manifest_path: Path
    split: str
    backend: BackendConfig
    power_profile: PowerProfile
    output_dir: Path
    filter_artifact_paths: tuple[Path, ...] = ()
    seed: int = 0
    n_bins: int = 10

    def run_dir(self) -> Path:
        return Path(self.output_dir) / self.run_id

    def results_path(self) -> Path:
        return self.run_dir() / RESULTS_FILENAME

    def summary_path(self) -> Path:
        return self.run_dir() / SUMMARY_FILENAME


@dataclass(frozen=True)
class ResultRow:
    """One persisted per-sample record of a run."""

    sample_id: str
    ground_truth: str
    predicted_label: str
    confidence_score: float | None
    execution_time_s: float
    energy_wh: float
    full_response: str
    backend_id: str
    run_id: str
    timestamp: str


@dataclass(frozen=True)
class StageCounts:
    """Sample counts through the filter-building stages."""

    total: int
    label_matched: int
    above_threshold: int
    sampled: int


def _utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _fmt_float(value: float | None) -> str:
    return "" if value is None else repr(value)


def write_results(rows: list[ResultRow], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(RESULTS_HEADER)
        for row in rows:
            writer.writerow(
                [
                    row.sample_id,
                    row.ground_truth,
                    row.predicted_label,
                    _fmt_float(row.confidence_score),
                    repr(row.execution_time_s),
                    repr(row.energy_wh),
                    row.full_response,
                    row.backend_id,
                    row.run_id,
                    row.timestamp,
                ]
            )


def read_results(path: str | Path) -> list[ResultRow]:
    """Read a results CSV back; rejects files with a different schema."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"results file not found: {path}")
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"results file {path} is empty") from None
        if header != RESULTS_HEADER:
            raise ConfigError(
                f"results file {path} has schema {header}, expected {RESULTS_HEADER}"
            )
        rows = []
        for record in reader:
            if len(record) != len(RESULTS_HEADER):
                raise ConfigError(f"results file {path}: malformed row {record!r}")
            rows.append(
                ResultRow(
                    sample_id=record[0],
                    ground_truth=record[1],
                    predicted_label=record[2],
                    confidence_score=float(record[3]) if record[3] else None,
                    execution_time_s=float(record[4]),
                    energy_wh=float(record[5]),
                    full_response=record[6],
                    backend_id=record[7],
                    run_id=record[8],
                    timestamp=record[9],
                )
            )
    return rows


def rows_to_outcomes(rows: list[ResultRow]) -> tuple[list[ClassificationOutcome], dict[str, str]]:
    """Rebuild scoreable outcomes and the ground-truth map from saved rows."""
    outcomes = [
        ClassificationOutcome(
            sample_id=row.sample_id,
            predicted_label=row.predicted_label,
            confidence=row.confidence_score,
            full_response=row.full_response,
            exec_time_s=row.execution_time_s,
        )
        for row in rows
    ]
    ground_truths = {row.sample_id: row.ground_truth for row in rows}
    return outcomes, ground_truths


def score_results(
    rows: list[ResultRow], label_set: tuple[str, ...]
) -> tuple[ConfusionMatrix, MetricsReport]:
    """Re-score saved rows against a label set."""
    outcomes, ground_truths = rows_to_outcomes(rows)
    cm = compute_confusion(outcomes, ground_truths, label_set)
    return cm, compute_metrics(cm, outcomes)


def _summary_lines(
    config: RunConfig,
    manifest: DatasetManifest,
    report: MetricsReport,
    calibration: CalibrationCurve | None,
    resource_summary: ResourceSummary,
    created_at: str,
) -> list[str]:
    def clean(value: str) -> str:
        return value.replace("\n", " ")

    lines = [
        "# medbench run summary",
        f"run_id={config.run_id}",
        f"created_at={created_at}",
        f"manifest_path={Path(config.manifest_path).resolve()}",
        f"split={config.split}",
        f"seed={config.seed}",
        f"n_bins={config.n_bins}",
        f"output_dir={Path(config.output_dir).resolve()}",
    ]
    lines.extend(
        f"filter_artifact_path.{i}={Path(p).resolve()}"
        for i, p in enumerate(config.filter_artifact_paths)
    )
    backend = config.backend
    lines.extend(
        [
            f"backend.backend_id={backend.backend_id}",
            f"backend.kind={backend.kind}",
            f"backend.endpoint_url={backend.endpoint_url}",
            f"backend.model_name={backend.model_name}",
            f"backend.credential_env_var={backend.credential_env_var}",
            f"backend.timeout_s={backend.timeout_s!r}",
            f"backend.max_retries={backend.max_retries}",
            f"backend.max_concurrency={backend.max_concurrency}",
            "backend.mock_script_path="
            + (str(Path(backend.mock_script_path).resolve()) if backend.mock_script_path else ""),
            f"power_profile.profile_id={config.power_profile.profile_id}",
            f"power_profile.avg_power_w={config.power_profile.avg_power_w!r}",
            f"power_profile.carbon_intensity_g_per_kwh={config.power_profile.carbon_intensity_g_per_kwh!r}",
            f"power_profile.source_note={clean(config.power_profile.source_note)}",
        ]
    )
    lines.extend(f"split_counts.{name}={count}" for name, count in manifest.split_counts().items())
    lines.extend(
        [
            f"counts.scored={report.n_scored}",
            f"counts.unparsed={report.n_unparsed}",
            f"metrics.accuracy={report.accuracy!r}",
            f"metrics.macro_f1={report.macro_f1!r}",
            f"metrics.avg_confidence={_fmt_float(report.avg_confidence)}",
            f"metrics.avg_exec_time_s={report.avg_exec_time_s!r}",
        ]
    )
    for label, cls in report.per_class.items():
        lines.append(f"metrics.per_class.{label}.precision={cls.precision!r}")
        lines.append(f"metrics.per_class.{label}.recall={cls.recall!r}")
        lines.append(f"metrics.per_class.{label}.f1={cls.f1!r}")
    lines.extend(
        [
            f"resources.avg_energy_wh={resource_summary.avg_energy_wh!r}",
            f"resources.total_co2_g={resource_summary.total_co2_g!r}",
            f"calibration.ece={_fmt_float(calibration.ece if calibration else None)}",
            f"calibration.gap={_fmt_float(calibration.calibration_gap if calibration else None)}",
        ]
    )
    return lines


def read_summary_fields(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"run summary not found: {path}")
    fields: dict[str, str] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if sep:
            fields[key] = value
    return fields


def load_run_summary(path: str | Path) -> RunConfig:
    """Rebuild the RunConfig recorded in a run summary file."""
    fields = read_summary_fields(path)
    try:
        backend = BackendConfig(
            backend_id=fields["backend.backend_id"],
            kind=fields["backend.kind"],
            endpoint_url=fields["backend.endpoint_url"],
            model_name=fields["backend.model_name"],
            credential_env_var=fields["backend.credential_env_var"],
            timeout_s=float(fields["backend.timeout_s"]),
            max_retries=int(fields["backend.max_retries"]),
            max_concurrency=int(fields["backend.max_concurrency"]),
            mock_script_path=Path(fields["backend.mock_script_path"])
            if fields["backend.mock_script_path"]
            else None,
        )
        profile = PowerProfile(
            profile_id=fields["power_profile.profile_id"],
            avg_power_w=float(fields["power_profile.avg_power_w"]),
            carbon_intensity_g_per_kwh=float(fields["power_profile.carbon_intensity_g_per_kwh"]),
            source_note=fields["power_profile.source_note"],
        )
        artifact_paths = []
        for i in range(len(fields)):
            key = f"filter_artifact_path.{i}"
            if key not in fields:
                break
            artifact_paths.append(Path(fields[key]))
        return RunConfig(
            run_id=fields["run_id"],
            manifest_path=Path(fields["manifest_path"]),
            split=fields["split"],
            backend=backend,
            power_profile=profile,
            output_dir=Path(fields["output_dir"]),
            filter_artifact_paths=tuple(artifact_paths),
            seed=int(fields["seed"]),
            n_bins=int(fields["n_bins"]),
        )
    except KeyError as exc:
        raise ConfigError(f"run summary {path} missing field {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"run summary {path}: {exc}") from exc


def _validate_run_config(config: RunConfig) -> None:
    if config.split not in ("train", "val", "test"):
        raise ConfigError(f"split must be train, val, or test, got {config.split!r}")
    if config.n_bins < 1:
        raise ConfigError(f"n_bins must be >= 1, got {config.n_bins}")
    if not Path(config.manifest_path).is_file():
        raise ConfigError(f"manifest file not found: {config.manifest_path}")
    for artifact_path in config.filter_artifact_paths:
        if not Path(artifact_path).is_file():
            raise ConfigError(f"filter artifact file not found: {artifact_path}")
    backend = config.backend
    if backend.kind == "mock" and not Path(backend.mock_script_path).is_file():
        raise ConfigError(f"mock script not found: {backend.mock_script_path}")
    if config.results_path().exists():
        raise ConfigError(
            f"run_id {config.run_id!r} already has results under {config.output_dir} "
            f"(run ids must be unique per output directory)"
        )


def run_benchmark(
    config: RunConfig,
) -> tuple[Path, MetricsReport, CalibrationCurve | None]:
    """Classify every sample in the configured split and persist the run.

    Backend configuration errors abort before any request; per-sample
    failures land in their rows scored as unparsed. Returns the results
    file path, the metrics report, and the calibration curve (None when no
    outcome carried a confidence).
    """
    _validate_run_config(config)
    manifest = load_manifest(config.manifest_path)
    samples = manifest.samples_for_split(config.split)
    if not samples:
        raise ConfigError(
            f"manifest {manifest.dataset_id!r} has no samples in split {config.split!r}"
        )
    artifacts = [load_filter_artifact(p) for p in config.filter_artifact_paths]
    label_lookup = manifest.label_lookup()
    for artifact in artifacts:
        if normalize_label(artifact.target_label) not in label_lookup:
            raise ConfigError(
                f"filter artifact targets {artifact.target_label!r}, which is not in "
                f"the manifest's label set"
            )
    bundle = build_prompt(manifest.label_set, manifest.modality, artifacts or None)
    outcomes = run_batch(config.backend, bundle, samples, manifest)

    started_at = _utc_now()
    ground_truths = {s.sample_id: s.ground_truth for s in samples}
    rows = [
        ResultRow(
            sample_id=o.sample_id,
            ground_truth=ground_truths[o.sample_id],
            predicted_label=o.predicted_label if o.error is None else UNPARSED,
            confidence_score=o.confidence if o.error is None else None,
            execution_time_s=o.exec_time_s,
            energy_wh=energy_wh(o.exec_time_s, config.power_profile),
            full_response=o.full_response,
            backend_id=config.backend.backend_id,
            run_id=config.run_id,
            timestamp=started_at,
        )
        for o in outcomes
    ]
    results_path = config.results_path()
    write_results(rows, results_path)

    scored_outcomes, _ = rows_to_outcomes(rows)
    cm = compute_confusion(scored_outcomes, ground_truths, manifest.label_set)
    report = compute_metrics(cm, scored_outcomes)
    calibration = None
    if any(o.confidence is not None for o in scored_outcomes):
        calibration = compute_calibration(scored_outcomes, ground_truths, config.n_bins)
    resource_summary = aggregate_resources(scored_outcomes, config.power_profile)
    summary = _summary_lines(config, manifest, report, calibration, resource_summary, started_at)
    config.summary_path().write_text("\n".join(summary) + "\n", encoding="utf-8")
    logger.info(
        "run %s: %d samples, accuracy=%.4f, macro_f1=%.4f, unparsed=%d",
        config.run_id,
        len(rows),
        report.accuracy,
        report.macro_f1,
        report.n_unparsed,
    )
    return results_path, report, calibration


def filter_stage_counts(
    outcomes: list[ClassificationOutcome],
    ground_truths: dict[str, str],
    criteria: FilterCriteria,
) -> StageCounts:
    """Counts through the selection stages: total, ground-truth-and-
    prediction matched, above threshold, capped by max_responses."""
    target = normalize_label(criteria.target_label)
    label_matched = [
        o
        for o in outcomes
        if normalize_label(ground_truths[o.sample_id]) == target
        and normalize_label(o.predicted_label) == target
    ]
    above = [
        o
        for o in label_matched
        if o.confidence is not None and o.confidence >= criteria.confidence_threshold
    ]
    return StageCounts(
        total=len(outcomes),
        label_matched=len(label_matched),
        above_threshold=len(above),
        sampled=min(len(above), criteria.max_responses),
    )


def _slug(label: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", normalize_label(label)).strip("-") or "label"


def build_filter_from_results(
    results_path: str | Path,
    criteria: FilterCriteria,
    aggregator: BackendConfig,
    out_path: str | Path,
    source_run_id: str | None = None,
) -> Path:
    """Run the selection -> context extraction -> aggregation pipeline over
    a saved results file and write the artifact.

    Zero survivors raise ConfigError naming the stage that emptied the set,
    with all stage counts.
    """
    rows = read_results(results_path)
    if not rows:
        raise ConfigError(f"results file {results_path} contains no rows")
    outcomes, ground_truths = rows_to_outcomes(rows)
    counts = filter_stage_counts(outcomes, ground_truths, criteria)
    logger.info(
        "filter stages for %r: total=%d label-matched=%d above-threshold=%d sampled=%d",
        criteria.target_label,
        counts.total,
        counts.label_matched,
        counts.above_threshold,
        counts.sampled,
    )
    if counts.above_threshold == 0:
        stage = "label matching" if counts.label_matched == 0 else "confidence thresholding"
        raise ConfigError(
            f"no samples survive filtering for label {criteria.target_label!r} "
            f"(empty after {stage}; total={counts.total}, "
            f"label-matched={counts.label_matched}, above-threshold={counts.above_threshold})"
        )
    selected = select_high_confidence(outcomes, ground_truths, criteria)
    contexts = extract_contexts(selected, criteria)
    artifact = formulate_questions(
        contexts,
        aggregator,
        criteria.target_label,
        criteria=criteria,
        source_run_id=source_run_id if source_run_id is not None else rows[0].run_id,
    )
    return save_filter_artifact(artifact, out_path)


def build_filter(
    config: RunConfig,
    criteria: FilterCriteria,
    aggregator: BackendConfig,
) -> Path:
    """Build a filter artifact from the train-split results of the given run.

    Requires config.split == "train" and a prior results file for the run
    under output_dir; the artifact lands next to the results.
    """
    if config.split != "train":
        raise ConfigError(
            f"filter artifacts are built from train-split results, config has split={config.split!r}"
        )
    results_path = config.results_path()
    if not results_path.is_file():
        raise ConfigError(
            f"no train results found for run {config.run_id!r} under {config.output_dir} "
            f"(expected {results_path})"
        )
    out_path = config.run_dir() / f"filter_{_slug(criteria.target_label)}.txt"
    return build_filter_from_results(
        results_path, criteria, aggregator, out_path, source_run_id=config.run_id
    )
