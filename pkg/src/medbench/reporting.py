"""Report rendering over persisted results files.

Single-run tables carry accuracy, macro F1, average confidence, average
execution time, average energy, and total CO2. An A/B pair (baseline vs.
filtered run) renders a comparison with per-metric direction marks.

Total CO2 needs a carbon intensity, which the results schema does not
carry; it is read from the sibling summary.txt when present, otherwise the
column reports n/a.
"""

from __future__ import annotations

import io
import csv
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .datasets import normalize_label
from .metrics import MetricsReport
from .orchestrator import ResultRow, SUMMARY_FILENAME, read_results, read_summary_fields, score_results

REPORT_FORMATS = ("table_text", "csv")

_TREND_ARROWS = {"increased": "↑", "decreased": "↓", "unchanged": "="}

# Metrics compared in A/B mode: (key, display label, higher_is_better or
# None when a change is reported without judgement).
_AB_METRICS = (
    ("accuracy", "Accuracy", True),
    ("macro_f1", "Macro F1", True),
    ("avg_confidence", "Avg. Confidence Score", None),
    ("avg_exec_time_s", "Avg. Execution Time (s)", False),
    ("avg_energy_wh", "Avg. Energy (Wh)", False),
    ("total_co2_g", "Total CO2 (g)", False),
)


@dataclass(frozen=True)
class RunReportRow:
    """Headline numbers for one results file.

    zero_denominator_labels lists classes whose precision or recall hit the
    defined-as-0 convention (no predictions or no ground truth); text
    reports footnote them.
    """

    run_id: str
    accuracy: float
    macro_f1: float
    avg_confidence: float | None
    avg_exec_time_s: float
    avg_energy_wh: float
    total_co2_g: float | None
    zero_denominator_labels: tuple[str, ...] = ()


@dataclass(frozen=True)
class ComparisonRow:
    """One metric of a filter A/B pair, with direction marks.

    trend is increased/decreased/unchanged; judgement is improved/worsened/
    unchanged, or neutral for metrics with no better direction (avg CS).
    """

    metric: str
    label: str
    without_value: float | None
    with_value: float | None
    trend: str
    judgement: str


def _label_set_from_rows(rows: list[ResultRow]) -> tuple[str, ...]:
    by_norm: dict[str, str] = {}
    for row in rows:
        by_norm.setdefault(normalize_label(row.ground_truth), row.ground_truth)
    return tuple(by_norm[k] for k in sorted(by_norm))


def _carbon_intensity_for(results_path: Path) -> float | None:
    summary_path = results_path.parent / SUMMARY_FILENAME
    if not summary_path.is_file():
        return None
    fields = read_summary_fields(summary_path)
    value = fields.get("power_profile.carbon_intensity_g_per_kwh")
    if value is None:
        return None
    try:
        return float(value)
    except ValueError:
        return None


def summarize_results_file(results_path: str | Path) -> tuple[RunReportRow, MetricsReport]:
    """Re-score one results file into a report row.

    The label set is the set of distinct ground truths observed in the file.
    """
    results_path = Path(results_path)
    rows = read_results(results_path)
    if not rows:
        raise ConfigError(f"results file {results_path} contains no rows")
    cm, report = score_results(rows, _label_set_from_rows(rows))
    flagged = []
    for c, label in enumerate(cm.label_set):
        predicted_as_c = sum(cm.counts[t][c] for t in range(len(cm.label_set)))
        truly_c = sum(cm.counts[c]) + cm.unparsed_by_true[c]
        if predicted_as_c == 0 or truly_c == 0:
            flagged.append(label)
    avg_energy = math.fsum(r.energy_wh for r in rows) / len(rows)
    intensity = _carbon_intensity_for(results_path)
    total_co2 = (
        math.fsum(r.energy_wh / 1000.0 * intensity for r in rows) if intensity is not None else None
    )
    return (
        RunReportRow(
            run_id=rows[0].run_id,
            accuracy=report.accuracy,
            macro_f1=report.macro_f1,
            avg_confidence=report.avg_confidence,
            avg_exec_time_s=report.avg_exec_time_s,
            avg_energy_wh=avg_energy,
            total_co2_g=total_co2,
            zero_denominator_labels=tuple(flagged),
        ),
        report,
    )


def compare_runs(baseline: RunReportRow, filtered: RunReportRow) -> list[ComparisonRow]:
    """Table-2-style comparison rows for a (without, with) filter pair."""
    comparisons = []
    for key, label, higher_is_better in _AB_METRICS:
        a = getattr(baseline, key)
        b = getattr(filtered, key)
        if a is None or b is None:
            trend = judgement = "n/a"
        elif b > a:
            trend = "increased"
            judgement = (
                "neutral" if higher_is_better is None else ("improved" if higher_is_better else "worsened")
            )
        elif b < a:
            trend = "decreased"
            judgement = (
                "neutral" if higher_is_better is None else ("worsened" if higher_is_better else "improved")
            )
        else:
            trend = "unchanged"
            judgement = "unchanged"
        comparisons.append(
            ComparisonRow(
                metric=key,
                label=label,
                without_value=a,
                with_value=b,
                trend=trend,
                judgement=judgement,
            )
        )
    return comparisons


def _fmt(value: float | None, digits: int = 4) -> str:
    return "n/a" if value is None else f"{value:.{digits}f}"


def _render_single_text(rows: list[RunReportRow]) -> str:
    header = (
        "run_id",
        "accuracy",
        "macro_f1",
        "avg_cs",
        "avg_exec_time_s",
        "avg_energy_wh",
        "total_co2_g",
    )
    table = [header]
    for row in rows:
        table.append(
            (
                row.run_id,
                _fmt(row.accuracy),
                _fmt(row.macro_f1),
                _fmt(row.avg_confidence),
                _fmt(row.avg_exec_time_s),
                _fmt(row.avg_energy_wh, 6),
                _fmt(row.total_co2_g, 6),
            )
        )
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)).rstrip() for r in table]
    lines.extend(_zero_denominator_notes(rows))
    return "\n".join(lines) + "\n"


def _zero_denominator_notes(rows: list[RunReportRow]) -> list[str]:
    notes = []
    for row in rows:
        if row.zero_denominator_labels:
            labels = ", ".join(row.zero_denominator_labels)
            notes.append(
                f"note: {row.run_id}: precision/recall defined as 0 for class(es) "
                f"without predictions or ground truth: {labels}"
            )
    return notes


def _render_single_csv(rows: list[RunReportRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(
        ["run_id", "accuracy", "macro_f1", "avg_confidence", "avg_exec_time_s", "avg_energy_wh", "total_co2_g"]
    )
    for row in rows:
        writer.writerow(
            [
                row.run_id,
                repr(row.accuracy),
                repr(row.macro_f1),
                "" if row.avg_confidence is None else repr(row.avg_confidence),
                repr(row.avg_exec_time_s),
                repr(row.avg_energy_wh),
                "" if row.total_co2_g is None else repr(row.total_co2_g),
            ]
        )
    return buffer.getvalue()


def _render_ab_text(baseline: RunReportRow, filtered: RunReportRow, comparisons: list[ComparisonRow]) -> str:
    lines = [
        f"Filter A/B comparison: without={baseline.run_id}  with={filtered.run_id}",
        "",
    ]
    table = [("Metric", "w/o filtering", "with filtering", "direction")]
    for row in comparisons:
        arrow = _TREND_ARROWS.get(row.trend, "?")
        mark = f"{arrow} {row.judgement}" if row.trend != "n/a" else "n/a"
        digits = 6 if row.metric in ("avg_energy_wh", "total_co2_g") else 4
        table.append((row.label, _fmt(row.without_value, digits), _fmt(row.with_value, digits), mark))
    widths = [max(len(r[i]) for r in table) for i in range(4)]
    lines.extend("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)).rstrip() for r in table)
    lines.extend(_zero_denominator_notes([baseline, filtered]))
    return "\n".join(lines) + "\n"


def _render_ab_csv(comparisons: list[ComparisonRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["metric", "without_filtering", "with_filtering", "trend", "judgement"])
    for row in comparisons:
        writer.writerow(
            [
                row.metric,
                "" if row.without_value is None else repr(row.without_value),
                "" if row.with_value is None else repr(row.with_value),
                row.trend,
                row.judgement,
            ]
        )
    return buffer.getvalue()


def render_report(
    results_paths: list[str | Path],
    fmt: str = "table_text",
    ab: bool = False,
) -> str:
    """Render a report document over one or more results files.

    With ab=True exactly two files are required, interpreted as the
    (without filtering, with filtering) pair.
    """
    if fmt not in REPORT_FORMATS:
        raise ConfigError(f"report format must be one of {REPORT_FORMATS}, got {fmt!r}")
    if not results_paths:
        raise ConfigError("at least one results file is required")
    summaries = [summarize_results_file(p)[0] for p in results_paths]
    if ab:
        if len(summaries) != 2:
            raise ConfigError(f"A/B reports need exactly two results files, got {len(summaries)}")
        comparisons = compare_runs(summaries[0], summaries[1])
        if fmt == "csv":
            return _render_ab_csv(comparisons)
        return _render_ab_text(summaries[0], summaries[1], comparisons)
    if fmt == "csv":
        return _render_single_csv(summaries)
    return _render_single_text(summaries)
