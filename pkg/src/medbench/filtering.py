"""Confidence-filtered prompt refinement.

The pipeline selects high-confidence, label-consistent training responses,
feeds their texts to an aggregation backend, and turns the reply into a
reusable artifact: a consolidated feature summary plus targeted questions
that get injected into test-time prompts.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from .backends import BackendConfig, ClassificationOutcome, PromptBundle, complete_text
from .datasets import normalize_label
from .errors import ConfigError, RunError

DEFAULT_CONFIDENCE_THRESHOLD = 0.8
DEFAULT_MAX_RESPONSES = 50

# Lines that count as questions in an aggregator reply: "1.", "2)", or
# -/*/• bullets.
_QUESTION_LINE = re.compile(r"^\s*(?:\d+\s*[.)]|[-*•])\s+(.*\S)\s*$")

_ARTIFACT_QUESTION_LINE = re.compile(r"^\d+\. (.*)$")


@dataclass(frozen=True)
class FilterCriteria:
    """Selection rules for the filtering stage."""

    target_label: str
    confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD
    max_responses: int = DEFAULT_MAX_RESPONSES

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError(f"confidence_threshold must be in [0, 1], got {self.confidence_threshold}")
        if self.max_responses < 1:
            raise ValueError(f"max_responses must be >= 1, got {self.max_responses}")


@dataclass(frozen=True)
class FilterArtifact:
    """Stored product of the pipeline: context summary plus questions."""

    target_label: str
    aggregated_context: str
    targeted_questions: tuple[str, ...]
    source_run_id: str
    criteria: FilterCriteria
    created_at: str


def select_high_confidence(
    outcomes: Sequence[ClassificationOutcome],
    ground_truths: dict[str, str],
    criteria: FilterCriteria,
) -> list[ClassificationOutcome]:
    """Keep outcomes where ground truth and prediction both equal the
    target label and confidence is present and >= the threshold
    (inclusive, so a score exactly at the threshold is retained).

    Preserves input order; raises ValueError when an outcome has no
    ground truth.
    """
    target = normalize_label(criteria.target_label)
    selected = []
    for outcome in outcomes:
        if outcome.sample_id not in ground_truths:
            raise ValueError(f"no ground truth for sample {outcome.sample_id!r}")
        if (
            normalize_label(ground_truths[outcome.sample_id]) == target
            and normalize_label(outcome.predicted_label) == target
            and outcome.confidence is not None
            and outcome.confidence >= criteria.confidence_threshold
        ):
            selected.append(outcome)
    return selected


def extract_contexts(
    filtered: Sequence[ClassificationOutcome],
    criteria: FilterCriteria,
) -> list[str]:
    """Response texts of at most max_responses outcomes, first ones kept."""
    return [outcome.full_response for outcome in filtered[: criteria.max_responses]]


def build_aggregation_prompt(contexts: Sequence[str], target_label: str) -> tuple[str, str]:
    """(system_text, user_text) for the aggregation call.

    The contexts appear newline-joined, verbatim and in order.
    """
    joined = "\n".join(contexts)
    system_text = (
        "You consolidate observations from prior medical image classifications "
        "into reusable diagnostic guidance."
    )
    user_text = (
        f"Below are {len(contexts)} model responses that each correctly identified "
        f'the category "{target_label}" with high confidence.\n\n'
        f"{joined}\n\n"
        f"Using only these responses, do two things. First, write a consolidated "
        f"summary, as plain prose without bullet points, of the recurring visual "
        f'features that drive a "{target_label}" decision. Second, write a numbered '
        f"list of targeted questions, each answerable yes or no from the image alone, "
        f'whose answers determine whether "{target_label}" applies. Start the numbered '
        f"list on its own line."
    )
    return system_text, user_text


def parse_aggregator_reply(reply: str) -> tuple[str, tuple[str, ...]]:
    """Split a reply into (aggregated_context, targeted_questions).

    Question lines are numbered or bulleted lines, trimmed and deduplicated
    preserving first occurrence; everything else becomes the context.
    """
    questions: list[str] = []
    seen: set[str] = set()
    context_lines: list[str] = []
    for line in reply.splitlines():
        match = _QUESTION_LINE.match(line)
        if match:
            question = match.group(1).strip()
            if question not in seen:
                seen.add(question)
                questions.append(question)
        else:
            context_lines.append(line)
    return "\n".join(context_lines).strip(), tuple(questions)


def _utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def formulate_questions(
    contexts: Sequence[str],
    aggregator: BackendConfig,
    target_label: str,
    criteria: FilterCriteria | None = None,
    source_run_id: str = "",
) -> FilterArtifact:
    """Issue exactly one aggregation call and parse the reply into an
    artifact.

    Raises ValueError on empty contexts, RunError when the call fails or
    no questions can be parsed from the reply.
    """
    if not contexts:
        raise ValueError("cannot formulate questions from zero contexts")
    system_text, user_text = build_aggregation_prompt(contexts, target_label)
    completion = complete_text(aggregator, system_text, user_text)
    if completion.error is not None or completion.text is None:
        raise RunError(f"aggregation call failed: {completion.error}")
    aggregated_context, questions = parse_aggregator_reply(completion.text)
    if not questions:
        raise RunError(
            "aggregator reply contained no parseable numbered or bulleted questions; "
            "no artifact written"
        )
    return FilterArtifact(
        target_label=target_label,
        aggregated_context=aggregated_context,
        targeted_questions=questions,
        source_run_id=source_run_id,
        criteria=criteria if criteria is not None else FilterCriteria(target_label=target_label),
        created_at=_utc_now(),
    )


def apply_filter(bundle: PromptBundle, artifact: FilterArtifact) -> PromptBundle:
    """Inject an artifact's questions into a bundle that has none yet.

    Everything except targeted_questions (and its section grouping) stays
    untouched. Applying twice, or applying an artifact without questions,
    raises ValueError.
    """
    if bundle.targeted_questions:
        raise ValueError("bundle already carries targeted questions (double application)")
    if not artifact.targeted_questions:
        raise ValueError(f"filter artifact for {artifact.target_label!r} has no questions")
    return replace(
        bundle,
        targeted_questions=tuple(artifact.targeted_questions),
        question_sections=((artifact.target_label, tuple(artifact.targeted_questions)),),
    )


def save_filter_artifact(artifact: FilterArtifact, path: str | Path) -> Path:
    """Write an artifact in its line-oriented file format.

    aggregated_context is JSON-escaped onto one line so arbitrary text
    round-trips bit-exactly; questions are stored as a numbered list.
    """
    for field_name, value in (
        ("target_label", artifact.target_label),
        ("source_run_id", artifact.source_run_id),
    ):
        if "\n" in value:
            raise ValueError(f"{field_name} cannot contain newlines")
    for question in artifact.targeted_questions:
        if "\n" in question:
            raise ValueError("questions cannot contain newlines")
    lines = [
        f"target_label={artifact.target_label}",
        f"confidence_threshold={artifact.criteria.confidence_threshold!r}",
        f"max_responses={artifact.criteria.max_responses}",
        f"source_run_id={artifact.source_run_id}",
        f"created_at={artifact.created_at}",
        f"aggregated_context={json.dumps(artifact.aggregated_context)}",
        "questions:",
    ]
    lines.extend(f"{i}. {q}" for i, q in enumerate(artifact.targeted_questions, start=1))
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_filter_artifact(path: str | Path) -> FilterArtifact:
    """Parse an artifact file written by save_filter_artifact."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"filter artifact file not found: {path}")
    fields: dict[str, str] = {}
    questions: list[str] = []
    in_questions = False
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if in_questions:
            if not line.strip():
                continue
            match = _ARTIFACT_QUESTION_LINE.match(line)
            if match is None:
                raise ConfigError(f"{path}:{lineno}: expected a numbered question line")
            questions.append(match.group(1))
        elif line == "questions:":
            in_questions = True
        else:
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key=value before the questions section")
            fields[key] = value
    required = {"target_label", "confidence_threshold", "max_responses", "source_run_id", "created_at", "aggregated_context"}
    missing = required - fields.keys()
    if missing:
        raise ConfigError(f"filter artifact {path} missing fields: {sorted(missing)}")
    if not questions:
        raise ConfigError(f"filter artifact {path} contains no questions")
    try:
        criteria = FilterCriteria(
            target_label=fields["target_label"],
            confidence_threshold=float(fields["confidence_threshold"]),
            max_responses=int(fields["max_responses"]),
        )
        aggregated_context = json.loads(fields["aggregated_context"])
    except (ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"filter artifact {path}: {exc}") from exc
    if not isinstance(aggregated_context, str):
        raise ConfigError(f"filter artifact {path}: aggregated_context must decode to a string")
    return FilterArtifact(
        target_label=fields["target_label"],
        aggregated_context=aggregated_context,
        targeted_questions=tuple(questions),
        source_run_id=fields["source_run_id"],
        criteria=criteria,
        created_at=fields["created_at"],
    )
