"""medbench: a benchmark harness for medical diagnostic image classification.

Drives pluggable backends (chat-completion vision LLMs, a local CNN model
server, deterministic mocks), applies confidence-filtered prompt
refinement, and reports accuracy, F1, calibration, execution time, energy,
and CO2 per run.
"""

from .backends import (
    BackendConfig,
    ClassificationOutcome,
    PromptBundle,
    UNPARSED,
    build_prompt,
    classify,
    parse_response,
    rendered_user_prompt,
    run_batch,
)
from .datasets import (
    DatasetManifest,
    ImagePayload,
    PRESET_LABEL_SETS,
    Sample,
    assign_splits,
    encode_image,
    load_manifest,
    normalize_label,
    save_manifest,
)
from .errors import ConfigError, ManifestError, MedbenchError, RunError
from .filtering import (
    FilterArtifact,
    FilterCriteria,
    apply_filter,
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
from .orchestrator import (
    ResultRow,
    RunConfig,
    build_filter,
    build_filter_from_results,
    read_results,
    run_benchmark,
    score_results,
)
from .reporting import render_report
from .resources import PowerProfile, aggregate_resources, co2_grams, energy_wh

__version__ = "0.1.0"

__all__ = [
    "BackendConfig",
    "CalibrationCurve",
    "ClassificationOutcome",
    "ConfigError",
    "ConfusionMatrix",
    "DatasetManifest",
    "FilterArtifact",
    "FilterCriteria",
    "ImagePayload",
    "ManifestError",
    "MedbenchError",
    "MetricsReport",
    "PRESET_LABEL_SETS",
    "PowerProfile",
    "PromptBundle",
    "ResultRow",
    "RunConfig",
    "RunError",
    "Sample",
    "UNPARSED",
    "aggregate_resources",
    "apply_filter",
    "assign_splits",
    "build_filter",
    "build_filter_from_results",
    "build_prompt",
    "classify",
    "co2_grams",
    "compute_calibration",
    "compute_confusion",
    "compute_metrics",
    "encode_image",
    "energy_wh",
    "extract_contexts",
    "formulate_questions",
    "load_filter_artifact",
    "load_manifest",
    "normalize_label",
    "parse_response",
    "read_results",
    "render_report",
    "rendered_user_prompt",
    "run_batch",
    "run_benchmark",
    "save_filter_artifact",
    "save_manifest",
    "score_results",
    "select_high_confidence",
]
