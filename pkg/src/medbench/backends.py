"""Uniform classification interface over three adapter kinds: remote
chat-completion vision LLMs, a local model server, and deterministic mocks.

Also owns prompt construction and response parsing. All adapters are safe
to share across threads; transport failures never raise out of classify —
they come back as outcomes with ``error`` set.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import httpx

from .datasets import DatasetManifest, ImagePayload, Sample, encode_image, normalize_label
from .errors import ConfigError

if TYPE_CHECKING:
    from .filtering import FilterArtifact

UNPARSED = "unparsed"

BACKEND_KINDS = ("chat_llm", "local_server", "mock")

# Script row id a mock backend answers text-only (aggregation) requests with.
AGGREGATION_SCRIPT_ID = "aggregation"

RETRY_BACKOFF_INITIAL_S = 1.0
RETRY_BACKOFF_CAP_S = 30.0

# Indirection so tests can stub out real sleeping during retry tests.
_sleep = time.sleep

_MODALITY_PHRASES = {"xray": "X-ray", "ct": "CT scan", "mri": "MRI"}

RESPONSE_CONTRACT = (
    "Respond with a single JSON object and nothing else, with fields "
    '"label" (exactly one of the listed categories), '
    '"confidence" (a number between 0 and 1 expressing your certainty), and '
    '"rationale" (one or two sentences explaining the decision).'
)


@dataclass(frozen=True)
class BackendConfig:
    """Connection and dispatch settings for one classification backend."""

    backend_id: str
    kind: str
    endpoint_url: str = ""
    model_name: str = ""
    credential_env_var: str = ""
    timeout_s: float = 30.0
    max_retries: int = 2
    max_concurrency: int = 4
    mock_script_path: Path | None = None

    def __post_init__(self) -> None:
        if self.kind not in BACKEND_KINDS:
            raise ConfigError(f"backend kind must be one of {BACKEND_KINDS}, got {self.kind!r}")
        if self.kind == "mock":
            if self.mock_script_path is None:
                raise ConfigError("mock backends require mock_script_path")
        elif not self.endpoint_url:
            raise ConfigError(f"{self.kind} backends require endpoint_url")
        if self.timeout_s <= 0:
            raise ConfigError(f"timeout_s must be > 0, got {self.timeout_s}")
        if self.max_retries < 0:
            raise ConfigError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.max_concurrency < 1:
            raise ConfigError(f"max_concurrency must be >= 1, got {self.max_concurrency}")


@dataclass(frozen=True)
class PromptBundle:
    """Everything needed to render the system and user messages for one run.

    targeted_questions is the flat, ordered union of all injected question
    sections; question_sections groups them under the label each filter
    artifact was built for.
    """

    system_text: str
    user_text: str
    targeted_questions: tuple[str, ...]
    label_set: tuple[str, ...]
    response_contract: str
    question_sections: tuple[tuple[str, tuple[str, ...]], ...] = ()

    def __post_init__(self) -> None:
        if self.question_sections:
            flattened = tuple(q for _, qs in self.question_sections for q in qs)
            if flattened != self.targeted_questions:
                raise ValueError("question_sections must flatten to targeted_questions")


@dataclass(frozen=True)
class ClassificationOutcome:
    """A backend's verdict for one sample, plus timing and retry accounting."""

    sample_id: str
    predicted_label: str
    confidence: float | None
    full_response: str
    exec_time_s: float
    attempt_count: int = 1
    error: str | None = None


@dataclass(frozen=True)
class TextCompletion:
    """Result of a text-only backend call (used by filter aggregation)."""

    text: str | None
    exec_time_s: float
    attempt_count: int
    error: str | None = None


def build_prompt(
    label_set: Sequence[str],
    modality: str,
    filter_artifact: "FilterArtifact | Sequence[FilterArtifact] | None" = None,
) -> PromptBundle:
    """Construct the prompt bundle for a label set and imaging modality.

    Without an artifact the bundle asks for one label plus a confidence per
    the structured response contract. With artifacts, their targeted
    questions are carried along and rendered verbatim, each artifact's
    block under a heading naming its target label.
    """
    labels = tuple(label_set)
    if not labels:
        raise ValueError("label_set must be non-empty")
    modality_phrase = _MODALITY_PHRASES.get(modality, modality)
    options = "\n".join(f"- {label}" for label in labels)
    user_text = (
        f"Examine the attached {modality_phrase} image and decide which single "
        f"category best describes it.\n\nCategories:\n{options}\n\n"
        f"Pick exactly one category from the list above."
    )
    system_text = (
        "You are a careful medical imaging assistant. You assign diagnostic "
        "images to one category from a fixed list and report how certain you are."
    )
    bundle = PromptBundle(
        system_text=system_text,
        user_text=user_text,
        targeted_questions=(),
        label_set=labels,
        response_contract=RESPONSE_CONTRACT,
    )
    if filter_artifact is None:
        return bundle
    artifacts = list(filter_artifact) if isinstance(filter_artifact, (list, tuple)) else [filter_artifact]
    sections = []
    for artifact in artifacts:
        if not artifact.targeted_questions:
            raise ValueError(f"filter artifact for {artifact.target_label!r} has no questions")
        sections.append((artifact.target_label, tuple(artifact.targeted_questions)))
    return replace(
        bundle,
        targeted_questions=tuple(q for _, qs in sections for q in qs),
        question_sections=tuple(sections),
    )


def rendered_user_prompt(bundle: PromptBundle) -> str:
    """Full user-message text: base prompt, question blocks, contract."""
    parts = [bundle.user_text]
    if bundle.question_sections:
        for label, questions in bundle.question_sections:
            lines = [
                f'Key questions for "{label}" — answer each one before committing to a category:'
            ]
            lines.extend(f"{i}. {q}" for i, q in enumerate(questions, start=1))
            parts.append("\n".join(lines))
    elif bundle.targeted_questions:
        lines = ["Answer each of these key questions before committing to a category:"]
        lines.extend(f"{i}. {q}" for i, q in enumerate(bundle.targeted_questions, start=1))
        parts.append("\n".join(lines))
    parts.append(bundle.response_contract)
    return "\n\n".join(parts)


_PERCENT_PATTERN = re.compile(r"(\d{1,3}(?:\.\d+)?)\s*(?:%|percent\b)", re.IGNORECASE)
_DECIMAL_PATTERN = re.compile(r"(?<![\d.])(0?\.\d+|1\.0+)(?![\d.])")


def _strip_code_fences(text: str) -> str:
    stripped = text.strip()
    if stripped.startswith("```"):
        stripped = stripped.split("\n", 1)[1] if "\n" in stripped else ""
        if stripped.rstrip().endswith("```"):
            stripped = stripped.rstrip()[:-3]
    return stripped.strip()


def _strict_parse(full_response: str, lookup: dict[str, str]) -> tuple[str, float] | None:
    try:
        obj = json.loads(_strip_code_fences(full_response))
    except (json.JSONDecodeError, ValueError):
        return None
    if not isinstance(obj, dict):
        return None
    label = obj.get("label")
    if not isinstance(label, str):
        return None
    canonical = lookup.get(normalize_label(label))
    if canonical is None:
        return None
    confidence = obj.get("confidence")
    if isinstance(confidence, str):
        try:
            confidence = float(confidence)
        except ValueError:
            return None
    if not isinstance(confidence, (int, float)) or isinstance(confidence, bool):
        return None
    if not 0.0 <= float(confidence) <= 1.0:
        return None
    return canonical, float(confidence)


def _fallback_confidence(text: str) -> float | None:
    match = _PERCENT_PATTERN.search(text)
    if match:
        value = float(match.group(1))
        if value <= 100.0:
            return value / 100.0
    match = _DECIMAL_PATTERN.search(text)
    if match:
        value = float(match.group(1))
        if value <= 1.0:
            return value
    return None


def parse_response(full_response: str, label_set: Sequence[str]) -> tuple[str, float | None]:
    """Extract (label, confidence) from a backend's raw text.

    Strict mode expects the JSON response contract. The fallback searches
    for label names case-insensitively, longest label first (so "lung
    opacity" beats "lung"), and accepts ``NN%``, ``NN percent``, or a bare
    decimal in [0, 1] as confidence; percentages are divided by 100. Total:
    never raises, returning ("unparsed", None) when nothing matches.
    """
    lookup = {normalize_label(lbl): lbl for lbl in label_set}
    strict = _strict_parse(full_response, lookup)
    if strict is not None:
        return strict
    haystack = normalize_label(full_response)
    by_length = sorted(enumerate(lookup), key=lambda pair: (-len(pair[1]), pair[0]))
    for _, norm in by_length:
        if norm in haystack:
            return lookup[norm], _fallback_confidence(full_response)
    return UNPARSED, None


@dataclass(frozen=True)
class MockScriptEntry:
    sample_id: str
    label: str
    confidence: float | None
    response_text: str
    exec_time_s: float = 0.0


_ESCAPES = {"\\n": "\n", "\\t": "\t", "\\\\": "\\"}


def _unescape(text: str) -> str:
    return re.sub(r"\\[nt\\]", lambda m: _ESCAPES[m.group(0)], text)


def load_mock_script(path: str | Path) -> dict[str, MockScriptEntry]:
    """Parse a mock script: one scripted response per line as
    ``sample_id<TAB>label<TAB>confidence<TAB>response_text[<TAB>exec_time_s]``.

    confidence may be ``-`` for absent; response_text supports ``\\n``,
    ``\\t``, and ``\\\\`` escapes; the optional fifth column fixes the
    reported execution time (default 0.0) so scripted runs reproduce
    byte-identically.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"mock script not found: {path}")
    entries: dict[str, MockScriptEntry] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        fields = raw.split("\t")
        if len(fields) not in (4, 5):
            raise ConfigError(
                f"{path}:{lineno}: mock script lines need 4 or 5 tab-separated fields, got {len(fields)}"
            )
        sample_id, label, conf_text, response_text = fields[:4]
        if sample_id in entries:
            raise ConfigError(f"{path}:{lineno}: duplicate scripted sample_id {sample_id!r}")
        try:
            confidence = None if conf_text == "-" else float(conf_text)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad confidence {conf_text!r}") from exc
        exec_time = 0.0
        if len(fields) == 5:
            try:
                exec_time = float(fields[4])
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad exec_time_s {fields[4]!r}") from exc
        entries[sample_id] = MockScriptEntry(
            sample_id=sample_id,
            label=label,
            confidence=confidence,
            response_text=_unescape(response_text),
            exec_time_s=exec_time,
        )
    return entries


class MockAdapter:
    """Deterministic scripted backend; echoes script entries exactly."""

    def __init__(self, config: BackendConfig) -> None:
        self.config = config
        self.entries = load_mock_script(config.mock_script_path)

    def classify(self, bundle: PromptBundle, payload: ImagePayload) -> ClassificationOutcome:
        entry = self.entries.get(payload.sample_id)
        if entry is None:
            return ClassificationOutcome(
                sample_id=payload.sample_id,
                predicted_label=UNPARSED,
                confidence=None,
                full_response="",
                exec_time_s=0.0,
                error=f"sample {payload.sample_id!r} not scripted in {self.config.mock_script_path}",
            )
        return ClassificationOutcome(
            sample_id=payload.sample_id,
            predicted_label=entry.label,
            confidence=entry.confidence,
            full_response=entry.response_text,
            exec_time_s=entry.exec_time_s,
        )

    def complete_text(self, system_text: str, user_text: str) -> TextCompletion:
        entry = self.entries.get(AGGREGATION_SCRIPT_ID)
        if entry is None:
            return TextCompletion(
                text=None,
                exec_time_s=0.0,
                attempt_count=1,
                error=f"no {AGGREGATION_SCRIPT_ID!r} row scripted in {self.config.mock_script_path}",
            )
        return TextCompletion(text=entry.response_text, exec_time_s=entry.exec_time_s, attempt_count=1)


def _auth_headers(config: BackendConfig) -> dict[str, str]:
    if not config.credential_env_var:
        return {}
    token = os.environ.get(config.credential_env_var)
    if token is None:
        raise ConfigError(
            f"backend {config.backend_id!r}: credential environment variable "
            f"{config.credential_env_var!r} is not set"
        )
    return {"Authorization": f"Bearer {token}"}


@dataclass
class _TransportResult:
    response: httpx.Response | None
    attempts: int
    error: str | None


_client_lock = threading.Lock()
_http_client: httpx.Client | None = None


def _shared_client() -> httpx.Client:
    # One pooled client per process; timeouts are applied per request.
    global _http_client
    with _client_lock:
        if _http_client is None:
            _http_client = httpx.Client()
        return _http_client


def _post_with_retries(
    url: str,
    json_body: dict,
    headers: dict[str, str],
    timeout_s: float,
    max_retries: int,
) -> _TransportResult:
    """POST with exponential backoff (1 s doubling, capped at 30 s) on
    transport-level failures only: timeouts, connection errors, 5xx, 429."""
    backoff = RETRY_BACKOFF_INITIAL_S
    attempts = 0
    last_error = "no attempt made"
    while attempts <= max_retries:
        attempts += 1
        try:
            response = _shared_client().post(url, json=json_body, headers=headers, timeout=timeout_s)
        except httpx.TransportError as exc:
            last_error = f"transport failure: {exc.__class__.__name__}: {exc}"
        else:
            if response.status_code == 429 or response.status_code >= 500:
                last_error = f"HTTP {response.status_code}"
            elif response.status_code >= 400:
                return _TransportResult(
                    response=None, attempts=attempts, error=f"HTTP {response.status_code}: {response.text[:200]}"
                )
            else:
                return _TransportResult(response=response, attempts=attempts, error=None)
        if attempts <= max_retries:
            _sleep(backoff)
            backoff = min(backoff * 2, RETRY_BACKOFF_CAP_S)
    return _TransportResult(response=None, attempts=attempts, error=f"{last_error} after {attempts} attempts")


class ChatCompletionsAdapter:
    """Vision LLM adapter speaking the chat-completions JSON wire shape."""

    def __init__(self, config: BackendConfig) -> None:
        self.config = config
        self.headers = _auth_headers(config)

    def _messages(self, system_text: str, user_content) -> list[dict]:
        return [
            {"role": "system", "content": system_text},
            {"role": "user", "content": user_content},
        ]

    def _dispatch(self, messages: list[dict]) -> tuple[str | None, float, int, str | None]:
        body = {"model": self.config.model_name, "messages": messages}
        started = time.perf_counter()
        result = _post_with_retries(
            self.config.endpoint_url,
            body,
            self.headers,
            self.config.timeout_s,
            self.config.max_retries,
        )
        elapsed = time.perf_counter() - started
        if result.response is None:
            return None, elapsed, result.attempts, result.error
        try:
            payload = result.response.json()
            content = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            return None, elapsed, result.attempts, "malformed transport response: no choices/message/content"
        if not isinstance(content, str):
            return None, elapsed, result.attempts, "malformed transport response: content is not text"
        return content, elapsed, result.attempts, None

    def classify(self, bundle: PromptBundle, payload: ImagePayload) -> ClassificationOutcome:
        user_content = [
            {"type": "text", "text": rendered_user_prompt(bundle)},
            {
                "type": "image_url",
                "image_url": {"url": f"data:image/{payload.media_type};base64,{payload.bytes_base64}"},
            },
        ]
        content, elapsed, attempts, error = self._dispatch(self._messages(bundle.system_text, user_content))
        if error is not None:
            return ClassificationOutcome(
                sample_id=payload.sample_id,
                predicted_label=UNPARSED,
                confidence=None,
                full_response=content or "",
                exec_time_s=elapsed,
                attempt_count=attempts,
                error=error,
            )
        label, confidence = parse_response(content, bundle.label_set)
        return ClassificationOutcome(
            sample_id=payload.sample_id,
            predicted_label=label,
            confidence=confidence,
            full_response=content,
            exec_time_s=elapsed,
            attempt_count=attempts,
        )

    def complete_text(self, system_text: str, user_text: str) -> TextCompletion:
        content, elapsed, attempts, error = self._dispatch(self._messages(system_text, user_text))
        return TextCompletion(text=content, exec_time_s=elapsed, attempt_count=attempts, error=error)


class LocalServerAdapter:
    """Adapter for the local CNN model-server protocol (POST /classify)."""

    def __init__(self, config: BackendConfig) -> None:
        self.config = config
        self.headers = _auth_headers(config)

    def classify(self, bundle: PromptBundle, payload: ImagePayload) -> ClassificationOutcome:
        url = self.config.endpoint_url.rstrip("/") + "/classify"
        body = {"image_b64": payload.bytes_base64, "dataset_id": self.config.model_name}
        started = time.perf_counter()
        result = _post_with_retries(url, body, self.headers, self.config.timeout_s, self.config.max_retries)
        elapsed = time.perf_counter() - started
        if result.response is None:
            return ClassificationOutcome(
                sample_id=payload.sample_id,
                predicted_label=UNPARSED,
                confidence=None,
                full_response="",
                exec_time_s=elapsed,
                attempt_count=result.attempts,
                error=result.error,
            )
        text = result.response.text
        try:
            parsed = result.response.json()
            label = parsed["label"]
            confidence = float(parsed["confidence"])
        except (ValueError, KeyError, TypeError):
            return ClassificationOutcome(
                sample_id=payload.sample_id,
                predicted_label=UNPARSED,
                confidence=None,
                full_response=text,
                exec_time_s=elapsed,
                attempt_count=result.attempts,
                error="malformed transport response: expected {label, confidence, probabilities}",
            )
        lookup = {normalize_label(lbl): lbl for lbl in bundle.label_set}
        canonical = lookup.get(normalize_label(str(label)))
        if canonical is None or not 0.0 <= confidence <= 1.0:
            return ClassificationOutcome(
                sample_id=payload.sample_id,
                predicted_label=UNPARSED,
                confidence=None,
                full_response=text,
                exec_time_s=elapsed,
                attempt_count=result.attempts,
                error=f"server returned label {label!r} / confidence {confidence!r} outside the contract",
            )
        return ClassificationOutcome(
            sample_id=payload.sample_id,
            predicted_label=canonical,
            confidence=confidence,
            full_response=text,
            exec_time_s=elapsed,
            attempt_count=result.attempts,
        )


def make_adapter(config: BackendConfig):
    """Instantiate the adapter for a config.

    This is where configuration errors surface (bad kind, missing script,
    unset credential env var) — before any request goes out.
    """
    if config.kind == "mock":
        return MockAdapter(config)
    if config.kind == "chat_llm":
        return ChatCompletionsAdapter(config)
    return LocalServerAdapter(config)


def classify(config: BackendConfig, bundle: PromptBundle, payload: ImagePayload) -> ClassificationOutcome:
    """One-shot classification of a single payload (constructs an adapter)."""
    return make_adapter(config).classify(bundle, payload)


def complete_text(config: BackendConfig, system_text: str, user_text: str) -> TextCompletion:
    """Text-only completion, used by the filter aggregation step."""
    adapter = make_adapter(config)
    if isinstance(adapter, LocalServerAdapter):
        raise ConfigError(f"backend {config.backend_id!r} ({config.kind}) is not text-capable")
    return adapter.complete_text(system_text, user_text)


def run_batch(
    config: BackendConfig,
    bundle: PromptBundle,
    samples: Iterable[Sample],
    manifest: DatasetManifest,
) -> list[ClassificationOutcome]:
    """Classify a batch with at most config.max_concurrency calls in flight.

    Returns one outcome per sample, sorted by sample_id regardless of
    completion order. Per-sample failures (unreadable images, transport
    errors) are recorded inside outcomes; only configuration errors abort.
    """
    sample_list = list(samples)
    known_ids = {s.sample_id for s in manifest.samples}
    strays = [s.sample_id for s in sample_list if s.sample_id not in known_ids]
    if strays:
        raise ConfigError(f"samples not in manifest {manifest.dataset_id!r}: {strays[:5]}")
    adapter = make_adapter(config)
    if not sample_list:
        return []

    def worker(sample: Sample) -> ClassificationOutcome:
        try:
            payload = encode_image(sample, manifest)
            return adapter.classify(bundle, payload)
        except Exception as exc:  # per-sample failures stay inside outcomes
            return ClassificationOutcome(
                sample_id=sample.sample_id,
                predicted_label=UNPARSED,
                confidence=None,
                full_response="",
                exec_time_s=0.0,
                error=f"{exc.__class__.__name__}: {exc}",
            )

    with ThreadPoolExecutor(max_workers=config.max_concurrency) as pool:
        outcomes = list(pool.map(worker, sample_list))
    return sorted(outcomes, key=lambda o: o.sample_id)


def load_backend_config(path: str | Path) -> BackendConfig:
    """Load a backend config from JSON. Relative mock_script_path values
    resolve against the config file's directory."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"backend config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"backend config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"backend config {path} must be a JSON object")
    allowed = {
        "backend_id",
        "kind",
        "endpoint_url",
        "model_name",
        "credential_env_var",
        "timeout_s",
        "max_retries",
        "max_concurrency",
        "mock_script_path",
    }
    unknown = raw.keys() - allowed
    if unknown:
        raise ConfigError(f"backend config {path} has unknown fields: {sorted(unknown)}")
    for key in ("backend_id", "kind"):
        if key not in raw:
            raise ConfigError(f"backend config {path} missing field {key!r}")
    script = raw.get("mock_script_path")
    script_path = None
    if script is not None:
        script_path = Path(script)
        if not script_path.is_absolute():
            script_path = path.parent / script_path
    try:
        return BackendConfig(
            backend_id=str(raw["backend_id"]),
            kind=str(raw["kind"]),
            endpoint_url=str(raw.get("endpoint_url", "")),
            model_name=str(raw.get("model_name", "")),
            credential_env_var=str(raw.get("credential_env_var", "")),
            timeout_s=float(raw.get("timeout_s", 30.0)),
            max_retries=int(raw.get("max_retries", 2)),
            max_concurrency=int(raw.get("max_concurrency", 4)),
            mock_script_path=script_path,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"backend config {path}: {exc}") from exc
