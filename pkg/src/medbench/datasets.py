"""Dataset manifests: loading, validation, split assignment, image payloads.

Manifest files are UTF-8 and line-oriented: three header lines
(``dataset_id=``, ``modality=``, ``labels=`` with comma-separated labels)
followed by one sample per line as

    sample_id<TAB>relative_path<TAB>ground_truth<TAB>split

where split is ``train``, ``val``, ``test`` or ``-`` (unassigned). Lines
starting with ``#`` and blank lines are ignored. Relative paths resolve
against the manifest's directory and must not escape it.
"""

from __future__ import annotations

import base64
import os
import random
import re
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import ManifestError

MODALITIES = ("xray", "ct", "mri")
SPLITS = ("train", "val", "test")

# Built-in canonical label sets for the three supported dataset families.
PRESET_LABEL_SETS: dict[str, tuple[str, ...]] = {
    "xray": ("covid", "normal", "lung opacity", "viral pneumonia"),
    "mri": ("glioma", "meningioma", "pituitary", "no tumor"),
    "ct": ("normal", "adenocarcinoma", "large cell carcinoma", "squamous cell carcinoma"),
}

DEFAULT_SPLIT_RATIOS = (0.8, 0.1, 0.1)

_WHITESPACE_RUN = re.compile(r"\s+")

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
_JPEG_MAGIC = b"\xff\xd8\xff"


def normalize_label(label: str) -> str:
    """Canonical form used for all label comparisons.

    Trims, collapses internal whitespace runs to single spaces, lowercases.
    """
    return _WHITESPACE_RUN.sub(" ", label.strip()).lower()


@dataclass(frozen=True)
class Sample:
    """One labeled image belonging to a dataset manifest."""

    sample_id: str
    image_path: str  # relative to the manifest's root_dir
    ground_truth: str
    split: str | None = None


@dataclass(frozen=True)
class DatasetManifest:
    """Validated description of one dataset: labels, samples, file root."""

    dataset_id: str
    modality: str
    label_set: tuple[str, ...]
    samples: tuple[Sample, ...]
    root_dir: Path

    def label_lookup(self) -> dict[str, str]:
        """Map from normalized label to its canonical spelling."""
        return {normalize_label(lbl): lbl for lbl in self.label_set}

    def samples_for_split(self, split: str) -> tuple[Sample, ...]:
        return tuple(s for s in self.samples if s.split == split)

    def split_counts(self) -> dict[str, int]:
        counts = {name: 0 for name in SPLITS}
        counts["unassigned"] = 0
        for s in self.samples:
            counts[s.split if s.split is not None else "unassigned"] += 1
        return counts


@dataclass(frozen=True)
class ImagePayload:
    """Base64-encoded image bytes ready for transport to a backend."""

    sample_id: str
    media_type: str  # "png" or "jpeg"
    bytes_base64: str


def _check_relative_path(rel: str, root: Path, sample_id: str) -> None:
    if os.path.isabs(rel):
        raise ManifestError(
            f"sample {sample_id!r}: image_path {rel!r} must be relative to the manifest directory"
        )
    resolved = os.path.normpath(os.path.join(str(root), rel))
    root_norm = os.path.normpath(str(root))
    if os.path.commonpath([resolved, root_norm]) != root_norm:
        raise ManifestError(
            f"sample {sample_id!r}: image_path {rel!r} escapes the manifest directory"
        )


def _validate_label_set(labels: tuple[str, ...]) -> None:
    if not labels:
        raise ManifestError("labels header must list at least one label")
    seen: set[str] = set()
    for lbl in labels:
        if not lbl:
            raise ManifestError("labels header contains an empty label")
        norm = normalize_label(lbl)
        if norm in seen:
            raise ManifestError(f"duplicate label {lbl!r} in label set (labels compare case-insensitively)")
        seen.add(norm)


def validate_manifest(manifest: DatasetManifest) -> None:
    """Raise ManifestError unless every manifest invariant holds."""
    if manifest.modality not in MODALITIES:
        raise ManifestError(f"modality must be one of {MODALITIES}, got {manifest.modality!r}")
    _validate_label_set(manifest.label_set)
    lookup = {normalize_label(lbl) for lbl in manifest.label_set}
    seen_ids: set[str] = set()
    for sample in manifest.samples:
        if sample.sample_id in seen_ids:
            raise ManifestError(f"duplicate sample id {sample.sample_id!r}")
        seen_ids.add(sample.sample_id)
        if normalize_label(sample.ground_truth) not in lookup:
            raise ManifestError(
                f"sample {sample.sample_id!r}: ground_truth {sample.ground_truth!r} "
                f"is not in the label set"
            )
        if sample.split is not None and sample.split not in SPLITS:
            raise ManifestError(
                f"sample {sample.sample_id!r}: split {sample.split!r} must be one of {SPLITS} or '-'"
            )
        _check_relative_path(sample.image_path, manifest.root_dir, sample.sample_id)


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse and validate a manifest file.

    Raises ManifestError naming the offending line, field, or sample on
    any schema or invariant violation.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest file not found: {path}")
    headers: dict[str, str] = {}
    samples: list[Sample] = []
    text = path.read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "\t" not in line and "=" in line:
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in ("dataset_id", "modality", "labels"):
                raise ManifestError(f"line {lineno}: unknown header field {key!r}")
            if key in headers:
                raise ManifestError(f"line {lineno}: duplicate header field {key!r}")
            headers[key] = value.strip()
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise ManifestError(
                f"line {lineno}: sample lines need 4 tab-separated fields "
                f"(sample_id, path, ground_truth, split), got {len(fields)}"
            )
        sample_id, rel_path, ground_truth, split = (f.strip() for f in fields)
        if not sample_id or not rel_path or not ground_truth:
            raise ManifestError(f"line {lineno}: sample_id, path, and ground_truth must be non-empty")
        samples.append(
            Sample(
                sample_id=sample_id,
                image_path=rel_path,
                ground_truth=ground_truth,
                split=None if split == "-" else split,
            )
        )
    for key in ("dataset_id", "modality", "labels"):
        if key not in headers:
            raise ManifestError(f"missing header field {key!r}")
    labels = tuple(lbl.strip() for lbl in headers["labels"].split(",") if lbl.strip())
    manifest = DatasetManifest(
        dataset_id=headers["dataset_id"],
        modality=headers["modality"],
        label_set=labels,
        samples=tuple(samples),
        root_dir=path.parent.resolve(),
    )
    validate_manifest(manifest)
    return manifest


def save_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    """Write a manifest back out in the documented line format."""
    for lbl in manifest.label_set:
        if "," in lbl or "\t" in lbl or "\n" in lbl:
            raise ManifestError(f"label {lbl!r} cannot contain commas, tabs, or newlines")
    lines = [
        f"dataset_id={manifest.dataset_id}",
        f"modality={manifest.modality}",
        f"labels={','.join(manifest.label_set)}",
    ]
    for s in manifest.samples:
        for field in (s.sample_id, s.image_path, s.ground_truth):
            if "\t" in field or "\n" in field:
                raise ManifestError(f"sample {s.sample_id!r}: fields cannot contain tabs or newlines")
        lines.append(f"{s.sample_id}\t{s.image_path}\t{s.ground_truth}\t{s.split or '-'}")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _largest_remainder_counts(n: int, ratios: tuple[float, float, float]) -> list[int]:
    targets = [r * n for r in ratios]
    counts = [int(t) for t in targets]
    remainder = n - sum(counts)
    by_fraction = sorted(range(3), key=lambda i: (-(targets[i] - counts[i]), i))
    for i in by_fraction[:remainder]:
        counts[i] += 1
    return counts


def assign_splits(
    manifest: DatasetManifest,
    ratios: tuple[float, float, float] = DEFAULT_SPLIT_RATIOS,
    seed: int = 0,
) -> DatasetManifest:
    """Assign train/val/test splits, stratified per ground-truth label.

    Deterministic for fixed (manifest, ratios, seed): per label, sample ids
    are sorted lexicographically, shuffled by a label-derived seeded RNG,
    and allocated by largest remainder, so per-label counts differ from
    ratio*count by at most 1. Existing splits are overwritten.
    """
    if any(r < 0 for r in ratios):
        raise ValueError(f"split ratios must be non-negative, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios} (sum {sum(ratios)})")
    nonzero = sum(1 for r in ratios if r > 0)
    ordered_labels = [normalize_label(lbl) for lbl in manifest.label_set]
    by_label: dict[str, list[Sample]] = {}
    for sample in manifest.samples:
        norm = normalize_label(sample.ground_truth)
        if norm not in ordered_labels:
            raise ManifestError(
                f"sample {sample.sample_id!r}: ground_truth {sample.ground_truth!r} is not in the label set"
            )
        by_label.setdefault(norm, []).append(sample)
    assignment: dict[str, str] = {}
    for norm_label in ordered_labels:
        group = by_label.get(norm_label, [])
        if not group:
            continue
        if len(group) < nonzero:
            raise ValueError(
                f"label {norm_label!r} has {len(group)} samples, fewer than the "
                f"{nonzero} non-zero splits"
            )
        ids = sorted(s.sample_id for s in group)
        random.Random(f"{seed}:{norm_label}").shuffle(ids)
        n_train, n_val, _ = _largest_remainder_counts(len(ids), ratios)
        for i, sample_id in enumerate(ids):
            if i < n_train:
                assignment[sample_id] = "train"
            elif i < n_train + n_val:
                assignment[sample_id] = "val"
            else:
                assignment[sample_id] = "test"
    new_samples = tuple(replace(s, split=assignment[s.sample_id]) for s in manifest.samples)
    return replace(manifest, samples=new_samples)


def detect_media_type(data: bytes) -> str | None:
    """Return "png"/"jpeg" from magic bytes, or None if unrecognized."""
    if data.startswith(_PNG_MAGIC):
        return "png"
    if data.startswith(_JPEG_MAGIC):
        return "jpeg"
    return None


def encode_image(sample: Sample, manifest: DatasetManifest) -> ImagePayload:
    """Read a sample's image file and base64-encode it for transport.

    Media type comes from the file's magic bytes, never the extension.
    """
    full_path = manifest.root_dir / sample.image_path
    try:
        data = full_path.read_bytes()
    except OSError as exc:
        raise ManifestError(f"sample {sample.sample_id!r}: cannot read image {full_path}: {exc}") from exc
    media_type = detect_media_type(data)
    if media_type is None:
        raise ManifestError(
            f"sample {sample.sample_id!r}: {full_path} is not a supported image format (png/jpeg)"
        )
    return ImagePayload(
        sample_id=sample.sample_id,
        media_type=media_type,
        bytes_base64=base64.standard_b64encode(data).decode("ascii"),
    )
