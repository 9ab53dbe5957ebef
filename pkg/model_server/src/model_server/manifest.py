"""Reader for the harness's dataset manifest file format.

The format is the service's only coupling to the benchmark harness:
header lines ``dataset_id=``, ``modality=``, ``labels=`` followed by
``sample_id<TAB>relative_path<TAB>ground_truth<TAB>split`` lines, split
being train/val/test or ``-``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

SPLITS = ("train", "val", "test")


class ManifestFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestSample:
    sample_id: str
    image_path: str
    ground_truth: str
    split: str | None


@dataclass(frozen=True)
class Manifest:
    dataset_id: str
    modality: str
    label_set: tuple[str, ...]
    samples: tuple[ManifestSample, ...]
    root_dir: Path

    def samples_for_split(self, split: str) -> tuple[ManifestSample, ...]:
        return tuple(s for s in self.samples if s.split == split)

    def label_index(self, label: str) -> int:
        normalized = " ".join(label.split()).lower()
        for i, known in enumerate(self.label_set):
            if " ".join(known.split()).lower() == normalized:
                return i
        raise ManifestFormatError(f"label {label!r} is not in the label set")


def read_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestFormatError(f"manifest file not found: {path}")
    headers: dict[str, str] = {}
    samples: list[ManifestSample] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "\t" not in line and "=" in line:
            key, _, value = line.partition("=")
            headers[key.strip()] = value.strip()
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise ManifestFormatError(f"{path}:{lineno}: expected 4 tab-separated fields")
        sample_id, rel_path, ground_truth, split = (f.strip() for f in fields)
        if split not in SPLITS and split != "-":
            raise ManifestFormatError(f"{path}:{lineno}: bad split {split!r}")
        samples.append(ManifestSample(sample_id, rel_path, ground_truth, None if split == "-" else split))
    for key in ("dataset_id", "modality", "labels"):
        if key not in headers:
            raise ManifestFormatError(f"{path}: missing header {key!r}")
    labels = tuple(lbl.strip() for lbl in headers["labels"].split(",") if lbl.strip())
    if not labels:
        raise ManifestFormatError(f"{path}: empty label set")
    manifest = Manifest(
        dataset_id=headers["dataset_id"],
        modality=headers["modality"],
        label_set=labels,
        samples=tuple(samples),
        root_dir=path.parent.resolve(),
    )
    for sample in samples:
        manifest.label_index(sample.ground_truth)  # raises on mismatch
    return manifest
