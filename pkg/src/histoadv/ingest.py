"""Folder-per-class dataset scanning, image loading, and sampling.

Expects the layout used by public histopathology patch sets such as the
Kather colon collection: root/CLASS_NAME/*.tif|png|jpg. Class labels are
the folder names verbatim; an optional mapping translates the terse Kather
folder codes into human-readable phrases for prompt building.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .core import DatasetRecord, LabelSet, derive_seed, require_valid_image

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".tif", ".tiff", ".png", ".jpg", ".jpeg"}

# Human-readable phrases for the nine Kather colon folder codes, for use as
# prompt text in place of the raw codes.
KATHER_LABEL_PHRASES = {
    "ADI": "adipose tissue",
    "BACK": "background",
    "DEB": "debris",
    "LYM": "lymphocytes",
    "MUC": "mucus",
    "MUS": "smooth muscle",
    "NORM": "normal colon mucosa",
    "STR": "cancer-associated stroma",
    "TUM": "colorectal adenocarcinoma epithelium",
}


def label_phrase(label: str) -> str:
    """Map a folder code to its prompt phrase, falling back to the code itself."""
    return KATHER_LABEL_PHRASES.get(label, label)


@dataclass
class DatasetManifest:
    """Deterministic snapshot of a scanned dataset tree."""

    root: Path
    label_set: LabelSet
    records: tuple[DatasetRecord, ...]
    counts: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "root": str(self.root),
            "labels": self.label_set.to_list(),
            "records": [
                {"id": r.id, "path": str(r.path), "label": r.true_label} for r in self.records
            ],
            "counts": dict(self.counts),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetManifest":
        return cls(
            root=Path(obj["root"]),
            label_set=LabelSet.from_list(obj["labels"]),
            records=tuple(
                DatasetRecord(id=r["id"], path=Path(r["path"]), true_label=r["label"])
                for r in obj["records"]
            ),
            counts={k: int(v) for k, v in obj["counts"].items()},
        )

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: Path) -> "DatasetManifest":
        return cls.from_json(json.loads(Path(path).read_text()))


def scan_dataset(root: Path) -> DatasetManifest:
    """Scan a folder-per-class tree into a manifest with stable ordering.

    Labels are the sorted subfolder names; record ids are POSIX-style paths
    relative to the root, so two scans of the same tree are identical.
    Non-image files are skipped with a warning; empty class folders warn
    but are kept in the label set with a zero count.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} is not a directory")
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise ValueError(f"dataset root {root} contains no class folders")

    records: list[DatasetRecord] = []
    counts: dict[str, int] = {}
    for class_dir in class_dirs:
        label = class_dir.name
        counts[label] = 0
        for f in sorted(class_dir.rglob("*")):
            if not f.is_file():
                continue
            if f.suffix.lower() not in IMAGE_EXTENSIONS:
                log.warning("skipping non-image file %s", f)
                continue
            rec_id = f.relative_to(root).as_posix()
            records.append(DatasetRecord(id=rec_id, path=f, true_label=label))
            counts[label] += 1
        if counts[label] == 0:
            log.warning("class folder %s contains no images", class_dir)

    if not records:
        raise ValueError(f"no decodable images found under {root}")
    records.sort(key=lambda r: r.id)
    return DatasetManifest(
        root=root,
        label_set=LabelSet.from_list([d.name for d in class_dirs]),
        records=tuple(records),
        counts=counts,
    )


def _decode_rgb(path: Path) -> np.ndarray:
    """Decode to float64 HWC RGB in [0,1], normalizing by the source bit depth."""
    with Image.open(path) as img:
        if img.mode in ("I;16", "I;16B", "I;16L"):
            arr = np.asarray(img, dtype=np.float64) / 65535.0
            arr = np.stack([arr, arr, arr], axis=-1)
        elif img.mode == "I":
            arr = np.asarray(img, dtype=np.float64) / 65535.0
            arr = np.stack([arr, arr, arr], axis=-1)
        else:
            if img.mode != "RGB":
                try:
                    img = img.convert("RGB")
                except (OSError, ValueError) as exc:
                    raise ValueError(f"cannot convert {path} (mode {img.mode}) to RGB") from exc
            arr = np.asarray(img, dtype=np.float64) / 255.0
    return np.clip(arr, 0.0, 1.0)


def load_image(path: Path, target_size: tuple[int, int] | None = (224, 224)) -> np.ndarray:
    """Load an RGB raster into a channels-first [0,1] float tensor.

    When the source size differs from target_size (height, width), the
    image is resampled with plain bilinear interpolation: no anti-aliasing,
    half-pixel-center alignment (OpenCV INTER_LINEAR). target_size=None
    keeps the source size.
    """
    path = Path(path)
    try:
        arr = _decode_rgb(path)
    except (OSError, SyntaxError, ValueError) as exc:
        raise ValueError(f"cannot decode image {path}: {exc}") from exc
    if target_size is not None and arr.shape[:2] != tuple(target_size):
        h, w = target_size
        arr = cv2.resize(arr, (w, h), interpolation=cv2.INTER_LINEAR)
        arr = np.clip(arr, 0.0, 1.0)
    tensor = np.ascontiguousarray(arr.transpose(2, 0, 1))
    require_valid_image(tensor, context=f"image loaded from {path}")
    return tensor


def sample_per_class(manifest: DatasetManifest, n: int, seed: int) -> list[DatasetRecord]:
    """Draw up to n records per class without replacement, deterministically.

    The per-class shuffle is seeded from derive_seed(seed, label), so the
    sample is independent of scan order and identical across runs; output
    is sorted by record id.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    chosen: list[DatasetRecord] = []
    for label in manifest.label_set:
        class_records = [r for r in manifest.records if r.true_label == label]
        if not class_records:
            continue
        rng = np.random.default_rng(derive_seed(seed, f"sample::{label}"))
        order = rng.permutation(len(class_records))
        chosen.extend(class_records[i] for i in order[: min(n, len(class_records))])
    chosen.sort(key=lambda r: r.id)
    return chosen


def dataset_stats(manifest: DatasetManifest) -> list[tuple[str, int, float]]:
    """Per-label (label, count, fraction) rows; fractions sum to 1."""
    total = sum(manifest.counts.values())
    if total == 0:
        raise ValueError("manifest contains no records")
    return [(label, manifest.counts[label], manifest.counts[label] / total) for label in manifest.label_set]
