"""Shared domain types, deterministic seeding, and image validation.

Images are float arrays in [0, 1] with channels-first layout (3, H, W).
All pixel-domain quantities (epsilon, step size, SSIM dynamic range) live
in this canonical scale; any model-specific normalization happens inside
the model adapters.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

MIN_SIDE = 8


class HistoadvError(Exception):
    """Base class for errors raised by this package."""


def derive_seed(global_seed: int, record_id: str) -> int:
    """Derive a per-record 64-bit seed from a global seed and a stable id.

    Uses a keyed blake2b digest so the result is identical on every
    platform and independent of iteration order or worker scheduling.
    """
    if not record_id:
        raise ValueError("record_id must be non-empty")
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<Q", global_seed & 0xFFFFFFFFFFFFFFFF))
    h.update(record_id.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def validate_image(t: object) -> str | None:
    """Return a description of the first violated image invariant, or None.

    Valid images are 3-D float arrays laid out (3, H, W) with H, W >= 8
    and every element finite and inside [0, 1].
    """
    if not isinstance(t, np.ndarray):
        return f"expected a numpy array, got {type(t).__name__}"
    if t.ndim != 3:
        return f"expected 3 dimensions (channels, height, width), got {t.ndim}"
    c, h, w = t.shape
    if c != 3:
        return f"expected 3 channels, got {c}"
    if h < MIN_SIDE or w < MIN_SIDE:
        return f"height and width must be >= {MIN_SIDE}, got {h}x{w}"
    if not np.isfinite(t).all():
        return "image contains non-finite values"
    lo, hi = float(t.min()), float(t.max())
    if lo < 0.0 or hi > 1.0:
        return f"pixel values must lie in [0, 1], found range [{lo}, {hi}]"
    return None


def require_valid_image(t: np.ndarray, context: str = "image") -> None:
    problem = validate_image(t)
    if problem is not None:
        raise ValueError(f"invalid {context}: {problem}")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over a 1-D logit vector."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


@dataclass(frozen=True)
class LabelSet:
    """Ordered, duplicate-free class names; order defines the index mapping."""

    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.labels:
            raise ValueError("LabelSet must contain at least one label")
        if any(not isinstance(s, str) or not s for s in self.labels):
            raise ValueError("labels must be non-empty strings")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("labels must be distinct")
        object.__setattr__(self, "labels", tuple(self.labels))

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"label {label!r} not in label set {list(self.labels)}") from None

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self) -> Iterator[str]:
        return iter(self.labels)

    def __contains__(self, label: object) -> bool:
        return label in self.labels

    def __getitem__(self, i: int) -> str:
        return self.labels[i]

    def to_list(self) -> list[str]:
        return list(self.labels)

    @classmethod
    def from_list(cls, labels: Sequence[str]) -> "LabelSet":
        return cls(tuple(labels))


@dataclass(frozen=True)
class Prediction:
    """Classifier output: logits, softmax probabilities, argmax index."""

    logits: np.ndarray
    probabilities: np.ndarray
    predicted_index: int

    @classmethod
    def from_logits(cls, logits: np.ndarray) -> "Prediction":
        z = np.asarray(logits, dtype=np.float64).reshape(-1)
        if z.size < 1 or not np.isfinite(z).all():
            raise ValueError("logits must be a finite non-empty vector")
        probs = softmax(z)
        # np.argmax returns the first maximum, i.e. ties break to the lowest index
        return cls(logits=z, probabilities=probs, predicted_index=int(np.argmax(probs)))


@dataclass(frozen=True)
class DatasetRecord:
    """One dataset entry: stable id, file path, ground-truth label."""

    id: str
    path: Path
    true_label: str

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("record id must be non-empty")
        object.__setattr__(self, "path", Path(self.path))
