"""Shared fixtures: seeded images, toy models, and a synthetic dataset tree."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from histoadv import LabelSet, make_toy_classifier

SYNTHETIC_LABELS = ("debris", "epithelium", "stroma")

# Channel means per class; far enough apart that images carry a clean
# class-correlated linear signal while leaving the full +-0.2 ball inside [0,1].
_CLASS_CENTERS = {
    "debris": (0.65, 0.35, 0.40),
    "epithelium": (0.40, 0.65, 0.35),
    "stroma": (0.35, 0.40, 0.65),
}


def random_image(rng: np.random.Generator, shape=(3, 16, 16), lo=0.2, hi=0.8) -> np.ndarray:
    return rng.uniform(lo, hi, size=shape)


def build_synthetic_dataset(
    root: Path,
    labels=SYNTHETIC_LABELS,
    per_class: int = 4,
    size: tuple[int, int] = (32, 32),
    seed: int = 1234,
) -> Path:
    """Write a folder-per-class PNG tree with class-correlated statistics."""
    rng = np.random.default_rng(seed)
    root = Path(root)
    for label in labels:
        (root / label).mkdir(parents=True, exist_ok=True)
        center = np.array(_CLASS_CENTERS.get(label, (0.5, 0.5, 0.5))).reshape(3, 1, 1)
        for i in range(per_class):
            img = center + 0.08 * rng.standard_normal((3, *size))
            img = np.clip(img, 0.15, 0.85)
            arr = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
            Image.fromarray(arr, mode="RGB").save(root / label / f"img_{i:03d}.png")
    return root


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240917)


@pytest.fixture
def toy3():
    """3-class toy model on 3x16x16 images."""
    return make_toy_classifier(7, 3, (3, 16, 16))


@pytest.fixture
def synthetic_dataset(tmp_path) -> Path:
    return build_synthetic_dataset(tmp_path / "data")


@pytest.fixture
def synthetic_labels() -> LabelSet:
    return LabelSet.from_list(sorted(SYNTHETIC_LABELS))
