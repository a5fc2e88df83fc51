"""Classifier contract, zero-shot head math, and the seeded toy linear model.

The toy model is deliberately linear: logits = W @ flatten(x) + b, which
gives closed-form forward and input-gradient expressions that tests can
check against independent oracles. Pretrained vision-language adapters
live in :mod:`histoadv.pretrained` so that importing this module never
pulls in torch.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import LabelSet, Prediction, require_valid_image, softmax

DEFAULT_PROMPT_TEMPLATE = "An H&E image of {}."
DEFAULT_TEMPERATURE = 100.0

_UNIT_NORM_TOL = 1e-6


class DifferentiableClassifier(abc.ABC):
    """A classifier exposing predictions and input gradients on [0,1] images.

    Implementations must be deterministic for a fixed model. When
    ``concurrent_safe`` is False, callers serialize classify/gradient calls.
    """

    concurrent_safe: bool = True

    @property
    @abc.abstractmethod
    def label_set(self) -> LabelSet: ...

    @abc.abstractmethod
    def classify(self, image: np.ndarray) -> Prediction:
        """Predict class logits/probabilities for a valid (3,H,W) image."""

    @abc.abstractmethod
    def input_gradient(self, image: np.ndarray, target_index: int) -> np.ndarray:
        """Gradient of cross-entropy toward ``target_index`` w.r.t. the image."""


def build_prompts(labels: Iterable[str], template: str = DEFAULT_PROMPT_TEMPLATE) -> list[str]:
    """Substitute each label (or phrase) into a template with exactly one ``{}`` slot."""
    slots = template.count("{}")
    if slots != 1:
        raise ValueError(f"template must contain exactly one '{{}}' placeholder, found {slots}")
    return [template.replace("{}", label) for label in labels]


@dataclass(frozen=True)
class ZeroShotHead:
    """Ordered labels plus unit-norm text embeddings and a logit scale."""

    labels: LabelSet
    text_embeddings: np.ndarray  # (K, d), rows unit L2 norm
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self) -> None:
        rows = np.asarray(self.text_embeddings, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] != len(self.labels):
            raise ValueError(
                f"text embeddings must be ({len(self.labels)}, d), got {rows.shape}"
            )
        if rows.shape[1] < 2:
            raise ValueError("embedding dimension must be >= 2")
        norms = np.linalg.norm(rows, axis=1)
        if np.any(np.abs(norms - 1.0) > _UNIT_NORM_TOL):
            raise ValueError("text embedding rows must have unit L2 norm")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        object.__setattr__(self, "text_embeddings", rows)

    @classmethod
    def build(
        cls,
        labels: LabelSet,
        raw_embeddings: np.ndarray,
        temperature: float = DEFAULT_TEMPERATURE,
    ) -> "ZeroShotHead":
        """Normalize raw text embeddings row-wise and assemble a head."""
        rows = np.asarray(raw_embeddings, dtype=np.float64)
        if rows.ndim != 2:
            raise ValueError(f"raw embeddings must be 2-D, got shape {rows.shape}")
        norms = np.linalg.norm(rows, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("raw embedding rows must be nonzero")
        return cls(labels=labels, text_embeddings=rows / norms, temperature=temperature)

    @property
    def dim(self) -> int:
        return self.text_embeddings.shape[1]


def zero_shot_logits(image_embedding: np.ndarray, head: ZeroShotHead) -> np.ndarray:
    """Temperature-scaled cosine similarities against the head's text rows.

    logit_k = temperature * <e / ||e||, t_k>, invariant under positive
    rescaling of the image embedding; each logit lies in [-tau, tau].
    """
    e = np.asarray(image_embedding, dtype=np.float64).reshape(-1)
    if e.size != head.dim:
        raise ValueError(f"embedding dimension {e.size} != head dimension {head.dim}")
    norm = np.linalg.norm(e)
    if norm == 0.0:
        raise ValueError("image embedding must be nonzero")
    return head.temperature * (head.text_embeddings @ (e / norm))


class ToyLinearClassifier(DifferentiableClassifier):
    """Seeded linear classifier with analytic forward and gradient.

    logits = W @ flatten(x) + b; the cross-entropy input gradient is
    (softmax(logits) - onehot(target)) @ W reshaped to the image shape.
    """

    concurrent_safe = True

    def __init__(
        self,
        labels: LabelSet,
        weights: np.ndarray,
        bias: np.ndarray,
        image_shape: tuple[int, int, int],
    ):
        k = len(labels)
        pixels = int(np.prod(image_shape))
        weights = np.asarray(weights, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weights.shape != (k, pixels) or bias.shape != (k,):
            raise ValueError(
                f"expected W {(k, pixels)} and b {(k,)}, got {weights.shape} and {bias.shape}"
            )
        self._labels = labels
        self.weights = weights
        self.bias = bias
        self.image_shape = tuple(image_shape)

    @property
    def label_set(self) -> LabelSet:
        return self._labels

    def _check_shape(self, image: np.ndarray) -> None:
        if tuple(image.shape) != self.image_shape:
            raise ValueError(f"expected image shape {self.image_shape}, got {tuple(image.shape)}")

    def logits(self, image: np.ndarray) -> np.ndarray:
        self._check_shape(image)
        return self.weights @ np.asarray(image, dtype=np.float64).reshape(-1) + self.bias

    def classify(self, image: np.ndarray) -> Prediction:
        require_valid_image(image)
        return Prediction.from_logits(self.logits(image))

    def input_gradient(self, image: np.ndarray, target_index: int) -> np.ndarray:
        require_valid_image(image)
        if not 0 <= target_index < len(self._labels):
            raise IndexError(f"target index {target_index} outside [0, {len(self._labels)})")
        probs = softmax(self.logits(image))
        coeff = probs.copy()
        coeff[target_index] -= 1.0
        return (coeff @ self.weights).reshape(self.image_shape)


def make_toy_classifier(
    seed: int,
    label_count: int,
    image_shape: tuple[int, int, int] = (3, 16, 16),
    labels: LabelSet | None = None,
) -> ToyLinearClassifier:
    """Build a deterministic toy linear classifier from a seed.

    W and b are standard normal draws scaled by 1/sqrt(pixel_count) so
    logits stay O(1) for in-range images.
    """
    if labels is not None:
        if len(labels) != label_count:
            raise ValueError("label_count must match the provided labels")
    else:
        labels = LabelSet(tuple(f"class_{i}" for i in range(label_count)))
    if label_count < 2:
        raise ValueError("need at least 2 classes")
    pixels = int(np.prod(image_shape))
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(pixels)
    weights = rng.standard_normal((label_count, pixels)) * scale
    bias = rng.standard_normal(label_count) * scale
    return ToyLinearClassifier(labels, weights, bias, image_shape)
