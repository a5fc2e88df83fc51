"""Perceptual and attack metrics: windowed SSIM, perturbation norms, ASR curves.

SSIM is computed per channel over valid-mode sliding Gaussian windows (no
padding) and averaged across channels; this boundary convention is part of
the contract so that independent reference implementations agree exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.ndimage import correlate1d


@dataclass(frozen=True)
class SsimParams:
    """Windowed-SSIM parameters for images in [0, dynamic_range]."""

    window_size: int = 11
    gaussian_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self) -> None:
        if self.window_size < 3 or self.window_size % 2 == 0:
            raise ValueError("window_size must be an odd integer >= 3")
        if self.gaussian_sigma <= 0:
            raise ValueError("gaussian_sigma must be positive")
        if self.dynamic_range <= 0:
            raise ValueError("dynamic_range must be positive")

    def fitted_to(self, height: int, width: int) -> "SsimParams":
        """Return params whose window fits an image of the given size."""
        limit = min(height, width)
        if self.window_size <= limit:
            return self
        size = limit if limit % 2 == 1 else limit - 1
        return SsimParams(max(size, 3), self.gaussian_sigma, self.k1, self.k2, self.dynamic_range)


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    """1-D Gaussian weights of the given size, normalized to sum to 1."""
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return w / w.sum()


def _local_weighted_mean(plane: np.ndarray, window: np.ndarray) -> np.ndarray:
    # Separable Gaussian filtering; cropping window//2 from each border makes
    # the constant-mode output identical to a valid-mode sliding window.
    half = window.size // 2
    out = correlate1d(plane, window, axis=0, mode="constant")
    out = correlate1d(out, window, axis=1, mode="constant")
    return out[half : plane.shape[0] - half, half : plane.shape[1] - half]


def ssim(x: np.ndarray, y: np.ndarray, params: SsimParams | None = None) -> float:
    """Structural similarity between two (3, H, W) images in [0, L].

    Per channel, local means/variances/covariance are taken over sliding
    Gaussian windows (valid mode) and combined as

        ((2*mu_x*mu_y + C1) * (2*cov_xy + C2))
        / ((mu_x^2 + mu_y^2 + C1) * (var_x + var_y + C2))

    with C1 = (k1*L)^2, C2 = (k2*L)^2; the channel means are averaged.
    """
    p = params or SsimParams()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.ndim != 3:
        raise ValueError(f"expected (channels, height, width), got shape {x.shape}")
    _, h, w = x.shape
    if p.window_size > h or p.window_size > w:
        raise ValueError(f"window {p.window_size} does not fit inside a {h}x{w} image")

    window = gaussian_window(p.window_size, p.gaussian_sigma)
    c1 = (p.k1 * p.dynamic_range) ** 2
    c2 = (p.k2 * p.dynamic_range) ** 2

    channel_means = []
    for xc, yc in zip(x, y):
        mu_x = _local_weighted_mean(xc, window)
        mu_y = _local_weighted_mean(yc, window)
        var_x = _local_weighted_mean(xc * xc, window) - mu_x**2
        var_y = _local_weighted_mean(yc * yc, window) - mu_y**2
        cov_xy = _local_weighted_mean(xc * yc, window) - mu_x * mu_y
        ssim_map = ((2 * mu_x * mu_y + c1) * (2 * cov_xy + c2)) / (
            (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
        )
        channel_means.append(ssim_map.mean())
    return float(np.mean(channel_means))


def linf_distance(x: np.ndarray, y: np.ndarray) -> float:
    """Largest absolute elementwise difference."""
    x, y = np.asarray(x), np.asarray(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return float(np.max(np.abs(x - y)))


def l2_distance(x: np.ndarray, y: np.ndarray) -> float:
    """Euclidean norm of the elementwise difference."""
    x, y = np.asarray(x), np.asarray(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return float(np.sqrt(np.sum((x - y) ** 2)))


@dataclass
class AsrCurve:
    """Cumulative attack-success-rate per step, overall and per true label."""

    per_step: np.ndarray
    per_class: dict[str, np.ndarray] = field(default_factory=dict)
    n_attacks: int = 0
    n_attacks_per_class: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "per_step": [float(v) for v in self.per_step],
            "per_class": {k: [float(v) for v in vec] for k, vec in self.per_class.items()},
            "n_attacks": self.n_attacks,
            "n_attacks_per_class": dict(self.n_attacks_per_class),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "AsrCurve":
        return cls(
            per_step=np.asarray(obj["per_step"], dtype=np.float64),
            per_class={k: np.asarray(v, dtype=np.float64) for k, v in obj["per_class"].items()},
            n_attacks=int(obj["n_attacks"]),
            n_attacks_per_class={k: int(v) for k, v in obj["n_attacks_per_class"].items()},
        )


def _cumulative_curve(success_steps: Sequence[int | None], max_steps: int) -> np.ndarray:
    n = len(success_steps)
    curve = np.zeros(max_steps, dtype=np.float64)
    for s in success_steps:
        if s is not None:
            curve[s - 1 :] += 1.0
    return curve / n


def asr_per_step(
    results: Sequence,
    max_steps: int,
    true_labels: Sequence[str] | None = None,
) -> AsrCurve:
    """Aggregate AttackResults into a cumulative success-rate curve.

    per_step[s] is the fraction of attacks whose success_step is <= s+1,
    so the curve is nondecreasing by construction and its final entry is
    the plain success fraction. When true_labels is given (one per result),
    a per-class curve keyed by true label is produced as well.
    """
    if not results:
        raise ValueError("results must be non-empty")
    if true_labels is not None and len(true_labels) != len(results):
        raise ValueError("true_labels must align one-to-one with results")
    for r in results:
        if len(r.trace) > max_steps:
            raise ValueError(f"trace of length {len(r.trace)} exceeds max_steps={max_steps}")

    steps = [r.success_step for r in results]
    curve = AsrCurve(per_step=_cumulative_curve(steps, max_steps), n_attacks=len(results))
    if true_labels is not None:
        by_class: dict[str, list[int | None]] = {}
        for label, s in zip(true_labels, steps):
            by_class.setdefault(label, []).append(s)
        for label in sorted(by_class):
            curve.per_class[label] = _cumulative_curve(by_class[label], max_steps)
            curve.n_attacks_per_class[label] = len(by_class[label])
    return curve


@dataclass(frozen=True)
class SsimSummary:
    mean: float
    min: float
    max: float
    fraction_at_least: float
    threshold: float

    def to_json(self) -> dict:
        return {
            "mean": self.mean,
            "min": self.min,
            "max": self.max,
            "fraction_at_least": self.fraction_at_least,
            "threshold": self.threshold,
        }


def ssim_summary(results: Sequence, threshold: float = 0.90) -> SsimSummary:
    """Summarize final SSIM values of a batch of attack results."""
    if not results:
        raise ValueError("results must be non-empty")
    values = np.asarray([r.final_ssim for r in results], dtype=np.float64)
    return SsimSummary(
        mean=float(values.mean()),
        min=float(values.min()),
        max=float(values.max()),
        fraction_at_least=float(np.mean(values >= threshold)),
        threshold=threshold,
    )
