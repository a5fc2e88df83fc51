"""Targeted and untargeted Projected Gradient Descent in the L-infinity ball.

Each iteration takes a signed gradient step, projects the perturbation back
into the epsilon ball, and clamps the iterate to the [0,1] pixel range. The
attack optimizes cross-entropy only; SSIM against the original is recorded
per step as a monitored quantity, never added to the loss.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import HistoadvError, require_valid_image
from .metrics import SsimParams, ssim
from .models import DifferentiableClassifier

log = logging.getLogger(__name__)

StepCallback = Callable[[int, np.ndarray], None]


class GradientFailure(HistoadvError):
    """Raised when a gradient turns non-finite mid-attack; carries the partial trace."""

    def __init__(self, message: str, step: int, partial_trace: Sequence["StepRecord"]):
        super().__init__(message)
        self.step = step
        self.partial_trace = list(partial_trace)


@dataclass(frozen=True)
class AttackSpec:
    """PGD hyperparameters; epsilon and alpha are in [0,1] pixel units."""

    epsilon: float = 8 / 255
    alpha: float = 2 / 255
    max_steps: int = 10
    targeted: bool = True
    target_label: str | None = None
    random_start: bool = False
    stop_on_success: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.epsilon == 0:
            log.warning("epsilon is 0: the attack degenerates to re-classifying the original")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.epsilon > 0 and self.alpha > 2 * self.epsilon:
            log.warning(
                "alpha=%g exceeds 2*epsilon=%g; steps will bounce across the ball",
                self.alpha,
                2 * self.epsilon,
            )
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.targeted and not self.target_label:
            raise ValueError("targeted attacks require a target_label")


@dataclass(frozen=True)
class StepRecord:
    """Bookkeeping for one PGD iteration, evaluated at the new iterate."""

    step: int
    loss: float
    predicted_label: str
    target_probability: float
    ssim_to_original: float


@dataclass
class AttackResult:
    """Full outcome of one attack: tensors, per-step trace, success marker."""

    original: np.ndarray
    adversarial: np.ndarray
    perturbation: np.ndarray
    trace: list[StepRecord] = field(default_factory=list)
    success: bool = False
    success_step: int | None = None
    final_ssim: float = float("nan")


def project_linf(delta: np.ndarray, epsilon: float) -> np.ndarray:
    """Clamp a perturbation elementwise into [-epsilon, +epsilon]."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    return np.clip(delta, -epsilon, epsilon)


def pgd_step(
    x_adv: np.ndarray, x_orig: np.ndarray, grad: np.ndarray, spec: AttackSpec
) -> np.ndarray:
    """One signed-gradient update followed by ball projection and range clamp.

    Targeted attacks descend the loss (x - alpha*sign(grad)); untargeted
    attacks ascend. np.sign maps 0 to 0, so zero-gradient coordinates stay
    put apart from the projection itself.
    """
    if x_adv.shape != x_orig.shape or grad.shape != x_orig.shape:
        raise ValueError("x_adv, x_orig, and grad must share one shape")
    direction = -1.0 if spec.targeted else 1.0
    stepped = x_adv + direction * spec.alpha * np.sign(grad)
    delta = project_linf(stepped - x_orig, spec.epsilon)
    return np.clip(x_orig + delta, 0.0, 1.0)


def _goal_reached(predicted: str, true_label: str, target_label: str | None, targeted: bool) -> bool:
    return predicted == target_label if targeted else predicted != true_label


def run_pgd(
    model: DifferentiableClassifier,
    image: np.ndarray,
    true_label: str,
    spec: AttackSpec,
    ssim_params: SsimParams | None = None,
    step_callback: StepCallback | None = None,
) -> AttackResult:
    """Run PGD against one image and record the full per-step trace.

    The loss is cross-entropy toward the target (targeted) or the negated
    cross-entropy of the true label (untargeted); either way PGD drives it
    down. Every step records the model's prediction, the loss, the goal
    class probability (target class when targeted, true class otherwise),
    and SSIM versus the original. With random_start the initial offset is
    uniform in [-eps, eps] drawn from spec.seed; with stop_on_success the
    loop halts at the first successful step, which remains in the trace.

    The SSIM window is shrunk when the image is smaller than it (small
    images are a test-scale concern; at the canonical 224x224 size the
    window is used as given). step_callback, when given, sees every iterate.
    """
    require_valid_image(image)
    labels = model.label_set
    if true_label not in labels:
        raise KeyError(f"true label {true_label!r} not in model labels {labels.to_list()}")
    if spec.targeted:
        if spec.target_label not in labels:
            raise KeyError(
                f"target label {spec.target_label!r} not in model labels {labels.to_list()}"
            )
        if spec.target_label == true_label:
            raise ValueError(f"target label equals true label {true_label!r}")
        goal_index = labels.index(spec.target_label)
    else:
        goal_index = labels.index(true_label)
    sp = (ssim_params or SsimParams()).fitted_to(image.shape[1], image.shape[2])

    original = np.array(image, dtype=np.float64, copy=True)
    x = original.copy()
    if spec.random_start and spec.epsilon > 0:
        rng = np.random.default_rng(spec.seed)
        x = np.clip(
            original + rng.uniform(-spec.epsilon, spec.epsilon, size=original.shape), 0.0, 1.0
        )

    trace: list[StepRecord] = []
    success_step: int | None = None
    for step in range(1, spec.max_steps + 1):
        grad = model.input_gradient(x, goal_index)
        if not np.isfinite(grad).all():
            raise GradientFailure(f"non-finite gradient at step {step}", step, trace)
        x = pgd_step(x, original, grad, spec)
        if step_callback is not None:
            step_callback(step, x)

        pred = model.classify(x)
        predicted_label = labels[pred.predicted_index]
        goal_prob = float(pred.probabilities[goal_index])
        ce = -float(np.log(max(goal_prob, 1e-300)))
        loss = ce if spec.targeted else -ce
        trace.append(
            StepRecord(
                step=step,
                loss=loss,
                predicted_label=predicted_label,
                target_probability=goal_prob,
                ssim_to_original=ssim(x, original, sp),
            )
        )
        if success_step is None and _goal_reached(
            predicted_label, true_label, spec.target_label, spec.targeted
        ):
            success_step = step
        if success_step is not None and spec.stop_on_success:
            break

    return AttackResult(
        original=original,
        adversarial=x,
        perturbation=x - original,
        trace=trace,
        success=success_step is not None,
        success_step=success_step,
        final_ssim=trace[-1].ssim_to_original,
    )
