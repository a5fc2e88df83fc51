"""histoadv: targeted PGD attack harness for zero-shot histopathology classifiers."""

__version__ = "0.1.0"

from .core import (
    DatasetRecord,
    HistoadvError,
    LabelSet,
    Prediction,
    derive_seed,
    softmax,
    validate_image,
)
from .metrics import (
    AsrCurve,
    SsimParams,
    SsimSummary,
    asr_per_step,
    gaussian_window,
    l2_distance,
    linf_distance,
    ssim,
    ssim_summary,
)
from .models import (
    DEFAULT_PROMPT_TEMPLATE,
    DEFAULT_TEMPERATURE,
    DifferentiableClassifier,
    ToyLinearClassifier,
    ZeroShotHead,
    build_prompts,
    make_toy_classifier,
    zero_shot_logits,
)
from .attack import (
    AttackResult,
    AttackSpec,
    GradientFailure,
    StepRecord,
    pgd_step,
    project_linf,
    run_pgd,
)
from .ingest import (
    KATHER_LABEL_PHRASES,
    DatasetManifest,
    dataset_stats,
    label_phrase,
    load_image,
    sample_per_class,
    scan_dataset,
)
from .campaign import (
    AttackExecution,
    AttackRow,
    CampaignConfig,
    CampaignOutcome,
    CampaignReport,
    TargetStrategy,
    build_model,
    resolve_target,
    run_campaign,
)
from .artifacts import persist_artifacts, quantize_to_uint8, scale_perturbation, write_image_png
from .reporting import render_dataset_chart, render_report

__all__ = [
    "__version__",
    "AsrCurve",
    "AttackExecution",
    "AttackResult",
    "AttackRow",
    "AttackSpec",
    "CampaignConfig",
    "CampaignOutcome",
    "CampaignReport",
    "DatasetManifest",
    "DatasetRecord",
    "DEFAULT_PROMPT_TEMPLATE",
    "DEFAULT_TEMPERATURE",
    "DifferentiableClassifier",
    "GradientFailure",
    "HistoadvError",
    "KATHER_LABEL_PHRASES",
    "LabelSet",
    "Prediction",
    "SsimParams",
    "SsimSummary",
    "StepRecord",
    "TargetStrategy",
    "ToyLinearClassifier",
    "ZeroShotHead",
    "asr_per_step",
    "build_model",
    "build_prompts",
    "dataset_stats",
    "derive_seed",
    "gaussian_window",
    "l2_distance",
    "label_phrase",
    "linf_distance",
    "load_image",
    "make_toy_classifier",
    "persist_artifacts",
    "pgd_step",
    "project_linf",
    "quantize_to_uint8",
    "render_dataset_chart",
    "render_report",
    "resolve_target",
    "run_campaign",
    "run_pgd",
    "sample_per_class",
    "scale_perturbation",
    "scan_dataset",
    "softmax",
    "ssim",
    "ssim_summary",
    "validate_image",
    "write_image_png",
    "zero_shot_logits",
]
