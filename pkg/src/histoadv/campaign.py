"""Campaign orchestration: attack a sampled dataset and aggregate the report.

A campaign runs clean classification, targeted PGD, and re-classification
for every (sampled image, target label) pair, then aggregates cumulative
ASR curves, pre/post prediction count matrices, and SSIM statistics. Per-
item seeds derive from the global seed and the record id, so results are
byte-identical regardless of worker count or scheduling.
"""

from __future__ import annotations

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import __version__
from .attack import AttackResult, AttackSpec, run_pgd
from .core import DatasetRecord, LabelSet, derive_seed
from .ingest import DatasetManifest, label_phrase, load_image, sample_per_class, scan_dataset
from .metrics import AsrCurve, SsimParams, SsimSummary, asr_per_step, l2_distance, linf_distance, ssim_summary
from .models import DEFAULT_PROMPT_TEMPLATE, DifferentiableClassifier, make_toy_classifier

log = logging.getLogger(__name__)

STRATEGY_KINDS = ("next_class", "fixed_map", "all_pairs")


@dataclass(frozen=True)
class TargetStrategy:
    """How to pick adversarial target labels for each true label."""

    kind: str = "next_class"
    fixed_map: Mapping[str, str] | None = None

    def __post_init__(self) -> None:
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"strategy kind must be one of {STRATEGY_KINDS}, got {self.kind!r}")
        if self.kind == "fixed_map" and not self.fixed_map:
            raise ValueError("fixed_map strategy requires a mapping")

    def validate_against(self, labels: LabelSet) -> None:
        if self.kind != "fixed_map":
            return
        assert self.fixed_map is not None
        for label in labels:
            target = self.fixed_map.get(label)
            if target is None:
                raise ValueError(f"fixed_map is missing an entry for label {label!r}")
            if target == label:
                raise ValueError(f"fixed_map maps {label!r} to itself")
            if target not in labels:
                raise ValueError(f"fixed_map target {target!r} not in label set")


def resolve_target(strategy: TargetStrategy, true_label: str, labels: LabelSet) -> list[str]:
    """Targets for one true label: one for next_class/fixed_map, K-1 for all_pairs."""
    if true_label not in labels:
        raise KeyError(f"true label {true_label!r} not in label set")
    if strategy.kind == "next_class":
        return [labels[(labels.index(true_label) + 1) % len(labels)]]
    if strategy.kind == "fixed_map":
        strategy.validate_against(labels)
        assert strategy.fixed_map is not None
        return [strategy.fixed_map[true_label]]
    return [label for label in labels if label != true_label]


@dataclass
class CampaignConfig:
    """Everything needed to reproduce a campaign run."""

    dataset_root: Path
    output_dir: Path
    model: str = "toy"  # "toy" or "pretrained:<checkpoint locator>"
    per_class_samples: int = 5
    image_size: tuple[int, int] = (224, 224)
    epsilon: float = 8 / 255
    alpha: float = 2 / 255
    max_steps: int = 10
    random_start: bool = False
    stop_on_success: bool = False
    strategy: TargetStrategy = field(default_factory=TargetStrategy)
    ssim_params: SsimParams = field(default_factory=SsimParams)
    global_seed: int = 0
    workers: int = 1
    min_ssim_report_threshold: float = 0.90
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE
    device: str = "auto"
    use_label_phrases: bool = True

    def __post_init__(self) -> None:
        self.dataset_root = Path(self.dataset_root)
        self.output_dir = Path(self.output_dir)
        if self.per_class_samples < 1:
            raise ValueError("per_class_samples must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def echo(self) -> dict:
        """Config echo for the canonical report.

        Execution-only knobs (workers, device) are omitted: they must not
        change results, and the report is required to be byte-identical
        across worker counts.
        """
        return {
            "dataset_root": str(self.dataset_root),
            "output_dir": str(self.output_dir),
            "model": self.model,
            "per_class_samples": self.per_class_samples,
            "image_size": list(self.image_size),
            "epsilon": self.epsilon,
            "alpha": self.alpha,
            "max_steps": self.max_steps,
            "random_start": self.random_start,
            "stop_on_success": self.stop_on_success,
            "strategy": {"kind": self.strategy.kind, "fixed_map": dict(self.strategy.fixed_map) if self.strategy.fixed_map else None},
            "ssim": {
                "window_size": self.ssim_params.window_size,
                "gaussian_sigma": self.ssim_params.gaussian_sigma,
                "k1": self.ssim_params.k1,
                "k2": self.ssim_params.k2,
                "dynamic_range": self.ssim_params.dynamic_range,
            },
            "min_ssim_report_threshold": self.min_ssim_report_threshold,
            "prompt_template": self.prompt_template,
            "use_label_phrases": self.use_label_phrases,
        }


@dataclass
class AttackRow:
    """One manifest line: a single attack (or a skipped work item)."""

    id: str
    true_label: str
    target_label: str
    clean_pred: str | None = None
    adv_pred: str | None = None
    success: bool = False
    success_step: int | None = None
    final_ssim: float | None = None
    linf: float | None = None
    l2: float | None = None
    skipped: bool = False
    skip_reason: str | None = None
    adversarial_path: str | None = None
    perturbation_path: str | None = None
    perturbation_scale: float | None = None
    quantization_flipped: bool | None = None

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "true_label": self.true_label,
            "target_label": self.target_label,
            "clean_pred": self.clean_pred,
            "adv_pred": self.adv_pred,
            "success": self.success,
            "success_step": self.success_step,
            "final_ssim": self.final_ssim,
            "linf": self.linf,
            "l2": self.l2,
            "skipped": self.skipped,
            "skip_reason": self.skip_reason,
            "adversarial_path": self.adversarial_path,
            "perturbation_path": self.perturbation_path,
            "perturbation_scale": self.perturbation_scale,
            "quantization_flipped": self.quantization_flipped,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "AttackRow":
        return cls(**{k: obj[k] for k in cls.__dataclass_fields__ if k in obj})


@dataclass
class AttackExecution:
    """Pairs a manifest row with the in-memory attack result it came from."""

    record: DatasetRecord
    target_label: str
    row: AttackRow
    result: AttackResult | None = None


@dataclass
class CampaignReport:
    """Aggregated campaign outcome, serializable to canonical JSON."""

    labels: LabelSet
    max_steps: int
    asr: AsrCurve
    pre_matrix: np.ndarray
    post_matrix: np.ndarray
    ssim_stats: SsimSummary
    rows: list[AttackRow]
    config: dict
    seed: int
    version: str = __version__

    def to_json(self) -> dict:
        return {
            "labels": self.labels.to_list(),
            "max_steps": self.max_steps,
            "asr": self.asr.to_json(),
            "pre_matrix": self.pre_matrix.astype(int).tolist(),
            "post_matrix": self.post_matrix.astype(int).tolist(),
            "ssim_stats": self.ssim_stats.to_json(),
            "rows": [row.to_json() for row in self.rows],
            "config": self.config,
            "seed": self.seed,
            "version": self.version,
        }

    def to_canonical_json(self) -> str:
        # Sorted keys and no timestamps make the serialization reproducible.
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, obj: Mapping) -> "CampaignReport":
        return cls(
            labels=LabelSet.from_list(obj["labels"]),
            max_steps=int(obj["max_steps"]),
            asr=AsrCurve.from_json(obj["asr"]),
            pre_matrix=np.asarray(obj["pre_matrix"], dtype=np.int64),
            post_matrix=np.asarray(obj["post_matrix"], dtype=np.int64),
            ssim_stats=SsimSummary(**obj["ssim_stats"]),
            rows=[AttackRow.from_json(r) for r in obj["rows"]],
            config=dict(obj["config"]),
            seed=int(obj["seed"]),
            version=str(obj["version"]),
        )

    @classmethod
    def load(cls, path: Path) -> "CampaignReport":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class CampaignOutcome:
    report: CampaignReport
    executions: list[AttackExecution]
    manifest: DatasetManifest
    sampled: list[DatasetRecord]
    model: DifferentiableClassifier | None = None


class _SerializedModel(DifferentiableClassifier):
    """Wraps a model that declared itself exclusive with a call lock."""

    def __init__(self, inner: DifferentiableClassifier):
        self._inner = inner
        self._lock = threading.Lock()
        self.concurrent_safe = True

    @property
    def label_set(self) -> LabelSet:
        return self._inner.label_set

    def classify(self, image):
        with self._lock:
            return self._inner.classify(image)

    def input_gradient(self, image, target_index):
        with self._lock:
            return self._inner.input_gradient(image, target_index)


def build_model(config: CampaignConfig, labels: LabelSet) -> DifferentiableClassifier:
    """Instantiate the configured classifier for a campaign's label set."""
    if config.model == "toy":
        return make_toy_classifier(
            seed=derive_seed(config.global_seed, "toy-model"),
            label_count=len(labels),
            image_shape=(3, config.image_size[0], config.image_size[1]),
            labels=labels,
        )
    if config.model.startswith("pretrained:"):
        from .pretrained import load_pretrained_adapter

        locator = config.model.split(":", 1)[1]
        phrases = [label_phrase(l) for l in labels] if config.use_label_phrases else None
        return load_pretrained_adapter(
            locator,
            labels=labels,
            device=config.device,
            prompt_template=config.prompt_template,
            prompt_phrases=phrases,
        )
    raise ValueError(f"unknown model selector {config.model!r} (use 'toy' or 'pretrained:LOC')")


def _attack_one(
    model: DifferentiableClassifier,
    config: CampaignConfig,
    record: DatasetRecord,
    target: str,
) -> AttackExecution:
    labels = model.label_set
    row = AttackRow(id=record.id, true_label=record.true_label, target_label=target)
    try:
        image = load_image(record.path, config.image_size)
        clean = model.classify(image)
        spec = AttackSpec(
            epsilon=config.epsilon,
            alpha=config.alpha,
            max_steps=config.max_steps,
            targeted=True,
            target_label=target,
            random_start=config.random_start,
            stop_on_success=config.stop_on_success,
            seed=derive_seed(config.global_seed, f"{record.id}::{target}"),
        )
        result = run_pgd(model, image, record.true_label, spec, config.ssim_params)
        adv = model.classify(result.adversarial)
        row.clean_pred = labels[clean.predicted_index]
        row.adv_pred = labels[adv.predicted_index]
        row.success = result.success
        row.success_step = result.success_step
        row.final_ssim = result.final_ssim
        row.linf = linf_distance(result.adversarial, result.original)
        row.l2 = l2_distance(result.adversarial, result.original)
        return AttackExecution(record=record, target_label=target, row=row, result=result)
    except Exception as exc:  # skip, never abort the campaign
        log.warning("skipping %s -> %s: %s", record.id, target, exc)
        row.skipped = True
        row.skip_reason = str(exc)
        return AttackExecution(record=record, target_label=target, row=row, result=None)


def run_campaign(
    config: CampaignConfig, model: DifferentiableClassifier | None = None
) -> CampaignOutcome:
    """Attack every sampled record toward its strategy targets and aggregate.

    Per-image failures become skipped rows; the campaign only raises when
    the dataset or model cannot be set up at all. Passing a model skips
    construction (used by tests and by callers that already hold one).
    """
    manifest = scan_dataset(config.dataset_root)
    labels = manifest.label_set
    config.strategy.validate_against(labels)
    if model is None:
        model = build_model(config, labels)
    if model.label_set.to_list() != labels.to_list():
        raise ValueError(
            f"model labels {model.label_set.to_list()} do not match dataset labels {labels.to_list()}"
        )
    if not model.concurrent_safe and config.workers > 1:
        model = _SerializedModel(model)

    sampled = sample_per_class(manifest, config.per_class_samples, config.global_seed)
    items = [
        (record, target)
        for record in sampled
        for target in resolve_target(config.strategy, record.true_label, labels)
    ]
    if not items:
        raise ValueError("no attackable records after sampling")

    if config.workers == 1:
        executions = [_attack_one(model, config, rec, tgt) for rec, tgt in items]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            executions = list(
                pool.map(lambda it: _attack_one(model, config, it[0], it[1]), items)
            )
    executions.sort(key=lambda ex: (ex.record.id, ex.target_label))

    report = _aggregate(config, labels, executions)
    return CampaignOutcome(
        report=report, executions=executions, manifest=manifest, sampled=sampled, model=model
    )


def _aggregate(
    config: CampaignConfig, labels: LabelSet, executions: list[AttackExecution]
) -> CampaignReport:
    k = len(labels)
    pre = np.zeros((k, k), dtype=np.int64)
    post = np.zeros((k, k), dtype=np.int64)
    attacked = [ex for ex in executions if not ex.row.skipped]
    if not attacked:
        raise ValueError("every sampled record was skipped; nothing to aggregate")
    for ex in attacked:
        i = labels.index(ex.row.true_label)
        pre[i, labels.index(ex.row.clean_pred)] += 1
        post[i, labels.index(ex.row.adv_pred)] += 1
    results = [ex.result for ex in attacked]
    true_labels = [ex.row.true_label for ex in attacked]
    return CampaignReport(
        labels=labels,
        max_steps=config.max_steps,
        asr=asr_per_step(results, config.max_steps, true_labels),
        pre_matrix=pre,
        post_matrix=post,
        ssim_stats=ssim_summary(results, config.min_ssim_report_threshold),
        rows=[ex.row for ex in executions],
        config=config.echo(),
        seed=config.global_seed,
    )
