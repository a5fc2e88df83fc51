"""Persistence of campaign artifacts: adversarial PNGs, perturbation maps,
the JSON-lines attack manifest, and the canonical report.

Adversarial images are written as lossless 8-bit PNG with round-half-even
quantization; JPEG would destroy perturbations below the 1/255 scale.
Re-running with an identical config overwrites every artifact with
identical bytes.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path

import numpy as np
from PIL import Image

from .campaign import AttackExecution, CampaignReport
from .ingest import load_image
from .models import DifferentiableClassifier

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
REPORT_NAME = "report.json"


def quantize_to_uint8(image: np.ndarray) -> np.ndarray:
    """Map a [0,1] float image to uint8 with round-half-even."""
    return np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)


def write_image_png(image_chw: np.ndarray, path: Path) -> None:
    """Atomically write a (3,H,W) [0,1] float image as 8-bit RGB PNG."""
    arr = quantize_to_uint8(image_chw).transpose(1, 2, 0)
    tmp = path.with_name(path.name + ".tmp")
    try:
        Image.fromarray(arr, mode="RGB").save(tmp, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def _artifact_stem(record_id: str, target: str) -> str:
    safe_id = record_id.replace("/", "_").replace("\\", "_")
    safe_target = target.replace("/", "_")
    return f"{safe_id}__to__{safe_target}"


def scale_perturbation(perturbation: np.ndarray) -> tuple[np.ndarray, float]:
    """Stretch a signed perturbation to full [0,1] range around mid-gray.

    Returns the visualization and the scale factor s = max|perturbation|;
    pixel value 0.5 + d/(2s) encodes a signed change d. A zero perturbation
    renders uniform mid-gray with scale 0.
    """
    scale = float(np.max(np.abs(perturbation)))
    if scale == 0.0:
        return np.full_like(perturbation, 0.5), 0.0
    return 0.5 + perturbation / (2.0 * scale), scale


def persist_artifacts(
    report: CampaignReport,
    executions: list[AttackExecution],
    out_dir: Path,
    model: DifferentiableClassifier | None = None,
) -> Path:
    """Write adversarial/perturbation PNGs, manifest.jsonl, and report.json.

    When a model is supplied, each written adversarial PNG is reloaded and
    re-classified; rows whose prediction does not survive 8-bit quantization
    get quantization_flipped=True. Returns the manifest path.
    """
    out_dir = Path(out_dir)
    adv_dir = out_dir / "adversarial"
    pert_dir = out_dir / "perturbations"
    adv_dir.mkdir(parents=True, exist_ok=True)
    pert_dir.mkdir(parents=True, exist_ok=True)

    for ex in executions:
        if ex.row.skipped or ex.result is None:
            continue
        stem = _artifact_stem(ex.record.id, ex.target_label)
        adv_path = adv_dir / f"{stem}.png"
        pert_path = pert_dir / f"{stem}.png"
        write_image_png(ex.result.adversarial, adv_path)
        vis, scale = scale_perturbation(ex.result.perturbation)
        write_image_png(vis, pert_path)
        ex.row.adversarial_path = adv_path.relative_to(out_dir).as_posix()
        ex.row.perturbation_path = pert_path.relative_to(out_dir).as_posix()
        ex.row.perturbation_scale = scale
        if model is not None:
            reloaded = load_image(adv_path, target_size=None)
            requantized_pred = model.label_set[model.classify(reloaded).predicted_index]
            ex.row.quantization_flipped = requantized_pred != ex.row.adv_pred
            if ex.row.quantization_flipped:
                log.warning(
                    "8-bit quantization flipped %s -> %s prediction: %s became %s",
                    ex.record.id,
                    ex.target_label,
                    ex.row.adv_pred,
                    requantized_pred,
                )

    manifest_path = out_dir / MANIFEST_NAME
    tmp = manifest_path.with_name(manifest_path.name + ".tmp")
    try:
        with tmp.open("w") as fh:
            for ex in executions:
                fh.write(json.dumps(ex.row.to_json(), sort_keys=True) + "\n")
        os.replace(tmp, manifest_path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise

    report_path = out_dir / REPORT_NAME
    tmp = report_path.with_name(report_path.name + ".tmp")
    try:
        tmp.write_text(report.to_canonical_json())
        os.replace(tmp, report_path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    return manifest_path
