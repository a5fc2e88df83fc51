"""Zero-shot vision-language adapter over pretrained CLIP-style checkpoints.

The adapter exposes the DifferentiableClassifier contract on raw [0,1]
channels-first images: resizing and mean/std normalization happen inside
the differentiated forward pass, so input gradients, the epsilon ball, and
SSIM all live in the same pixel domain. Text prompts are embedded once per
label set and cached.

torch and transformers are imported lazily; the rest of the package works
without them. Install the "pretrained" extra to use this module.
"""

from __future__ import annotations

import logging
import os
import threading
from typing import Callable, Sequence

import numpy as np

from .core import LabelSet, Prediction, require_valid_image
from .models import DEFAULT_PROMPT_TEMPLATE, DEFAULT_TEMPERATURE, DifferentiableClassifier, build_prompts

log = logging.getLogger(__name__)

WEIGHTS_CACHE_ENV = "HISTOADV_WEIGHTS_CACHE"


def _require_torch():
    try:
        import torch
    except ImportError as exc:
        raise ImportError(
            "pretrained adapters need torch; install histoadv[pretrained]"
        ) from exc
    return torch


class TorchZeroShotClassifier(DifferentiableClassifier):
    """Zero-shot head over injected torch image/text encoders.

    encode_image must be differentiable w.r.t. its (1,3,H,W) input in
    [0,1] and return (1,d) embeddings; encode_text maps a list of prompts
    to a (K,d) tensor. Prompt embeddings are computed lazily, exactly once
    per instance (guarded by a lock), and reused for every classification.
    Declared exclusive: callers serialize concurrent use.
    """

    concurrent_safe = False

    def __init__(
        self,
        labels: LabelSet,
        encode_image: Callable,
        encode_text: Callable,
        temperature: float = DEFAULT_TEMPERATURE,
        prompt_template: str = DEFAULT_PROMPT_TEMPLATE,
        prompt_phrases: Sequence[str] | None = None,
        device: str = "cpu",
    ):
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        if prompt_phrases is not None and len(prompt_phrases) != len(labels):
            raise ValueError("prompt_phrases must align one-to-one with labels")
        self._labels = labels
        self._encode_image = encode_image
        self._encode_text = encode_text
        self.temperature = float(temperature)
        self.device = device
        self.prompts = build_prompts(
            list(prompt_phrases) if prompt_phrases else labels, prompt_template
        )
        self._text_matrix = None
        self._text_lock = threading.Lock()
        self.text_encoding_runs = 0

    @property
    def label_set(self) -> LabelSet:
        return self._labels

    def _text_embeddings(self):
        torch = _require_torch()
        with self._text_lock:
            if self._text_matrix is None:
                with torch.no_grad():
                    rows = self._encode_text(self.prompts)
                rows = rows.detach().to(self.device, dtype=torch.float32)
                if rows.ndim != 2 or rows.shape[0] != len(self._labels):
                    raise ValueError(
                        f"text encoder returned shape {tuple(rows.shape)}, "
                        f"expected ({len(self._labels)}, d)"
                    )
                self._text_matrix = rows / rows.norm(dim=-1, keepdim=True)
                self.text_encoding_runs += 1
        return self._text_matrix

    def _to_batch(self, image: np.ndarray):
        torch = _require_torch()
        require_valid_image(image)
        return torch.from_numpy(np.ascontiguousarray(image)).to(
            self.device, dtype=torch.float32
        ).unsqueeze(0)

    def _logits(self, batch):
        emb = self._encode_image(batch)
        if emb.ndim != 2 or emb.shape[0] != 1:
            raise ValueError(f"image encoder returned shape {tuple(emb.shape)}, expected (1, d)")
        text = self._text_embeddings()
        if emb.shape[1] != text.shape[1]:
            raise ValueError(
                f"embedding dimension mismatch: image {emb.shape[1]} vs text {text.shape[1]}"
            )
        emb = emb / emb.norm(dim=-1, keepdim=True)
        return self.temperature * (emb @ text.t()).squeeze(0)

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        """Raw (unnormalized) image embedding; handy for cache/regression checks."""
        torch = _require_torch()
        with torch.no_grad():
            emb = self._encode_image(self._to_batch(image))
        return emb.squeeze(0).detach().cpu().numpy().astype(np.float64)

    def classify(self, image: np.ndarray) -> Prediction:
        torch = _require_torch()
        with torch.no_grad():
            logits = self._logits(self._to_batch(image))
        return Prediction.from_logits(logits.detach().cpu().numpy().astype(np.float64))

    def input_gradient(self, image: np.ndarray, target_index: int) -> np.ndarray:
        torch = _require_torch()
        if not 0 <= target_index < len(self._labels):
            raise IndexError(f"target index {target_index} outside [0, {len(self._labels)})")
        batch = self._to_batch(image).requires_grad_(True)
        logits = self._logits(batch).unsqueeze(0)
        target = torch.tensor([target_index], device=logits.device)
        loss = torch.nn.functional.cross_entropy(logits, target)
        (grad,) = torch.autograd.grad(loss, batch)
        return grad.squeeze(0).detach().cpu().numpy().astype(np.float64)


def resolve_device(preference: str = "auto") -> str:
    torch = _require_torch()
    if preference == "auto":
        return "cuda" if torch.cuda.is_available() else "cpu"
    return preference


def load_pretrained_adapter(
    locator: str,
    labels: LabelSet,
    device: str = "auto",
    cache_dir: str | None = None,
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE,
    prompt_phrases: Sequence[str] | None = None,
    temperature: float | None = None,
) -> TorchZeroShotClassifier:
    """Load a CLIP-style checkpoint (local path or hub id) as a classifier.

    The checkpoint's own preprocessing (resize to the trained resolution,
    mean/std normalization) is applied inside the differentiated forward.
    temperature defaults to the checkpoint's exp(logit_scale), falling back
    to 100.0 when absent. The weights cache directory can also be set via
    the HISTOADV_WEIGHTS_CACHE environment variable.
    """
    torch = _require_torch()
    try:
        from transformers import CLIPModel, CLIPProcessor
    except ImportError as exc:
        raise ImportError(
            "pretrained adapters need transformers; install histoadv[pretrained]"
        ) from exc

    cache_dir = cache_dir or os.environ.get(WEIGHTS_CACHE_ENV)
    dev = resolve_device(device)
    try:
        model = CLIPModel.from_pretrained(locator, cache_dir=cache_dir)
        processor = CLIPProcessor.from_pretrained(locator, cache_dir=cache_dir)
    except Exception as exc:
        raise RuntimeError(f"failed to load checkpoint {locator!r}: {exc}") from exc
    model.eval().to(dev)
    for p in model.parameters():
        p.requires_grad_(False)

    image_processor = processor.image_processor
    crop = getattr(image_processor, "crop_size", None) or image_processor.size
    side = crop["height"] if isinstance(crop, dict) else int(crop)
    mean = torch.tensor(image_processor.image_mean, device=dev).view(1, 3, 1, 1)
    std = torch.tensor(image_processor.image_std, device=dev).view(1, 3, 1, 1)

    def encode_image(batch):
        if batch.shape[-2:] != (side, side):
            batch = torch.nn.functional.interpolate(
                batch, size=(side, side), mode="bicubic", align_corners=False
            )
        return model.get_image_features(pixel_values=(batch - mean) / std)

    def encode_text(prompts):
        tokens = processor.tokenizer(
            prompts, padding=True, truncation=True, return_tensors="pt"
        ).to(dev)
        return model.get_text_features(**tokens)

    if temperature is None:
        scale = getattr(model, "logit_scale", None)
        temperature = float(scale.exp().item()) if scale is not None else DEFAULT_TEMPERATURE
        log.info("using checkpoint temperature %.3f", temperature)

    return TorchZeroShotClassifier(
        labels=labels,
        encode_image=encode_image,
        encode_text=encode_text,
        temperature=temperature,
        prompt_template=prompt_template,
        prompt_phrases=prompt_phrases,
        device=dev,
    )
