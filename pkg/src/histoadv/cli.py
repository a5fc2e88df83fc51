"""Command-line interface: attack, campaign, stats, render.

Campaign configuration is a JSON document validated against a flat schema
of dotted-path keys; ``--set key=value`` overrides individual entries.
Machine output goes to files, human-readable summaries to stdout, and
diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import secrets
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from .artifacts import persist_artifacts, scale_perturbation, write_image_png
from .attack import AttackSpec, run_pgd
from .campaign import (
    AttackRow,
    CampaignConfig,
    CampaignReport,
    TargetStrategy,
    run_campaign,
)
from .core import LabelSet
from .ingest import KATHER_LABEL_PHRASES, dataset_stats, label_phrase, load_image, scan_dataset
from .metrics import SsimParams, l2_distance, linf_distance
from .models import DEFAULT_PROMPT_TEMPLATE, make_toy_classifier
from .reporting import render_dataset_chart, render_report

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class CliError(Exception):
    def __init__(self, message: str, exit_code: int = EXIT_USAGE):
        super().__init__(message)
        self.exit_code = exit_code


@dataclass(frozen=True)
class ConfigKey:
    default: Any
    type: str
    help: str
    required: bool = False


# Single source of truth for campaign configuration: the file format, the
# --set overrides, and the --help listing all derive from this mapping.
CONFIG_SCHEMA: dict[str, ConfigKey] = {
    "dataset.root": ConfigKey(None, "str", "dataset directory, one subfolder per class", required=True),
    "dataset.per_class_samples": ConfigKey(5, "int", "images sampled per class"),
    "dataset.image_height": ConfigKey(224, "int", "height images are resized to"),
    "dataset.image_width": ConfigKey(224, "int", "width images are resized to"),
    "output.dir": ConfigKey(None, "str", "directory for artifacts, manifest, report, plots", required=True),
    "model.name": ConfigKey("toy", "str", "'toy' or 'pretrained:<checkpoint locator>'"),
    "model.device": ConfigKey("auto", "str", "device preference for pretrained models (auto|cpu|cuda)"),
    "model.prompt_template": ConfigKey(DEFAULT_PROMPT_TEMPLATE, "str", "zero-shot prompt template with one {} slot"),
    "model.use_label_phrases": ConfigKey(True, "bool", "map folder codes to readable phrases in prompts"),
    "attack.epsilon": ConfigKey(8 / 255, "float", "L-infinity radius in [0,1] pixel units"),
    "attack.alpha": ConfigKey(2 / 255, "float", "PGD step size in [0,1] pixel units"),
    "attack.max_steps": ConfigKey(10, "int", "number of PGD iterations"),
    "attack.random_start": ConfigKey(False, "bool", "start from a uniform point inside the ball"),
    "attack.stop_on_success": ConfigKey(False, "bool", "halt each attack at the first successful step"),
    "target.kind": ConfigKey("next_class", "str", "target strategy: next_class | fixed_map | all_pairs"),
    "target.fixed_map": ConfigKey(None, "object", "true-label to target-label map (fixed_map strategy)"),
    "ssim.window_size": ConfigKey(11, "int", "odd Gaussian window size"),
    "ssim.gaussian_sigma": ConfigKey(1.5, "float", "Gaussian window sigma"),
    "ssim.k1": ConfigKey(0.01, "float", "SSIM stability constant k1"),
    "ssim.k2": ConfigKey(0.03, "float", "SSIM stability constant k2"),
    "ssim.dynamic_range": ConfigKey(1.0, "float", "pixel dynamic range L"),
    "report.min_ssim_threshold": ConfigKey(0.90, "float", "threshold for the reported SSIM fraction"),
    "seed": ConfigKey(None, "int", "global seed; generated and printed when omitted"),
    "workers": ConfigKey(1, "int", "worker threads (never changes results)"),
}

DEFAULT_LABELS = LabelSet.from_list(sorted(KATHER_LABEL_PHRASES))


def config_help_text() -> str:
    lines = ["campaign config keys (JSON file, overridable with --set KEY=VALUE):"]
    for key, meta in CONFIG_SCHEMA.items():
        default = "required" if meta.required else f"default={json.dumps(meta.default)}"
        lines.append(f"  {key} ({meta.type}, {default}): {meta.help}")
    return "\n".join(lines)


def _flatten(obj: dict, prefix: str = "") -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for key, value in obj.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict) and dotted not in CONFIG_SCHEMA:
            flat.update(_flatten(value, f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise CliError(f"override {text!r} must look like KEY=VALUE")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_campaign_config(path: Path, overrides: Sequence[str] = ()) -> tuple[CampaignConfig, int | None]:
    """Parse, validate, and materialize a campaign config.

    Returns the config plus the freshly generated seed when the document
    omitted one (None otherwise); callers print it so the run stays
    reproducible after the fact.
    """
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise CliError("config file must hold a JSON object")

    flat = _flatten(raw)
    for key in flat:
        if key not in CONFIG_SCHEMA:
            raise CliError(f"unknown config key: {key!r}")
    for item in overrides:
        key, value = parse_override(item)
        if key not in CONFIG_SCHEMA:
            raise CliError(f"unknown config key in --set: {key!r}")
        flat[key] = value

    values = {key: meta.default for key, meta in CONFIG_SCHEMA.items()}
    values.update(flat)
    for key, meta in CONFIG_SCHEMA.items():
        if meta.required and values[key] is None:
            raise CliError(f"missing required config key: {key!r}")

    generated_seed: int | None = None
    if values["seed"] is None:
        generated_seed = secrets.randbits(63)
        values["seed"] = generated_seed

    strategy = TargetStrategy(kind=values["target.kind"], fixed_map=values["target.fixed_map"])
    try:
        config = CampaignConfig(
            dataset_root=Path(values["dataset.root"]),
            output_dir=Path(values["output.dir"]),
            model=values["model.name"],
            per_class_samples=int(values["dataset.per_class_samples"]),
            image_size=(int(values["dataset.image_height"]), int(values["dataset.image_width"])),
            epsilon=float(values["attack.epsilon"]),
            alpha=float(values["attack.alpha"]),
            max_steps=int(values["attack.max_steps"]),
            random_start=bool(values["attack.random_start"]),
            stop_on_success=bool(values["attack.stop_on_success"]),
            strategy=strategy,
            ssim_params=SsimParams(
                window_size=int(values["ssim.window_size"]),
                gaussian_sigma=float(values["ssim.gaussian_sigma"]),
                k1=float(values["ssim.k1"]),
                k2=float(values["ssim.k2"]),
                dynamic_range=float(values["ssim.dynamic_range"]),
            ),
            global_seed=int(values["seed"]),
            workers=int(values["workers"]),
            min_ssim_report_threshold=float(values["report.min_ssim_threshold"]),
            prompt_template=values["model.prompt_template"],
            device=values["model.device"],
            use_label_phrases=bool(values["model.use_label_phrases"]),
        )
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid config value: {exc}")
    return config, generated_seed


def _build_single_image_model(name: str, labels: LabelSet, image_shape, seed: int):
    if name == "toy":
        return make_toy_classifier(seed, len(labels), image_shape, labels=labels)
    if name.startswith("pretrained:"):
        from .pretrained import load_pretrained_adapter

        return load_pretrained_adapter(
            name.split(":", 1)[1],
            labels=labels,
            prompt_phrases=[label_phrase(l) for l in labels],
        )
    raise CliError(f"unknown model {name!r} (use 'toy' or 'pretrained:LOC')")


def cmd_attack(args: argparse.Namespace) -> int:
    labels = (
        LabelSet.from_list([s.strip() for s in args.labels.split(",")])
        if args.labels
        else DEFAULT_LABELS
    )
    if args.target not in labels:
        raise CliError(f"target {args.target!r} not in label set {labels.to_list()}")
    if args.eps == 0:
        print("warning: epsilon is 0, the adversarial image will equal the original", file=sys.stderr)

    seed = args.seed
    if seed is None:
        seed = secrets.randbits(63)
        print(f"generated seed: {seed}")

    try:
        image = load_image(Path(args.image), target_size=None)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_RUNTIME)
    model = _build_single_image_model(args.model, labels, image.shape, seed)

    clean = model.classify(image)
    clean_label = labels[clean.predicted_index]
    true_label = args.true_label or clean_label
    if true_label not in labels:
        raise CliError(f"true label {true_label!r} not in label set {labels.to_list()}")
    if true_label == args.target:
        raise CliError(
            f"target {args.target!r} equals the image's current label; nothing to attack"
        )

    spec = AttackSpec(
        epsilon=args.eps,
        alpha=args.alpha,
        max_steps=args.steps,
        targeted=True,
        target_label=args.target,
        seed=seed,
    )
    result = run_pgd(model, image, true_label, spec)
    adv_label = labels[model.classify(result.adversarial).predicted_index]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_image_png(result.original, out / "original.png")
    write_image_png(result.adversarial, out / "adversarial.png")
    vis, scale = scale_perturbation(result.perturbation)
    write_image_png(vis, out / "perturbation.png")
    row = AttackRow(
        id=Path(args.image).name,
        true_label=true_label,
        target_label=args.target,
        clean_pred=clean_label,
        adv_pred=adv_label,
        success=result.success,
        success_step=result.success_step,
        final_ssim=result.final_ssim,
        linf=linf_distance(result.adversarial, result.original),
        l2=l2_distance(result.adversarial, result.original),
        adversarial_path="adversarial.png",
        perturbation_path="perturbation.png",
        perturbation_scale=scale,
    )
    (out / "manifest.json").write_text(json.dumps(row.to_json(), indent=2, sort_keys=True) + "\n")

    print(f"clean prediction:       {clean_label}")
    print(f"adversarial prediction: {adv_label}")
    print(f"success step:           {result.success_step}")
    print(f"final SSIM:             {result.final_ssim:.4f}")
    return EXIT_OK


def cmd_campaign(args: argparse.Namespace) -> int:
    config, generated_seed = load_campaign_config(Path(args.config), args.set or [])
    if generated_seed is not None:
        print(f"generated seed: {generated_seed}")
    try:
        outcome = run_campaign(config)
        persist_artifacts(outcome.report, outcome.executions, config.output_dir, outcome.model)
        render_report(outcome.report, config.output_dir)
    except (OSError, ValueError, RuntimeError, ImportError) as exc:
        raise CliError(f"campaign failed: {exc}", EXIT_RUNTIME)

    report = outcome.report
    print(f"attacks: {report.asr.n_attacks}   (report: {config.output_dir / 'report.json'})")
    print(f"{'class':<12} {'attacks':>8} {'final ASR':>10}")
    for label in report.labels:
        if label in report.asr.per_class:
            n = report.asr.n_attacks_per_class[label]
            asr = report.asr.per_class[label][-1]
            print(f"{label:<12} {n:>8} {asr:>10.3f}")
    print(f"overall final ASR: {report.asr.per_step[-1]:.3f}")
    print(f"mean final SSIM:   {report.ssim_stats.mean:.4f}")
    print(
        f"SSIM >= {report.ssim_stats.threshold:.2f}:      "
        f"{report.ssim_stats.fraction_at_least:.3f} of attacks"
    )
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    try:
        manifest = scan_dataset(Path(args.dataset))
        stats = dataset_stats(manifest)
    except (FileNotFoundError, ValueError) as exc:
        raise CliError(str(exc), EXIT_RUNTIME)
    print(f"{'label':<12} {'count':>8} {'fraction':>10}")
    for label, count, fraction in stats:
        print(f"{label:<12} {count:>8} {fraction:>10.4f}")
    print(f"{'total':<12} {sum(c for _, c, _ in stats):>8} {1.0:>10.4f}")
    if args.chart:
        render_dataset_chart(stats, Path(args.chart))
        print(f"chart written to {args.chart}")
    return EXIT_OK


def cmd_render(args: argparse.Namespace) -> int:
    try:
        report = CampaignReport.load(Path(args.report))
    except (FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        raise CliError(f"cannot load report: {exc}", EXIT_RUNTIME)
    produced = render_report(report, Path(args.out))
    print(f"rendered {len(produced)} files under {Path(args.out) / 'plots'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="histoadv",
        description="Targeted PGD attack harness for zero-shot histopathology classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_attack = sub.add_parser("attack", help="attack a single image toward a target label")
    p_attack.add_argument("--image", required=True, help="path to the input image")
    p_attack.add_argument("--model", default="toy", help="'toy' or 'pretrained:<locator>'")
    p_attack.add_argument("--target", required=True, help="target label")
    p_attack.add_argument("--labels", default=None, help="comma-separated label set (default: Kather codes)")
    p_attack.add_argument("--true-label", default=None, help="ground-truth label (default: clean prediction)")
    p_attack.add_argument("--eps", type=float, default=8 / 255, help="L-inf radius (default 8/255)")
    p_attack.add_argument("--alpha", type=float, default=2 / 255, help="step size (default 2/255)")
    p_attack.add_argument("--steps", type=int, default=10, help="PGD steps (default 10)")
    p_attack.add_argument("--seed", type=int, default=None, help="seed (generated + printed if omitted)")
    p_attack.add_argument("--out", required=True, help="output directory for the triptych")
    p_attack.set_defaults(func=cmd_attack)

    p_campaign = sub.add_parser(
        "campaign",
        help="run a full attack campaign from a JSON config",
        epilog=config_help_text(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p_campaign.add_argument("--config", required=True, help="JSON config file")
    p_campaign.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override a config key by dotted path (repeatable)",
    )
    p_campaign.set_defaults(func=cmd_campaign)

    p_stats = sub.add_parser("stats", help="print class distribution of a dataset tree")
    p_stats.add_argument("--dataset", required=True, help="dataset root directory")
    p_stats.add_argument("--chart", default=None, help="also write a pie chart to this path")
    p_stats.set_defaults(func=cmd_stats)

    p_render = sub.add_parser("render", help="re-render plots from an existing report.json")
    p_render.add_argument("--report", required=True, help="path to report.json")
    p_render.add_argument("--out", required=True, help="output directory")
    p_render.set_defaults(func=cmd_render)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
