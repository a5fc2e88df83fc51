"""Report rendering: ASR curves, prediction heatmaps, SSIM histogram.

Every plot is paired with a CSV dump of its underlying numbers so results
can be re-checked without parsing images.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .campaign import CampaignReport


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _render_asr_curve(report: CampaignReport, out_dir: Path) -> list[Path]:
    steps = np.arange(1, report.max_steps + 1)
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.plot(steps, report.asr.per_step, color="black", linewidth=2.5, label="overall")
    omitted = []
    for label in report.labels:
        curve = report.asr.per_class.get(label)
        if curve is None:
            omitted.append(label)
            continue
        ax.plot(steps, curve, marker="o", markersize=3, linewidth=1.2, label=label)
    title = "Cumulative attack success rate per step"
    if omitted:
        title += f"\n(no attacks sampled for: {', '.join(omitted)})"
    ax.set_title(title)
    ax.set_xlabel("PGD step")
    ax.set_ylabel("cumulative success rate")
    ax.set_ylim(-0.02, 1.05)
    ax.set_xticks(steps)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    png = out_dir / "asr_per_step.png"
    fig.savefig(png, dpi=150, bbox_inches="tight")
    plt.close(fig)

    csv_path = out_dir / "asr_per_step.csv"
    per_class_labels = [l for l in report.labels if l in report.asr.per_class]
    header = ["step", "overall"] + per_class_labels
    rows = [
        [int(s), float(report.asr.per_step[s - 1])]
        + [float(report.asr.per_class[l][s - 1]) for l in per_class_labels]
        for s in steps
    ]
    _write_csv(csv_path, header, rows)
    return [png, csv_path]


def _render_heatmap(matrix: np.ndarray, labels: Sequence[str], title: str, stem: Path) -> list[Path]:
    fig, ax = plt.subplots(figsize=(7, 6))
    im = ax.imshow(matrix, cmap="viridis")
    ax.set_xticks(range(len(labels)), labels, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(len(labels)), labels, fontsize=8)
    ax.set_xlabel("predicted label")
    ax.set_ylabel("true label")
    ax.set_title(title)
    vmax = matrix.max() if matrix.size else 0
    for i in range(len(labels)):
        for j in range(len(labels)):
            color = "white" if matrix[i, j] < 0.6 * max(vmax, 1) else "black"
            ax.text(j, i, int(matrix[i, j]), ha="center", va="center", color=color, fontsize=7)
    fig.colorbar(im, ax=ax, label="attacks")
    png = stem.with_suffix(".png")
    fig.savefig(png, dpi=150, bbox_inches="tight")
    plt.close(fig)

    csv_path = stem.with_suffix(".csv")
    header = ["true\\predicted"] + list(labels)
    rows = [[labels[i]] + [int(v) for v in matrix[i]] for i in range(len(labels))]
    _write_csv(csv_path, header, rows)
    return [png, csv_path]


def _render_ssim_hist(report: CampaignReport, out_dir: Path) -> list[Path]:
    values = [row.final_ssim for row in report.rows if not row.skipped and row.final_ssim is not None]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    counts, edges, _ = ax.hist(values, bins=20, color="steelblue", edgecolor="white")
    ax.axvline(
        report.ssim_stats.threshold,
        color="crimson",
        linestyle="--",
        label=f"threshold {report.ssim_stats.threshold:.2f}",
    )
    ax.set_xlabel("final SSIM vs original")
    ax.set_ylabel("attacks")
    ax.set_title("Final SSIM distribution")
    ax.legend()
    png = out_dir / "ssim_histogram.png"
    fig.savefig(png, dpi=150, bbox_inches="tight")
    plt.close(fig)

    csv_path = out_dir / "ssim_histogram.csv"
    rows = [
        [float(edges[i]), float(edges[i + 1]), int(counts[i])] for i in range(len(counts))
    ]
    _write_csv(csv_path, ["bin_left", "bin_right", "count"], rows)
    return [png, csv_path]


def _render_class_distribution(report: CampaignReport, out_dir: Path) -> list[Path]:
    counts = {label: 0 for label in report.labels}
    for row in report.rows:
        if not row.skipped:
            counts[row.true_label] += 1
    total = sum(counts.values())
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.bar(list(counts), list(counts.values()), color="darkseagreen", edgecolor="black")
    ax.set_xlabel("true label")
    ax.set_ylabel("attacks")
    ax.set_title("Attacked images per class")
    ax.tick_params(axis="x", rotation=45)
    png = out_dir / "class_distribution.png"
    fig.savefig(png, dpi=150, bbox_inches="tight")
    plt.close(fig)

    csv_path = out_dir / "class_distribution.csv"
    rows = [
        [label, count, (count / total if total else 0.0)] for label, count in counts.items()
    ]
    _write_csv(csv_path, ["label", "count", "fraction"], rows)
    return [png, csv_path]


def render_report(report: CampaignReport, out_dir: Path) -> list[Path]:
    """Render all campaign plots plus their CSV companions into out_dir/plots."""
    plots_dir = Path(out_dir) / "plots"
    plots_dir.mkdir(parents=True, exist_ok=True)
    produced: list[Path] = []
    produced += _render_asr_curve(report, plots_dir)
    produced += _render_heatmap(
        report.pre_matrix, report.labels.to_list(), "Predictions before attack", plots_dir / "heatmap_pre"
    )
    produced += _render_heatmap(
        report.post_matrix, report.labels.to_list(), "Predictions after attack", plots_dir / "heatmap_post"
    )
    produced += _render_ssim_hist(report, plots_dir)
    produced += _render_class_distribution(report, plots_dir)
    return produced


def render_dataset_chart(
    stats: Sequence[tuple[str, int, float]], path: Path
) -> Path:
    """Pie chart of the per-class dataset distribution (stats command)."""
    labels = [s[0] for s in stats]
    counts = [s[1] for s in stats]
    fig, ax = plt.subplots(figsize=(6.5, 6.5))
    ax.pie(counts, labels=labels, autopct="%1.1f%%", textprops={"fontsize": 8})
    ax.set_title(f"Dataset class distribution (n={sum(counts)})")
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return Path(path)
