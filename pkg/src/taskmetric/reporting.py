"""Report output: line-delimited key=value text, per-trial CSVs, and
figures rendered next to the delimited output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .harness import SemiResult, TrialReport


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def report_lines(report: TrialReport, prefix: str = "") -> list:
    p = f"{prefix}." if prefix else ""
    lines = [
        f"{p}mean_accuracy={report.mean_accuracy:.6f}",
        f"{p}ci95_halfwidth={report.ci95_halfwidth:.6f}",
        f"{p}n_trials={report.n_trials}",
        f"{p}degenerate_ci={_fmt(report.degenerate_ci)}",
    ]
    if report.note:
        lines.append(f"{p}note={report.note}")
    for key, value in sorted(report.config_echo.items()):
        lines.append(f"{p}config.{key}={_fmt(value)}")
    return lines


def write_report(path, lines) -> None:
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_trials_csv(path, columns: dict) -> None:
    """Per-trial accuracies, one column per arm."""
    names = list(columns)
    arrays = [np.asarray(columns[n]) for n in names]
    n = max(a.shape[0] for a in arrays)
    rows = ["trial," + ",".join(names)]
    for t in range(n):
        cells = [f"{a[t]:.6f}" if t < a.shape[0] else "" for a in arrays]
        rows.append(f"{t}," + ",".join(cells))
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_accuracy_hist(report: TrialReport, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(report.per_trial_accuracies, bins=30, color="#4878cf", edgecolor="white")
    ax.axvline(report.mean_accuracy, color="crimson", lw=2,
               label=f"mean {report.mean_accuracy:.3f}")
    ax.set_xlabel("per-trial accuracy")
    ax.set_ylabel("trials")
    ax.legend()
    _finish(fig, path)


def render_ablation_bars(rows, path) -> None:
    labels = [spec.label() for spec, _ in rows]
    means = [rep.mean_accuracy for _, rep in rows]
    errs = [rep.ci95_halfwidth for _, rep in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(labels, means, yerr=errs, capsize=4, color="#4878cf")
    ax.set_ylabel("mean accuracy")
    ax.set_ylim(0, 1)
    for tick in ax.get_xticklabels():
        tick.set_rotation(15)
    _finish(fig, path)


def render_shot_sweep(results, path) -> None:
    ks = [r.k_shot for r in results]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.errorbar(ks, [r.baseline.mean_accuracy for r in results],
                 yerr=[r.baseline.ci95_halfwidth for r in results],
                 marker="o", label="baseline")
    ax1.errorbar(ks, [r.adapted.mean_accuracy for r in results],
                 yerr=[r.adapted.ci95_halfwidth for r in results],
                 marker="s", label="adapted+bisim")
    ax1.set_xlabel("shots per class")
    ax1.set_ylabel("mean accuracy")
    ax1.legend()
    ax2.plot(ks, [r.delta for r in results], marker="d", color="crimson")
    ax2.axhline(0.0, color="gray", lw=0.8)
    ax2.set_xlabel("shots per class")
    ax2.set_ylabel("accuracy gain")
    _finish(fig, path)


def render_semi(result: SemiResult, path) -> None:
    seeds = [s for s, _, _ in result.per_split]
    semi = [r.mean_accuracy for _, r, _ in result.per_split]
    lab = [r.mean_accuracy for _, _, r in result.per_split]
    x = np.arange(len(seeds))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(x - 0.2, lab, width=0.4, label="labeled only")
    ax.bar(x + 0.2, semi, width=0.4, label="with unlabeled pool")
    ax.set_xticks(x, [str(s) for s in seeds], rotation=30)
    ax.set_xlabel("split seed")
    ax.set_ylabel("mean accuracy")
    ax.legend()
    _finish(fig, path)


def render_loss_trace(trace: np.ndarray, eval_every: int, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = (np.arange(len(trace)) + 1) * eval_every
    ax.plot(xs, trace, lw=0.8)
    if len(trace) >= 50:
        k = max(len(trace) // 50, 1)
        smooth = np.convolve(trace, np.ones(k) / k, mode="valid")
        ax.plot(xs[k - 1:], smooth, lw=2, color="crimson", label="smoothed")
        ax.legend()
    ax.set_xlabel("episode")
    ax.set_ylabel("episode loss")
    _finish(fig, path)


def render_sparsity(metric_matrix: np.ndarray, sorted_values: np.ndarray, path) -> None:
    """Heatmap of the rescaled metric next to its descending value curve."""
    lo, hi = metric_matrix.min(), metric_matrix.max()
    scaled = (metric_matrix - lo) / (hi - lo) if hi > lo else metric_matrix * 0.0
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    im = ax1.imshow(scaled, cmap="coolwarm", vmin=0, vmax=1)
    fig.colorbar(im, ax=ax1, fraction=0.046)
    ax1.set_title("rescaled metric")
    ax2.plot(sorted_values, lw=1.5)
    ax2.set_xlabel("rank")
    ax2.set_ylabel("rescaled entry")
    ax2.set_title("entries, descending")
    _finish(fig, path)
