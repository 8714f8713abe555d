"""Figures for stored run results. Needs the optional matplotlib dependency."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .evaluation import AblationTable, RobustnessSummary
from .training import TrainLog

__all__ = ["render_run", "plot_losses", "plot_robustness", "plot_confusion", "plot_ablation"]


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:
        raise ValidationError("plots need matplotlib: pip install 'artifact[plots]'") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_losses(log: TrainLog, path):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = log.column("epoch")
    for name in ("total", "task", "adv", "mcc", "byol"):
        v = log.column(name)
        if np.any(v != 0):
            ax.plot(epochs, v, label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_robustness(summary: RobustnessSummary, path):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    edges, counts = summary.hist_edges, summary.hist_counts
    width = np.diff(edges)
    density = counts / max(counts.sum() * width.mean(), 1e-300)
    ax.bar(edges[:-1], density, width=width, align="edge", alpha=0.5, label="histogram")
    if summary.kde_x.size:
        ax.plot(summary.kde_x, summary.kde_y, label="KDE")
    ax.set_xlabel("target accuracy")
    ax.set_ylabel("density")
    ax.set_title(f"{summary.method} ({summary.n_seeds} seeds): {summary.mean:.3f} ± {summary.std:.3f}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_confusion(counts, class_names, path):
    plt = _pyplot()
    counts = np.asarray(counts, dtype=np.float64)
    rows = counts.sum(axis=1, keepdims=True)
    frac = np.divide(counts, rows, out=np.zeros_like(counts), where=rows > 0)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(frac, vmin=0, vmax=1, cmap="Blues")
    for i in range(frac.shape[0]):
        for j in range(frac.shape[1]):
            ax.text(j, i, f"{100 * frac[i, j]:.1f}%", ha="center", va="center",
                    color="white" if frac[i, j] > 0.5 else "black")
    ax.set_xticks(range(len(class_names)), class_names, rotation=30, ha="right")
    ax.set_yticks(range(len(class_names)), class_names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_ablation(table: AblationTable, path):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    names = [r.method for r in table.rows]
    x = np.arange(len(names))
    ax.bar(x - 0.2, [r.mean_accuracy for r in table.rows], 0.4,
           yerr=[r.std_accuracy for r in table.rows], label="accuracy")
    ax.bar(x + 0.2, [r.mean_macro_f1 for r in table.rows], 0.4, label="macro F1")
    ax.set_xticks(x, names)
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_run(run, out, image_format: str = "png") -> list[str]:
    """Render every figure the stored results of ``run`` support; returns file names."""
    run, out = Path(run), Path(out)
    written = []
    if (run / "log.csv").is_file():
        name = f"losses.{image_format}"
        plot_losses(TrainLog.from_csv(run / "log.csv"), out / name)
        written.append(name)
    if (run / "robustness.json").is_file():
        name = f"robustness.{image_format}"
        plot_robustness(RobustnessSummary.from_dict(json.loads((run / "robustness.json").read_text())), out / name)
        written.append(name)
    for fname in ("metrics.json", "metrics_target.json"):
        if (run / fname).is_file():
            d = json.loads((run / fname).read_text())
            name = f"confusion_{Path(fname).stem}.{image_format}"
            plot_confusion(d["confusion"], d["class_names"], out / name)
            written.append(name)
    if (run / "ablation.json").is_file():
        name = f"ablation.{image_format}"
        plot_ablation(AblationTable.from_dict(json.loads((run / "ablation.json").read_text())), out / name)
        written.append(name)
    return written
