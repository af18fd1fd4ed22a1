"""Figures written next to evaluation reports."""

from __future__ import annotations

import re
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (4.8, 3.2),
    "figure.dpi": 120,
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.bbox": "tight",
}


def _slug(text: str) -> str:
    text = text.replace("->", "_to_")
    return re.sub(r"[^A-Za-z0-9_.=-]+", "_", text).strip("_")


def _save(fig, path: Path) -> Path:
    # no Software tag: keeps PNG bytes identical across matplotlib builds
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_alpha_sweep(rows, path) -> Path:
    """F1 / precision / recall against alpha, one line set per system."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for system in sorted({r.test_set for r in rows}):
            sel = sorted((r for r in rows if r.test_set == system), key=lambda r: r.alpha)
            a = [r.alpha for r in sel]
            ax.plot(a, [r.metrics.f1 for r in sel], "o-", label=f"{system} F1")
            ax.plot(a, [r.metrics.precision for r in sel], "s--", lw=0.8, ms=3, label=f"{system} P")
            ax.plot(a, [r.metrics.recall for r in sel], "^:", lw=0.8, ms=3, label=f"{system} R")
        ax.set_xlabel(r"$\alpha$")
        ax.set_ylabel("score")
        ax.set_ylim(0, 1.02)
        ax.legend(frameon=False, ncol=1)
        return _save(fig, Path(path))


def plot_bars(rows, path, key=lambda r: f"{r.test_set}\n{r.ablation}") -> Path:
    """Precision / recall / F1 bars per row (ablations, fused breakdowns, transfer)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.8, 1.1 * len(rows) + 1.5), 3.2))
        x = np.arange(len(rows))
        w = 0.26
        for off, name in zip((-w, 0.0, w), ("precision", "recall", "f1")):
            ax.bar(x + off, [getattr(r.metrics, name) for r in rows], w, label=name)
        ax.set_xticks(x, [key(r) for r in rows])
        ax.set_ylim(0, 1.05)
        ax.legend(frameon=False, ncol=3, loc="lower right")
        return _save(fig, Path(path))


def plot_score_hist(run, path, bins: int = 40) -> Path:
    """Score distributions of normal and anomalous test windows."""
    vals = np.array([s.score(run.field) for s in run.scored])
    lab = np.array([s.window.label for s in run.scored])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        edges = np.histogram_bin_edges(vals, bins=bins)
        ax.hist(vals[lab == 0], bins=edges, alpha=0.6, label="normal")
        ax.hist(vals[lab == 1], bins=edges, alpha=0.6, label="anomalous")
        ax.set_xlabel(run.field.replace("_", " "))
        ax.set_ylabel("windows")
        ax.set_title(run.label, fontsize=8)
        ax.legend(frameon=False)
        return _save(fig, Path(path))


def render_report(report, out_dir, kind: str) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    if report.rows:
        if kind == "alpha_sweep":
            paths.append(plot_alpha_sweep(report.rows, out_dir / "alpha_sweep.png"))
        else:
            paths.append(plot_bars(report.rows, out_dir / f"{kind}_metrics.png"))
    for run in report.runs:
        paths.append(plot_score_hist(run, out_dir / f"hist_{_slug(run.label)}.png"))
    return paths
