"""Figures rendered next to the CSV outputs of a run."""
from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .harness import RunResult, group_results  # noqa: E402

FIG_WIDTH = 6.4

plt.rcParams.update({
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
})


def _cell_label(run: RunResult) -> str:
    label = f"{run.head}\n{run.scenario} {run.train_eta:g}/{run.test_eta:g}"
    if not run.missing_aware:
        label += "\nw/o MA"
    if run.grid_point:
        extra = ", ".join(f"{k.split('.')[-1]}={v}" for k, v in run.grid_point.items()
                          if k not in ("head", "scenario", "train_eta", "test_eta", "missing_aware"))
        if extra:
            label += f"\n{extra}"
    return label


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_seed_boxplot(results: list[RunResult], path) -> Path:
    """Box plot of the per-seed metric for every configuration."""
    groups = list(group_results(results).values())
    fig, ax = plt.subplots(figsize=(max(FIG_WIDTH, 1.3 * len(groups)), 3.6))
    ax.boxplot([[r.value for r in runs] for runs in groups], showmeans=True)
    ax.set_xticks(range(1, len(groups) + 1), [_cell_label(runs[0]) for runs in groups], fontsize=7)
    ax.set_ylabel(groups[0][0].metric_name)
    ax.set_title(f"{len(groups[0])} seeds per configuration")
    return _save(fig, Path(path))


def plot_history(results: list[RunResult], path) -> Path | None:
    """Seed-averaged loss and metric curves per configuration and split."""
    groups = [runs for runs in group_results(results).values() if runs[0].history]
    if not groups:
        return None
    fig, (ax_loss, ax_metric) = plt.subplots(1, 2, figsize=(FIG_WIDTH * 1.5, 3.4))
    for runs in groups:
        label = _cell_label(runs[0]).replace("\n", " ")
        for split, style in (("train", "-"), ("test", "--")):
            rows = [[h for h in r.history if h["split"] == split] for r in runs]
            if not rows[0]:
                continue
            epochs = [h["epoch"] for h in rows[0]]
            loss = np.mean([[h["loss"] for h in hs] for hs in rows], axis=0)
            metric = np.mean([[h["metric"] for h in hs] for hs in rows], axis=0)
            ax_loss.plot(epochs, loss, style, label=f"{label} ({split})")
            ax_metric.plot(epochs, metric, style, label=f"{label} ({split})")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.set_yscale("log")
    ax_metric.set_xlabel("epoch")
    ax_metric.set_ylabel(groups[0][0].metric_name)
    ax_metric.legend(fontsize=6, loc="lower right")
    return _save(fig, Path(path))


def sweep_axes(results: list[RunResult]) -> list[str]:
    """Grid keys whose values are numeric and take more than one value."""
    keys: dict[str, set] = {}
    for r in results:
        for k, v in r.grid_point.items():
            keys.setdefault(k, set()).add(json.dumps(v))
    out = []
    for k, vals in keys.items():
        decoded = [json.loads(v) for v in vals]
        if len(decoded) > 1 and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in decoded):
            out.append(k)
    return out


def plot_sweep(results: list[RunResult], axis: str, path) -> Path:
    """Mean +- std of the metric against one swept hyperparameter."""
    series: dict[str, dict[float, list[float]]] = {}
    for r in results:
        rest = {k: v for k, v in r.grid_point.items() if k != axis}
        name = ", ".join(f"{k.split('.')[-1]}={v}" for k, v in sorted(rest.items())) or r.head
        series.setdefault(name, {}).setdefault(float(r.grid_point[axis]), []).append(r.value)
    fig, ax = plt.subplots(figsize=(FIG_WIDTH, 3.6))
    for name, points in series.items():
        xs = sorted(points)
        mean = np.array([np.mean(points[x]) for x in xs])
        std = np.array([np.std(points[x]) for x in xs])
        ax.plot(xs, mean, marker="o", label=name)
        ax.fill_between(xs, mean - std, mean + std, alpha=0.2)
    ax.set_xlabel(axis)
    ax.set_ylabel(results[0].metric_name)
    if len(series) > 1:
        ax.legend(fontsize=6)
    return _save(fig, Path(path))


def render_report(results: list[RunResult], output_dir) -> list[Path]:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [plot_seed_boxplot(results, out / "seeds_boxplot.png")]
    hist = plot_history(results, out / "history.png")
    if hist is not None:
        paths.append(hist)
    for axis in sweep_axes(results):
        paths.append(plot_sweep(results, axis, out / f"sweep_{axis.replace('.', '_')}.png"))
    return paths
