"""PNG rendering of learning curves and visitation heatmaps (matplotlib, Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .records import TrainRecord  # noqa: E402

CURVE_METRICS = ("J", "env_return_mean", "coverage")


def plot_curves(curves: dict[str, TrainRecord], metric: str, path, title: str = "") -> Path:
    """Mean curve with a one-stderr band per aggregate record."""
    fig, ax = plt.subplots(figsize=(5.0, 3.5), dpi=120)
    for label, rec in sorted(curves.items()):
        x = rec.column("x")
        m = rec.column(f"{metric}_mean")
        s = rec.column(f"{metric}_stderr")
        ax.plot(x, m, label=label, lw=1.5)
        ax.fill_between(x, m - s, m + s, alpha=0.25)
    ax.set_xlabel("update")
    ax.set_ylabel(metric)
    if title:
        ax.set_title(title)
    ax.legend(fontsize=7, frameon=False)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def plot_heatmap(grid, path, title: str = "") -> Path:
    """Normalized visitation grid; walls (value -1) drawn in black."""
    g = np.asarray(grid, dtype=float)
    masked = np.ma.masked_less(g, 0.0)
    cmap = matplotlib.colormaps["magma"].copy()
    cmap.set_bad("black")
    fig, ax = plt.subplots(figsize=(4.0, 4.0 * g.shape[0] / max(g.shape[1], 1) + 0.5), dpi=120)
    im = ax.imshow(masked, cmap=cmap, vmin=0.0, vmax=1.0, interpolation="nearest")
    ax.set_xticks([])
    ax.set_yticks([])
    if title:
        ax.set_title(title, fontsize=8)
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def render_experiment(root) -> list[Path]:
    """Learning curves from ``aggregate/`` and one heatmap per group (first seed)."""
    root = Path(root)
    fig_dir = root / "figures"
    fig_dir.mkdir(exist_ok=True)
    curves = {p.stem: TrainRecord.from_csv(p) for p in sorted((root / "aggregate").glob("*.csv"))}
    written = []
    if curves:
        cols = next(iter(curves.values())).columns
        for metric in CURVE_METRICS:
            if f"{metric}_mean" in cols:
                written.append(plot_curves(curves, metric, fig_dir / f"curve_{metric}.png"))
    for group in sorted(p for p in (root / "runs").iterdir() if p.is_dir()):
        hm = sorted(group.glob("seed*/heatmap.csv"))
        if hm:
            grid = np.loadtxt(hm[0], delimiter=",", ndmin=2)
            written.append(plot_heatmap(grid, fig_dir / f"heatmap_{group.name}.png",
                                        title=f"{group.name} {hm[0].parent.name}"))
    return written
