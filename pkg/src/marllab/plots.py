"""Median-and-IQR curve plots over metrics.csv files.

SVG output is byte-deterministic for fixed inputs: the hash salt is
pinned and the date metadata is stripped, so re-plotting the same runs
yields the same file.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import ArtifactError, ConfigError
from .harness import METRIC_COLUMNS, read_metrics

matplotlib.rcParams["svg.hashsalt"] = "marllab"


def _series(path, column: str):
    cols = read_metrics(path)
    if column not in cols:
        raise ArtifactError(f"{path}: no column {column!r}")
    xs, ys = [], []
    for x, y in zip(cols["step"], cols[column]):
        if x is not None and y is not None:
            xs.append(x)
            ys.append(y)
    if not xs:
        raise ArtifactError(f"{path}: column {column!r} has no values")
    return np.asarray(xs), np.asarray(ys)


def aggregate(paths, column: str):
    """Median and quartiles across runs, interpolated onto the union grid."""
    series = [_series(p, column) for p in paths]
    grid = np.unique(np.concatenate([xs for xs, _ in series]))
    stacked = np.stack([np.interp(grid, xs, ys) for xs, ys in series])
    return (grid, np.median(stacked, axis=0),
            np.percentile(stacked, 25, axis=0),
            np.percentile(stacked, 75, axis=0))


def plot_metric(groups: dict, column: str, out_path, title: str = "") -> str:
    """groups: label -> list of metrics.csv paths; one curve per label."""
    if column not in METRIC_COLUMNS or column == "step":
        raise ConfigError(f"cannot plot column {column!r}")
    if not groups:
        raise ConfigError("nothing to plot")
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label in sorted(groups):
        grid, med, lo, hi = aggregate(groups[label], column)
        ax.plot(grid, med, label=label)
        ax.fill_between(grid, lo, hi, alpha=0.2)
    ax.set_xlabel("step")
    ax.set_ylabel(column)
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return str(out_path)
