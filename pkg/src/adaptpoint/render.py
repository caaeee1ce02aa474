"""Static SVG rendering of clouds and evaluation summaries.

Orthographic xy/xz/yz scatter projections, colored by out-of-plane depth or
by a per-point mask value. Figures are written next to the delimited reports
so a run's artifacts stay self-contained.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import geom
from .corruptions import FAMILIES

_VIEWS = (("xy", 0, 1, 2), ("xz", 0, 2, 1), ("yz", 1, 2, 0))


def render_cloud_svg(points: np.ndarray, out_path, color_values: np.ndarray | None = None,
                     color_label: str = "depth", title: str = "") -> Path:
    """Three orthographic projections of one cloud, saved as SVG."""
    pts = geom.as_points(points)
    out_path = Path(out_path)
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.6))
    for ax, (name, ix, iy, iz) in zip(axes, _VIEWS):
        color = pts[:, iz] if color_values is None else np.asarray(color_values, dtype=float)
        sc = ax.scatter(pts[:, ix], pts[:, iy], c=color, s=4, cmap="viridis")
        ax.set_title(name)
        ax.set_aspect("equal")
        ax.set_xticks([])
        ax.set_yticks([])
    fig.colorbar(sc, ax=axes, shrink=0.8, label=color_label)
    if title:
        fig.suptitle(title)
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return out_path


def render_ce_bars(ce_per_family: np.ndarray, mce: float, out_path,
                   title: str = "corruption error vs baseline") -> Path:
    """Per-family CE bar chart with the mCE reference line, saved as SVG."""
    out_path = Path(out_path)
    fig, ax = plt.subplots(figsize=(7, 3.6))
    xs = np.arange(len(FAMILIES))
    ax.bar(xs, np.asarray(ce_per_family, dtype=float), color="#4878cf")
    ax.axhline(100.0, color="grey", linestyle=":", linewidth=1, label="baseline = 100")
    ax.axhline(float(mce), color="#d65f5f", linestyle="--", linewidth=1,
               label=f"mCE = {mce:.1f}")
    ax.set_xticks(xs)
    ax.set_xticklabels(FAMILIES, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("CE (%)")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return out_path
