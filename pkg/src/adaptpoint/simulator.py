"""Differentiable corruption simulator.

Applies per-anchor rigid+scale deformations to a cloud, fuses the deformed
candidates by Nadaraya-Watson kernel regression on point-to-anchor distance,
and applies a per-point mask. Everything is differentiable with respect to
the deformation parameters and the mask; anchor positions, fusion weights,
and neighbor selections are treated as constants of the input cloud.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .geom import as_points


@dataclass(frozen=True)
class FusionConfig:
    """Gaussian-kernel fusion bandwidth (unitless, model frame)."""

    bandwidth: float = 0.5

    def __post_init__(self) -> None:
        if self.bandwidth <= 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")


@dataclass
class AnchorSets:
    """M anchor-deformed copies of one cloud, in the world frame."""

    candidates: list[Tensor]  # M tensors of shape (N, 3)
    anchors: np.ndarray  # (M, 3)


def _rotate_rows(q: Tensor, angles: Tensor, i: int) -> Tensor:
    """Right-multiply row vectors by Rz(c) @ Ry(b) @ Rx(a) for anchor i.

    Built from three plane rotations so the angles stay differentiable; equal
    to q @ euler_to_rotation((a, b, c)) up to float rounding.
    """
    a, b, c = angles[i, 0:1], angles[i, 1:2], angles[i, 2:3]
    x, y, z = q[:, 0:1], q[:, 1:2], q[:, 2:3]
    # q @ Rz
    cc, sc = ag.cos(c), ag.sin(c)
    x, y = x * cc + y * sc, y * cc - x * sc
    # q @ Ry
    cb, sb = ag.cos(b), ag.sin(b)
    x, z = x * cb - z * sb, z * cb + x * sb
    # q @ Rx
    ca, sa = ag.cos(a), ag.sin(a)
    y, z = y * ca + z * sa, z * ca - y * sa
    return ag.concat([x, y, z], axis=1)


def per_anchor_deform(cloud: np.ndarray, anchors: np.ndarray, scale: Tensor,
                      angles: Tensor, offset: Tensor) -> AnchorSets:
    """One deformed copy of `cloud` per anchor.

    Each copy is normalized to its anchor frame, scaled per axis, rotated,
    translated, and moved back to the world frame:
      candidate_i = ((cloud - d_i) * scale_i) @ R(angles_i) + offset_i + d_i
    """
    pts = as_points(cloud)
    anc = as_points(anchors, "anchors")
    m = anc.shape[0]
    for name, t in (("scale", scale), ("angles", angles), ("offset", offset)):
        if t.data.shape != (m, 3):
            raise ValueError(f"{name} must have shape ({m}, 3), got {t.data.shape}")
    candidates = []
    for i in range(m):
        q = Tensor(pts - anc[i]) * scale[i : i + 1, :]
        q = _rotate_rows(q, angles, i)
        candidates.append(q + offset[i : i + 1, :] + Tensor(anc[i]))
    return AnchorSets(candidates=candidates, anchors=anc)


def fusion_weights(cloud: np.ndarray, anchors: np.ndarray, config: FusionConfig) -> np.ndarray:
    """Per-point normalized Gaussian kernel weights over the anchors, (N, M).

    Weights depend only on the original cloud and anchor positions, so they
    are constants under differentiation. If every kernel value underflows for
    some point, that point falls back to a hard nearest-anchor assignment.
    """
    pts = as_points(cloud)
    anc = as_points(anchors, "anchors")
    d2 = ((pts[:, None, :] - anc[None, :, :]) ** 2).sum(axis=2)
    w = np.exp(-d2 / (2.0 * config.bandwidth**2))
    totals = w.sum(axis=1)
    dead = totals == 0.0
    if dead.any():
        warnings.warn(
            f"fusion kernel underflow for {int(dead.sum())} points; "
            "falling back to nearest-anchor assignment",
            RuntimeWarning,
        )
        nearest = np.argmin(d2[dead], axis=1)
        w[dead] = 0.0
        w[np.flatnonzero(dead), nearest] = 1.0
        totals = w.sum(axis=1)
    return w / totals[:, None]


def fuse_anchor_sets(sets: AnchorSets, cloud: np.ndarray, config: FusionConfig) -> Tensor:
    """Blend the M candidates into one cloud by the per-point kernel weights."""
    if not sets.candidates:
        raise ValueError("need at least one anchor candidate")
    w = fusion_weights(cloud, sets.anchors, config)
    fused = sets.candidates[0] * Tensor(w[:, 0:1])
    for i in range(1, len(sets.candidates)):
        fused = fused + sets.candidates[i] * Tensor(w[:, i : i + 1])
    return fused


def apply_mask(fused: Tensor, mask: Tensor, mode: str = "multiply",
               rng: np.random.Generator | None = None) -> Tensor | np.ndarray:
    """Apply a per-point keep mask to a fused cloud.

    multiply: differentiable; coordinates scale by the mask value, so dropped
      points collapse toward the origin. Returns a Tensor.
    filter: export/inspection path; points with mask < 0.5 are removed and the
      survivors are resampled back to N by random duplication. Returns an array.
    """
    n = fused.data.shape[0]
    if mask.data.shape != (n, 1):
        raise ValueError(f"mask must have shape ({n}, 1), got {mask.data.shape}")
    if mode == "multiply":
        return fused * mask
    if mode == "filter":
        if rng is None:
            raise ValueError("filter mode needs an rng for resampling")
        keep = np.flatnonzero(mask.data[:, 0] >= 0.5)
        if keep.size == 0:
            # degenerate manual mask; retain the single best-kept point
            keep = np.array([int(np.argmax(mask.data[:, 0]))])
        pts = fused.data[keep]
        if pts.shape[0] < n:
            extra = rng.integers(0, pts.shape[0], size=n - pts.shape[0])
            pts = np.concatenate([pts, pts[extra]], axis=0)
        return pts
    raise ValueError(f"unknown mask mode {mode!r}")


def identity_params(m: int) -> tuple[Tensor, Tensor, Tensor]:
    """(scale, angles, offset) tensors for the exact identity deformation."""
    return Tensor(np.ones((m, 3))), Tensor(np.zeros((m, 3))), Tensor(np.zeros((m, 3)))
