"""Reference perception networks: a small set-abstraction classifier and a
discriminator that scores how clean a cloud looks.

Both are max-pool based and therefore permutation invariant: farthest-point
sampling starts from the lexicographically smallest point, so reordering the
same coordinates selects the same physical centers. Inputs may be plain
arrays or autograd tensors; with a tensor input, gradients flow through the
gathered coordinates back into the cloud (neighbor selections stay constant).

A whole batch runs as one graph: per-sample neighborhood indices are offset
into a flattened (B*N, 3) point tensor, so the Python-level op count per
batch is that of a single forward.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import geom
from .autograd import Tensor
from .nn import MLP, Module


@dataclass(frozen=True)
class BackboneConfig:
    n_points: int = 256
    centers: tuple[int, int] = (128, 32)
    widths: tuple[int, int] = (32, 64)
    k_neighbors: int = 8

    def __post_init__(self) -> None:
        if self.centers[0] <= self.centers[1]:
            raise ValueError(f"centers must decrease, got {self.centers}")
        if self.centers[0] > self.n_points:
            raise ValueError(f"first stage centers {self.centers[0]} exceed N={self.n_points}")
        if self.k_neighbors > self.centers[0]:
            raise ValueError(f"k={self.k_neighbors} exceeds stage-1 centers {self.centers[0]}")


@dataclass(frozen=True)
class ClassifierConfig(BackboneConfig):
    n_classes: int = 6
    head_hidden: int = 32

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.n_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.n_classes}")


@dataclass
class BackboneGeometry:
    """Per-sample neighborhood structure for both set-abstraction stages."""

    center1: np.ndarray  # (C1,) indices into the sample's points
    nbr1: np.ndarray  # (C1, K) indices into the sample's points
    center2: np.ndarray  # (C2,) indices into stage-1 centers
    nbr2: np.ndarray  # (C2, K) indices into stage-1 centers


def backbone_geometry(coords: np.ndarray, cfg: BackboneConfig) -> BackboneGeometry:
    """Canonical-start FPS + K-NN index structure of one cloud."""
    pts = geom.as_points(coords)
    if pts.shape != (cfg.n_points, 3):
        raise ValueError(f"expected ({cfg.n_points}, 3) input, got {pts.shape}")
    c1 = geom.fps(pts, cfg.centers[0], start=geom.lexicographic_start(pts))
    p1 = pts[c1]
    n1 = geom.knn_fast(p1, pts, cfg.k_neighbors)
    c2 = geom.fps(p1, cfg.centers[1], start=geom.lexicographic_start(p1))
    n2 = geom.knn_fast(p1[c2], p1, cfg.k_neighbors)
    return BackboneGeometry(center1=c1, nbr1=n1, center2=c2, nbr2=n2)


class _Backbone(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        self.cfg = cfg
        w1, w2 = cfg.widths
        # per-neighbor input: relative xyz | center xyz | optional features
        self.mlp1 = MLP([6, w1, w1], rng)
        self.mlp2 = MLP([6 + w1, w2, w2], rng)

    def _flat_points(self, clouds) -> Tensor:
        tensors = []
        for cloud in clouds:
            t = cloud if isinstance(cloud, Tensor) else Tensor(geom.as_points(cloud))
            if t.data.shape != (self.cfg.n_points, 3):
                raise ValueError(
                    f"expected ({self.cfg.n_points}, 3) input, got {t.data.shape}"
                )
            tensors.append(t)
        return ag.concat(tensors, axis=0) if len(tensors) > 1 else tensors[0]

    def _stage(self, mlp: MLP, points: Tensor, feats: Tensor | None,
               center_flat: np.ndarray, nbr_flat: np.ndarray, width: int) -> tuple[Tensor, Tensor]:
        count = center_flat.shape[0]
        k = nbr_flat.shape[1]
        centers = points[center_flat, :]
        nbr = points[nbr_flat.reshape(-1), :].reshape(count, k, 3)
        rel = nbr - centers.reshape(count, 1, 3)
        ctr = centers.reshape(count, 1, 3) * Tensor(np.ones((1, k, 1)))
        pieces = [rel.reshape(-1, 3), ctr.reshape(-1, 3)]
        if feats is not None:
            pieces.append(feats[nbr_flat.reshape(-1), :])
        encoded = mlp(ag.concat(pieces, axis=1))
        pooled = encoded.reshape(count, k, width).max(axis=1)
        return centers, pooled

    def encode_flat(self, points: Tensor, b: int,
                    geometry: list[BackboneGeometry]) -> Tensor:
        """Global feature rows (B, widths[1]) from a flattened (B*N, 3) tensor."""
        cfg = self.cfg
        if points.data.shape != (b * cfg.n_points, 3):
            raise ValueError(
                f"expected ({b * cfg.n_points}, 3) flat input, got {points.data.shape}"
            )
        if len(geometry) != b:
            raise ValueError(f"got {len(geometry)} geometry entries for batch of {b}")
        c1, c2 = cfg.centers
        n = cfg.n_points
        center1 = np.concatenate([g.center1 + i * n for i, g in enumerate(geometry)])
        nbr1 = np.concatenate([g.nbr1 + i * n for i, g in enumerate(geometry)])
        center2 = np.concatenate([g.center2 + i * c1 for i, g in enumerate(geometry)])
        nbr2 = np.concatenate([g.nbr2 + i * c1 for i, g in enumerate(geometry)])

        p1, f1 = self._stage(self.mlp1, points, None, center1, nbr1, cfg.widths[0])
        _, f2 = self._stage(self.mlp2, p1, f1, center2, nbr2, cfg.widths[1])
        return f2.reshape(b, c2, cfg.widths[1]).max(axis=1)

    def encode(self, clouds, geometry: list[BackboneGeometry] | None = None) -> Tensor:
        """Global feature rows (B, widths[1]) for a batch of same-size clouds."""
        if isinstance(clouds, (Tensor, np.ndarray)):
            clouds = [clouds]
        if geometry is None:
            geometry = [backbone_geometry(
                c.data if isinstance(c, Tensor) else np.asarray(c, dtype=np.float64), self.cfg)
                for c in clouds]
        return self.encode_flat(self._flat_points(clouds), len(clouds), geometry)


class PointClassifier(_Backbone):
    """Permutation-invariant logits over K classes; batch in, (B, K) out."""

    def __init__(self, cfg: ClassifierConfig, rng: np.random.Generator):
        super().__init__(cfg, rng)
        self.head = MLP([cfg.widths[1], cfg.head_hidden, cfg.n_classes], rng, final_gain=0.1)

    def __call__(self, clouds, geometry: list[BackboneGeometry] | None = None) -> Tensor:
        return self.head(self.encode(clouds, geometry))

    def forward_flat(self, points: Tensor, b: int, geometry: list[BackboneGeometry]) -> Tensor:
        return self.head(self.encode_flat(points, b, geometry))


class Discriminator(_Backbone):
    """Per-cloud probability in (0, 1) that the cloud is clean; (B, 1) out."""

    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        super().__init__(cfg, rng)
        # small final gain keeps the sigmoid well away from saturation at init
        self.head = MLP([cfg.widths[1], 32, 1], rng, final_gain=0.1)

    def __call__(self, clouds, geometry: list[BackboneGeometry] | None = None) -> Tensor:
        return ag.sigmoid(self.head(self.encode(clouds, geometry)))

    def forward_flat(self, points: Tensor, b: int, geometry: list[BackboneGeometry]) -> Tensor:
        return ag.sigmoid(self.head(self.encode_flat(points, b, geometry)))
