"""Sample-adaptive corruption imitator.

One network, two heads. A small set-abstraction extractor encodes the input
cloud into per-sample local features; the deformation controller predicts a
bounded scale/rotation/translation triple for each of M farthest-point
anchors; the mask controller predicts a per-point keep probability realized
through a gumbel-softmax. The simulator turns both into an augmented cloud,
differentiably, so the whole pipeline trains end to end.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import geom, simulator
from .autograd import Tensor
from .nn import MLP, Linear, Module, MultiHeadAttention, gumbel_softmax, sample_gumbel
from .simulator import AnchorSets, FusionConfig


@dataclass(frozen=True)
class ImitatorConfig:
    n_points: int = 256  # N, expected input size
    n_sampled: int = 64  # N', set-abstraction centers
    n_anchors: int = 4  # M
    feat_dim: int = 32  # C
    k_neighbors: int = 8  # K
    heads: int = 4
    tau: float = 1.0  # gumbel temperature
    s_max: float = 2.0  # per-axis scale factor bound (>1)
    theta_max: float = math.pi / 6  # per-axis rotation bound (radians)
    t_max: float = 0.25  # per-axis translation bound
    mask_budget: float = 0.5  # max fraction of points a hard mask may drop

    def __post_init__(self) -> None:
        if not (self.n_anchors <= self.n_sampled <= self.n_points):
            raise ValueError(
                f"need M <= N' <= N, got M={self.n_anchors} N'={self.n_sampled} N={self.n_points}"
            )
        if self.k_neighbors > self.n_sampled:
            raise ValueError(f"K={self.k_neighbors} exceeds N'={self.n_sampled}")
        if self.feat_dim % self.heads != 0:
            raise ValueError(f"feat_dim={self.feat_dim} not divisible by heads={self.heads}")
        if self.s_max <= 1.0:
            raise ValueError(f"s_max must exceed 1, got {self.s_max}")
        if self.theta_max <= 0 or self.t_max <= 0 or self.tau <= 0:
            raise ValueError("theta_max, t_max and tau must be positive")
        if not 0.0 <= self.mask_budget <= 1.0:
            raise ValueError(f"mask_budget must lie in [0, 1], got {self.mask_budget}")


@dataclass
class DeformationParams:
    """Raw head outputs plus their mapped physical values, all (M, 3)."""

    raw_scale: Tensor  # sigmoid outputs in (0, 1)
    raw_rotation: Tensor  # tanh outputs in (-1, 1)
    raw_translation: Tensor  # tanh outputs in (-1, 1)
    scale: Tensor  # factors in [1/s_max, s_max]
    angles: Tensor  # radians in [-theta_max, theta_max]
    offset: Tensor  # translations in [-t_max, t_max]


@dataclass
class PointMask:
    """Per-point keep values, (N, 1); {0,1} when hard, (0,1) when soft."""

    values: Tensor
    hard: bool
    soft_keep: np.ndarray  # keep probabilities backing the hard sample


@dataclass
class CloudGeometry:
    """Index structure of one input cloud; constant under differentiation."""

    center_idx: np.ndarray  # (N',) FPS centers of the extractor
    neighbor_idx: np.ndarray  # (N', K) K-NN of each center in the full cloud
    anchor_idx: np.ndarray  # (M,) FPS anchors
    anchor_nbr_idx: np.ndarray  # (M, K) K-NN of each anchor among the centers
    up_idx: np.ndarray  # (N, 3) interpolation sources per point
    up_w: np.ndarray  # (N, 3) interpolation weights per point
    fusion_w: np.ndarray  # (N, M) anchor fusion weights


def compute_geometry(cloud: np.ndarray, cfg: ImitatorConfig, fusion: FusionConfig) -> CloudGeometry:
    pts = geom.as_points(cloud)
    if pts.shape[0] < cfg.n_sampled:
        raise ValueError(f"cloud has {pts.shape[0]} points, need at least N'={cfg.n_sampled}")
    center_idx = geom.fps(pts, cfg.n_sampled, start=0)
    centers = pts[center_idx]
    neighbor_idx = geom.knn(centers, pts, cfg.k_neighbors)
    anchor_idx = geom.fps(pts, cfg.n_anchors, start=0)
    anchors = pts[anchor_idx]
    anchor_nbr_idx = geom.knn(anchors, centers, cfg.k_neighbors)
    up_idx, up_w = geom.idw_weights(centers, pts, k=3)
    fusion_w = simulator.fusion_weights(pts, anchors, fusion)
    return CloudGeometry(center_idx, neighbor_idx, anchor_idx, anchor_nbr_idx, up_idx, up_w, fusion_w)


def _with_global(local: Tensor, global_feat: Tensor) -> Tensor:
    """Concat a (1, C) global feature onto every row of a (T, C) tensor."""
    ones = Tensor(np.ones((local.data.shape[0], 1)))
    return ag.concat([local, global_feat * ones], axis=1)


class Imitator(Module):
    """Feature extractor + deformation controller + mask controller.

    head_init='zeros' (the default) zero-initializes the final layer of every
    prediction head so training starts from the exact identity augmentation;
    'random' gives generic heads for gradient-flow and adaptivity checks.
    """

    def __init__(self, cfg: ImitatorConfig, rng: np.random.Generator,
                 fusion: FusionConfig | None = None, head_init: str = "zeros"):
        if head_init not in ("zeros", "random"):
            raise ValueError(f"unknown head_init {head_init!r}")
        head_init = "zeros" if head_init == "zeros" else "normal"
        c = cfg.feat_dim
        self.cfg = cfg
        self.fusion = fusion or FusionConfig()
        # extractor: per-neighbor (relative xyz | center xyz) -> C, max-pooled
        self.encoder = MLP([6, c, c], rng)
        # deformation controller
        self.anchor_mlp = MLP([c, c, c], rng)
        self.anchor_attn = MultiHeadAttention(c, cfg.heads, rng)
        self.anchor_global = MLP([c, c], rng)
        self.head_sca = Linear(2 * c, 3, rng, init=head_init)
        self.head_rot = Linear(2 * c, 3, rng, init=head_init)
        self.head_trl = Linear(2 * c, 3, rng, init=head_init)
        # mask controller
        self.point_attn = MultiHeadAttention(c, cfg.heads, rng)
        self.point_global = MLP([c, c], rng)
        self.mask_mlp = MLP([2 * c, c, 2], rng, final_init=head_init)

    # -- pipeline stages -----------------------------------------------------

    def extract_features(self, cloud: np.ndarray, geometry: CloudGeometry | None = None
                         ) -> tuple[np.ndarray, Tensor, CloudGeometry]:
        """Sampled centers G (N', 3) and their pooled local features F (N', C)."""
        pts = geom.as_points(cloud)
        g = geometry or compute_geometry(pts, self.cfg, self.fusion)
        centers = pts[g.center_idx]
        nbr = pts[g.neighbor_idx]  # (N', K, 3)
        rel = nbr - centers[:, None, :]
        ctr = np.broadcast_to(centers[:, None, :], nbr.shape)
        feats_in = np.concatenate([rel, ctr], axis=2).reshape(-1, 6)
        encoded = self.encoder(Tensor(feats_in))
        n_s, k = g.neighbor_idx.shape
        pooled = encoded.reshape(n_s, k, self.cfg.feat_dim).max(axis=1)
        return centers, pooled, g

    def aggregate_anchor_features(self, feats: Tensor, g: CloudGeometry) -> Tensor:
        """Per-anchor feature H (M, C): MLP over K nearest center features, max-pooled."""
        m, k = g.anchor_nbr_idx.shape
        gathered = feats[g.anchor_nbr_idx.reshape(-1), :]
        encoded = self.anchor_mlp(gathered)
        return encoded.reshape(m, k, self.cfg.feat_dim).max(axis=1)

    def global_anchor_feature(self, anchor_feats: Tensor) -> Tensor:
        """Global context g (1, C): max over anchors of a per-row embedding."""
        return self.anchor_global(anchor_feats).max(axis=0, keepdims=True)

    def predict_deformation(self, anchor_feats_attn: Tensor, global_feat: Tensor) -> DeformationParams:
        """Bounded per-anchor deformation parameters from [h'_j | g] rows.

        The sigmoid scale output u maps through s_max**(2u - 1), so u = 0.5 is
        exactly factor 1; tanh outputs map linearly onto the angle and offset
        bounds. Zero-initialized heads therefore yield the identity transform.
        """
        x = _with_global(anchor_feats_attn, global_feat)
        raw_sca = ag.sigmoid(self.head_sca(x))
        raw_rot = ag.tanh(self.head_rot(x))
        raw_trl = ag.tanh(self.head_trl(x))
        scale = ag.exp((raw_sca * 2.0 - 1.0) * math.log(self.cfg.s_max))
        return DeformationParams(
            raw_scale=raw_sca,
            raw_rotation=raw_rot,
            raw_translation=raw_trl,
            scale=scale,
            angles=raw_rot * self.cfg.theta_max,
            offset=raw_trl * self.cfg.t_max,
        )

    def upsample_point_features(self, feats: Tensor, g: CloudGeometry) -> Tensor:
        """Lift center features back to full resolution, E (N, C), by IDW."""
        n, k = g.up_idx.shape
        gathered = feats[g.up_idx.reshape(-1), :].reshape(n, k, self.cfg.feat_dim)
        return (gathered * Tensor(g.up_w[:, :, None])).sum(axis=1)

    def predict_mask(self, point_feats_attn: Tensor, global_feat: Tensor,
                     rng: np.random.Generator | None, hard: bool,
                     noise: np.ndarray | None = None) -> PointMask:
        """Per-point keep mask via gumbel-softmax over (keep, drop) logits.

        In hard mode the drop count is capped at mask_budget * N: the excess
        dropped points with the highest keep probability are restored first.
        """
        x = _with_global(point_feats_attn, global_feat)
        logits = self.mask_mlp(x)
        soft = gumbel_softmax(logits, self.cfg.tau, hard=False, rng=rng, noise=noise)
        keep_soft = soft[:, 0:1]
        if not hard:
            return PointMask(values=keep_soft, hard=False, soft_keep=keep_soft.data.copy())
        n = logits.data.shape[0]
        keep_hard = (soft.data[:, 0] >= soft.data[:, 1]).astype(np.float64)
        allowed = int(math.floor(self.cfg.mask_budget * n))
        dropped = np.flatnonzero(keep_hard == 0.0)
        if dropped.size > allowed:
            order = dropped[np.argsort(soft.data[dropped, 0], kind="stable")]
            keep_hard[order[allowed:]] = 1.0
        hard_vals = keep_hard[:, None]
        values = ag.straight_through(keep_soft, hard_vals)
        return PointMask(values=values, hard=True, soft_keep=soft.data[:, 0].copy())

    # -- full pipeline ---------------------------------------------------------

    def imitate(self, cloud: np.ndarray, rng: np.random.Generator | None = None, *,
                hard_mask: bool = True, use_deformation: bool = True, use_mask: bool = True,
                geometry: CloudGeometry | None = None,
                mask_noise: np.ndarray | None = None,
                ) -> tuple[Tensor, DeformationParams, PointMask, AnchorSets]:
        """Run the full augmentation pipeline on one cloud.

        Returns (augmented cloud, deformation parameters, mask, anchor sets).
        Disabled stages degrade to the identity: `use_deformation=False` pins
        the deformation at identity, `use_mask=False` keeps every point.
        """
        pts = geom.as_points(cloud)
        n = pts.shape[0]
        g = geometry or compute_geometry(pts, self.cfg, self.fusion)
        centers, feats, g = self.extract_features(pts, g)
        anchors = pts[g.anchor_idx]

        if use_deformation:
            anchor_feats = self.aggregate_anchor_features(feats, g)
            attn_feats = self.anchor_attn(anchor_feats, anchors)
            global_feat = self.global_anchor_feature(anchor_feats)
            params = self.predict_deformation(attn_feats, global_feat)
        else:
            scale, angles, offset = simulator.identity_params(self.cfg.n_anchors)
            params = DeformationParams(
                raw_scale=Tensor(np.full((self.cfg.n_anchors, 3), 0.5)),
                raw_rotation=Tensor(np.zeros((self.cfg.n_anchors, 3))),
                raw_translation=Tensor(np.zeros((self.cfg.n_anchors, 3))),
                scale=scale, angles=angles, offset=offset,
            )

        sets = simulator.per_anchor_deform(pts, anchors, params.scale, params.angles, params.offset)
        fused = sets.candidates[0] * Tensor(g.fusion_w[:, 0:1])
        for i in range(1, len(sets.candidates)):
            fused = fused + sets.candidates[i] * Tensor(g.fusion_w[:, i : i + 1])

        if use_mask:
            point_feats = self.upsample_point_features(feats, g)
            point_attn = self.point_attn(point_feats, pts)
            z = self.point_global(point_feats).max(axis=0, keepdims=True)
            mask = self.predict_mask(point_attn, z, rng, hard=hard_mask, noise=mask_noise)
            augmented = simulator.apply_mask(fused, mask.values, mode="multiply")
        else:
            mask = PointMask(values=Tensor(np.ones((n, 1))), hard=True, soft_keep=np.ones(n))
            augmented = fused
        return augmented, params, mask, sets


    # -- batched pipeline -------------------------------------------------------

    def imitate_batch(self, clouds: list[np.ndarray], geometry: list[CloudGeometry],
                      gens: list[np.random.Generator] | None = None, *,
                      hard_mask: bool = True, use_deformation: bool = True,
                      use_mask: bool = True,
                      mask_noise: list[np.ndarray] | None = None) -> Tensor:
        """Augment a batch of same-size clouds as one flat graph.

        Returns a (B*N, 3) tensor; row block i holds sample i. Matches the
        per-sample :meth:`imitate` output (same noise) up to float rounding,
        but runs the whole batch through shared tensor ops, which is what
        makes the training loop affordable.
        """
        b = len(clouds)
        if b == 0:
            raise ValueError("empty batch")
        if len(geometry) != b:
            raise ValueError(f"got {len(geometry)} geometry entries for {b} clouds")
        cfg = self.cfg
        n = cfg.n_points
        c = cfg.feat_dim
        m = cfg.n_anchors
        k = cfg.k_neighbors
        pts = np.stack([geom.as_points(cl) for cl in clouds])  # (B, N, 3)
        if pts.shape[1] != n:
            raise ValueError(f"expected {n}-point clouds, got {pts.shape[1]}")
        flat = pts.reshape(-1, 3)
        n_s = cfg.n_sampled

        center_idx = np.concatenate([g.center_idx + i * n for i, g in enumerate(geometry)])
        nbr_idx = np.concatenate([g.neighbor_idx + i * n for i, g in enumerate(geometry)])
        centers = flat[center_idx]
        nbr = flat[nbr_idx.reshape(-1)].reshape(-1, k, 3)
        feats_in = np.concatenate(
            [nbr - centers[:, None, :], np.broadcast_to(centers[:, None, :], nbr.shape)], axis=2
        ).reshape(-1, 6)
        feats = self.encoder(Tensor(feats_in)).reshape(b * n_s, k, c).max(axis=1)

        anchors = np.stack([pt[g.anchor_idx] for pt, g in zip(pts, geometry)])  # (B, M, 3)

        if use_deformation:
            anchor_nbr = np.concatenate(
                [g.anchor_nbr_idx + i * n_s for i, g in enumerate(geometry)]
            )
            gathered = feats[anchor_nbr.reshape(-1), :]
            anchor_feats = self.anchor_mlp(gathered).reshape(b * m, k, c).max(axis=1)
            attn = self.anchor_attn(anchor_feats.reshape(b, m, c), anchors).reshape(-1, c)
            global_feat = self.anchor_global(anchor_feats).reshape(b, m, c).max(axis=1, keepdims=True)
            global_rows = (global_feat * Tensor(np.ones((1, m, 1)))).reshape(-1, c)
            x = ag.concat([attn, global_rows], axis=1)
            raw_sca = ag.sigmoid(self.head_sca(x))
            scale = ag.exp((raw_sca * 2.0 - 1.0) * math.log(cfg.s_max))
            angles = ag.tanh(self.head_rot(x)) * cfg.theta_max
            offset = ag.tanh(self.head_trl(x)) * cfg.t_max
        else:
            scale = Tensor(np.ones((b * m, 3)))
            angles = Tensor(np.zeros((b * m, 3)))
            offset = Tensor(np.zeros((b * m, 3)))

        # per-(sample, anchor) deformation over (B*M, N, 3) blocks
        base = (pts[:, None, :, :] - anchors[:, :, None, :]).reshape(b * m, n, 3)
        q = Tensor(base) * scale.reshape(b * m, 1, 3)
        a_ang = angles[:, 0:1].reshape(-1, 1, 1)
        b_ang = angles[:, 1:2].reshape(-1, 1, 1)
        c_ang = angles[:, 2:3].reshape(-1, 1, 1)
        x3, y3, z3 = q[:, :, 0:1], q[:, :, 1:2], q[:, :, 2:3]
        cc, sc = ag.cos(c_ang), ag.sin(c_ang)
        x3, y3 = x3 * cc + y3 * sc, y3 * cc - x3 * sc
        cb, sb = ag.cos(b_ang), ag.sin(b_ang)
        x3, z3 = x3 * cb - z3 * sb, z3 * cb + x3 * sb
        ca, sa = ag.cos(a_ang), ag.sin(a_ang)
        y3, z3 = y3 * ca + z3 * sa, z3 * ca - y3 * sa
        rotated = ag.concat([x3, y3, z3], axis=2)
        cand = rotated + offset.reshape(b * m, 1, 3) + Tensor(anchors.reshape(b * m, 1, 3))

        fusion_w = np.stack([g.fusion_w for g in geometry])  # (B, N, M)
        cand_by_point = ag.swap_axes(cand.reshape(b, m, n, 3), 1, 2)  # (B, N, M, 3)
        fused = (cand_by_point * Tensor(fusion_w[:, :, :, None])).sum(axis=2)  # (B, N, 3)

        if not use_mask:
            return fused.reshape(-1, 3)

        up_idx = np.concatenate([g.up_idx + i * n_s for i, g in enumerate(geometry)])
        up_w = np.concatenate([g.up_w for g in geometry])
        point_feats = (feats[up_idx.reshape(-1), :].reshape(b * n, 3, c)
                       * Tensor(up_w[:, :, None])).sum(axis=1)
        point_attn = self.point_attn(point_feats.reshape(b, n, c), pts).reshape(-1, c)
        z = self.point_global(point_feats).reshape(b, n, c).max(axis=1, keepdims=True)
        z_rows = (z * Tensor(np.ones((1, n, 1)))).reshape(-1, c)
        logits = self.mask_mlp(ag.concat([point_attn, z_rows], axis=1))

        if mask_noise is not None:
            noise = np.concatenate(mask_noise, axis=0)
        else:
            if gens is None:
                raise ValueError("either gens or frozen mask_noise must be provided")
            noise = np.concatenate([sample_gumbel((n, 2), g) for g in gens], axis=0)
        soft = gumbel_softmax(logits, cfg.tau, hard=False, noise=noise)
        keep_soft = soft[:, 0:1]
        if not hard_mask:
            return (fused.reshape(-1, 3) * keep_soft)
        keep_hard = (soft.data[:, 0] >= soft.data[:, 1]).astype(np.float64)
        allowed = int(math.floor(cfg.mask_budget * n))
        for i in range(b):
            block = slice(i * n, (i + 1) * n)
            kh = keep_hard[block]
            dropped = np.flatnonzero(kh == 0.0)
            if dropped.size > allowed:
                order = dropped[np.argsort(soft.data[block][dropped, 0], kind="stable")]
                kh[order[allowed:]] = 1.0
        values = ag.straight_through(keep_soft, keep_hard[:, None])
        return fused.reshape(-1, 3) * values


def select_anchors(cloud: np.ndarray, m: int) -> np.ndarray:
    """Anchor coordinates: the first M farthest-point samples from index 0."""
    pts = geom.as_points(cloud)
    return pts[geom.fps(pts, m, start=0)]
