"""Deterministic geometric primitives shared across the library.

All functions operate on (N, 3) float64 arrays, are pure functions of their
inputs, and break every distance tie by lowest index so that results are
identical across runs and platforms. Brute force throughout: clouds stay
small enough (N <= 4096) that acceleration structures would be noise.
"""
from __future__ import annotations

import numpy as np

IDW_EPS = 1e-8


def as_points(points: np.ndarray, name: str = "points") -> np.ndarray:
    """Validate and return an (N, 3) float64 view/copy of `points`.

    Raises ValueError on wrong shape, empty input, or non-finite coordinates.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3); got {pts.shape}")
    if pts.shape[0] < 1:
        raise ValueError(f"{name} must contain at least one point")
    if not np.isfinite(pts).all():
        raise ValueError(f"{name} contains non-finite coordinates")
    return pts


def lexicographic_start(points: np.ndarray) -> int:
    """Index of the lexicographically smallest (x, y, z) point.

    A permutation-invariant FPS start: any reordering of the same coordinates
    selects the same physical point (ties resolve to equal coordinates).
    """
    pts = as_points(points)
    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))
    return int(order[0])


def fps(points: np.ndarray, m: int, start: int = 0) -> np.ndarray:
    """Greedy farthest-point sampling: `m` indices, max-min selection.

    The first index is `start`; each subsequent index maximizes the minimum
    Euclidean distance to all previously selected points, ties going to the
    lowest index. For moderate N the full pairwise table is precomputed;
    both paths evaluate the identical per-pair expression, so they select
    identical indices.
    """
    pts = as_points(points)
    n = pts.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"m must satisfy 1 <= m <= N={n}; got {m}")
    if not 0 <= start < n:
        raise ValueError(f"start index {start} out of range for N={n}")
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = start
    if m >= 8 and n <= 2048:
        table = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        d2 = table[start].copy()
        for i in range(1, m):
            nxt = int(np.argmax(d2))  # first occurrence == lowest index on ties
            chosen[i] = nxt
            np.minimum(d2, table[nxt], out=d2)
        return chosen
    # squared distances preserve the argmax and the tie structure
    d2 = ((pts - pts[start]) ** 2).sum(axis=1)
    for i in range(1, m):
        nxt = int(np.argmax(d2))
        chosen[i] = nxt
        d2 = np.minimum(d2, ((pts - pts[nxt]) ** 2).sum(axis=1))
    return chosen


def knn(queries: np.ndarray, reference: np.ndarray, k: int) -> np.ndarray:
    """Per query, indices of the k nearest reference points.

    Sorted ascending by Euclidean distance, ties by lowest index. Returns an
    integer matrix of shape (len(queries), k).
    """
    q = as_points(queries, "queries")
    ref = as_points(reference, "reference")
    if not 1 <= k <= ref.shape[0]:
        raise ValueError(f"k must satisfy 1 <= k <= |reference|={ref.shape[0]}; got {k}")
    d2 = ((q[:, None, :] - ref[None, :, :]) ** 2).sum(axis=2)
    # stable sort keeps the lowest index first among equal distances
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def knn_fast(queries: np.ndarray, reference: np.ndarray, k: int) -> np.ndarray:
    """Throughput variant of :func:`knn` for hot model paths.

    BLAS-formed distances plus argpartition: deterministic, and ascending by
    distance like `knn`, but equal distances at the selection boundary may
    resolve to a different (equal-coordinate) duplicate, and may order
    differently inside the result. Downstream consumers gather coordinates
    or per-point features and pool symmetrically, so any tie choice yields
    identical values.
    """
    q = np.asarray(queries, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    n_ref = ref.shape[0]
    if not 1 <= k <= n_ref:
        raise ValueError(f"k must satisfy 1 <= k <= |reference|={n_ref}; got {k}")
    d2 = (q * q).sum(axis=1)[:, None] - 2.0 * (q @ ref.T) + (ref * ref).sum(axis=1)[None, :]
    if k == n_ref:
        part = np.broadcast_to(np.arange(n_ref), d2.shape)
    else:
        part = np.argpartition(d2, k - 1, axis=1)[:, :k]
    sub = np.take_along_axis(d2, part, axis=1)
    order = np.argsort(sub, axis=1, kind="stable")
    return np.take_along_axis(part, order, axis=1)


def euler_to_rotation(angles) -> np.ndarray:
    """3x3 rotation matrix R = Rz(c) @ Ry(b) @ Rx(a) for angles (a, b, c).

    Orthonormal with det +1; applies to column vectors (v' = R @ v).
    """
    a, b, c = (float(v) for v in angles)
    if not all(np.isfinite([a, b, c])):
        raise ValueError(f"angles must be finite, got {(a, b, c)}")
    ca, sa = np.cos(a), np.sin(a)
    cb, sb = np.cos(b), np.sin(b)
    cc, sc = np.cos(c), np.sin(c)
    rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
    ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    rz = np.array([[cc, -sc, 0], [sc, cc, 0], [0, 0, 1]])
    return rz @ ry @ rx


def normalize_unit_sphere(points: np.ndarray) -> np.ndarray:
    """Center at the centroid and scale so the farthest point has norm 1.

    If all points coincide the scale step is skipped (output is all zeros).
    """
    pts = as_points(points)
    centered = pts - pts.mean(axis=0)
    r = np.sqrt((centered**2).sum(axis=1).max())
    if r > 0.0:
        centered = centered / r
    return centered


def idw_weights(
    src_points: np.ndarray, dst_points: np.ndarray, k: int = 3, eps: float = IDW_EPS
) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-distance weights of each dst point over its k nearest sources.

    Returns (idx, w), both (|dst|, k); each weight row is a convex combination
    (entries in [0, 1], summing to 1). `eps` guards zero distances, so a dst
    point coinciding with a source gets nearly all weight on it.
    """
    src = as_points(src_points, "src_points")
    if src.shape[0] < k:
        raise ValueError(f"need at least k={k} source points, got {src.shape[0]}")
    dst = as_points(dst_points, "dst_points")
    idx = knn(dst, src, k)
    d = np.sqrt(((dst[:, None, :] - src[idx]) ** 2).sum(axis=2))
    w = 1.0 / (d + eps)
    w = w / w.sum(axis=1, keepdims=True)
    return idx, w


def idw_interpolate(
    src_points: np.ndarray,
    src_feats: np.ndarray,
    dst_points: np.ndarray,
    k: int = 3,
    eps: float = IDW_EPS,
) -> np.ndarray:
    """Interpolate per-source features onto dst points by k-NN inverse distance."""
    feats = np.asarray(src_feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] != np.asarray(src_points).shape[0]:
        raise ValueError(
            f"src_feats must be (|src|, C); got {feats.shape} for {np.asarray(src_points).shape[0]} sources"
        )
    idx, w = idw_weights(src_points, dst_points, k=k, eps=eps)
    return (w[:, :, None] * feats[idx]).sum(axis=1)
