"""Synthetic datasets, point-cloud file formats, manifests, and resampling.

Two interchangeable file formats: `xyz` (one "x y z" line per point, 9
significant digits) and `pcb` (magic PCB1, u32 little-endian count, then
count*3 little-endian f32). Datasets are generated from parametric shapes
with uniform surface sampling and a random pose, then unit-sphere normalized.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geom
from .rng import RngStream

DATA_MAGIC = "ADAPTPOINT-DATA v1"
PCB_MAGIC = b"PCB1"
SHAPES = ("sphere", "cube", "cylinder", "cone", "torus", "plane")

# fixed shape parameters, recorded here for reproducibility
TORUS_MAJOR = 1.0
TORUS_MINOR = 0.35
CONE_HALF_ANGLE = math.radians(30.0)
CYLINDER_RADIUS = 0.5


class CloudFormatError(ValueError):
    """Unreadable cloud file; message carries the offending offset/line."""


@dataclass
class Sample:
    points: np.ndarray
    label: int


@dataclass(frozen=True)
class SyntheticConfig:
    classes: tuple[str, ...] = SHAPES
    per_class: int = 100
    n_points: int = 256
    rotation_max: float = math.pi  # per-axis pose angle bound
    scale_range: tuple[float, float] = (0.8, 1.2)  # anisotropic pose scale
    train_fraction: float = 0.8

    def __post_init__(self) -> None:
        if len(self.classes) < 2:
            raise ValueError("need at least 2 classes")
        unknown = [c for c in self.classes if c not in SHAPES]
        if unknown:
            raise ValueError(f"unknown shape classes {unknown}; available: {SHAPES}")
        if self.n_points < 64:
            raise ValueError(f"n_points must be >= 64, got {self.n_points}")
        if self.per_class < 1:
            raise ValueError("per_class must be positive")


@dataclass
class ManifestRecord:
    path: str
    label: int
    split: str  # "train" | "test"


@dataclass
class DatasetManifest:
    seed: int
    n_points: int
    classes: tuple[str, ...]
    records: list[ManifestRecord] = field(default_factory=list)


# -- parametric surface sampling ---------------------------------------------------


def _sample_sphere(gen: np.random.Generator, n: int) -> np.ndarray:
    v = gen.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sample_cube(gen: np.random.Generator, n: int) -> np.ndarray:
    face = gen.integers(0, 6, size=n)
    uv = gen.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    for i in range(n):
        others = [a for a in range(3) if a != axis[i]]
        pts[i, axis[i]] = sign[i]
        pts[i, others[0]] = uv[i, 0]
        pts[i, others[1]] = uv[i, 1]
    return pts


def _sample_cylinder(gen: np.random.Generator, n: int) -> np.ndarray:
    r, h = CYLINDER_RADIUS, 2.0
    lateral = 2.0 * math.pi * r * h
    caps = 2.0 * math.pi * r * r
    on_side = gen.random(n) < lateral / (lateral + caps)
    theta = gen.uniform(0.0, 2.0 * math.pi, size=n)
    pts = np.empty((n, 3))
    for i in range(n):
        if on_side[i]:
            z = gen.uniform(-1.0, 1.0)
            pts[i] = (r * math.cos(theta[i]), r * math.sin(theta[i]), z)
        else:
            rad = r * math.sqrt(gen.random())
            z = 1.0 if gen.random() < 0.5 else -1.0
            pts[i] = (rad * math.cos(theta[i]), rad * math.sin(theta[i]), z)
    return pts


def _sample_cone(gen: np.random.Generator, n: int) -> np.ndarray:
    # apex at (0, 0, 1), base disc at z = -1
    h = 2.0
    r = h * math.tan(CONE_HALF_ANGLE)
    slant = math.sqrt(r * r + h * h)
    lateral = math.pi * r * slant
    base = math.pi * r * r
    on_side = gen.random(n) < lateral / (lateral + base)
    theta = gen.uniform(0.0, 2.0 * math.pi, size=n)
    pts = np.empty((n, 3))
    for i in range(n):
        if on_side[i]:
            t = math.sqrt(gen.random())  # uniform over the lateral surface
            rad = t * r
            pts[i] = (rad * math.cos(theta[i]), rad * math.sin(theta[i]), 1.0 - t * h)
        else:
            rad = r * math.sqrt(gen.random())
            pts[i] = (rad * math.cos(theta[i]), rad * math.sin(theta[i]), -1.0)
    return pts


def _sample_torus(gen: np.random.Generator, n: int) -> np.ndarray:
    # rejection on the surface-area Jacobian keeps the sampling uniform
    ratio = TORUS_MINOR / TORUS_MAJOR
    pts = np.empty((n, 3))
    count = 0
    while count < n:
        u = gen.uniform(0.0, 2.0 * math.pi)
        v = gen.uniform(0.0, 2.0 * math.pi)
        if gen.random() >= (1.0 + ratio * math.cos(v)) / (1.0 + ratio):
            continue
        w = TORUS_MAJOR + TORUS_MINOR * math.cos(v)
        pts[count] = (w * math.cos(u), w * math.sin(u), TORUS_MINOR * math.sin(v))
        count += 1
    return pts


def _sample_plane(gen: np.random.Generator, n: int) -> np.ndarray:
    uv = gen.uniform(-1.0, 1.0, size=(n, 2))
    return np.concatenate([uv, np.zeros((n, 1))], axis=1)


_SAMPLERS = {
    "sphere": _sample_sphere,
    "cube": _sample_cube,
    "cylinder": _sample_cylinder,
    "cone": _sample_cone,
    "torus": _sample_torus,
    "plane": _sample_plane,
}


def sample_shape(shape: str, gen: np.random.Generator, n: int) -> np.ndarray:
    if shape not in _SAMPLERS:
        raise ValueError(f"unknown shape {shape!r}")
    return _SAMPLERS[shape](gen, n)


def generate_synthetic(cfg: SyntheticConfig, out_dir, seed: int) -> DatasetManifest:
    """Write one file per sample plus a manifest; byte-identical per seed.

    Every sample owns the sub-stream (class index, sample index); the pose is
    a uniform per-axis rotation and anisotropic scale, and each class gets an
    exact train/test split decided by a seeded permutation.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    root = RngStream(seed)
    manifest = DatasetManifest(seed=seed, n_points=cfg.n_points, classes=tuple(cfg.classes))
    n_train = round(cfg.per_class * cfg.train_fraction)
    for label, shape in enumerate(cfg.classes):
        split_gen = root.substream(label, 0xFACE).generator()
        order = split_gen.permutation(cfg.per_class)
        is_train = np.zeros(cfg.per_class, dtype=bool)
        is_train[order[:n_train]] = True
        for j in range(cfg.per_class):
            gen = root.substream(label, j).generator()
            pts = sample_shape(shape, gen, cfg.n_points)
            angles = gen.uniform(-cfg.rotation_max, cfg.rotation_max, size=3)
            scales = gen.uniform(cfg.scale_range[0], cfg.scale_range[1], size=3)
            pts = (pts * scales) @ geom.euler_to_rotation(angles).T
            pts = geom.normalize_unit_sphere(pts)
            rel = f"{shape}_{j:04d}.pcb"
            write_cloud(out_dir / rel, pts, fmt="pcb")
            manifest.records.append(
                ManifestRecord(rel, label, "train" if is_train[j] else "test")
            )
    write_dataset_manifest(out_dir / "dataset.manifest", manifest)
    return manifest


# -- file formats ----------------------------------------------------------------


def write_cloud(path, points: np.ndarray, fmt: str = "pcb") -> None:
    pts = geom.as_points(points)
    path = Path(path)
    if fmt == "pcb":
        data = pts.astype("<f4")
        path.write_bytes(PCB_MAGIC + struct.pack("<I", pts.shape[0]) + data.tobytes())
    elif fmt == "xyz":
        lines = [f"{x:.9g} {y:.9g} {z:.9g}" for x, y, z in pts]
        path.write_text("\n".join(lines) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")


def read_cloud(path, fmt: str | None = None) -> np.ndarray:
    path = Path(path)
    if fmt is None:
        fmt = "pcb" if path.suffix == ".pcb" else "xyz"
    if fmt == "pcb":
        raw = path.read_bytes()
        if len(raw) < len(PCB_MAGIC) + 4:
            raise CloudFormatError(f"{path}: truncated header at offset {len(raw)}")
        if raw[: len(PCB_MAGIC)] != PCB_MAGIC:
            raise CloudFormatError(f"{path}: bad magic at offset 0")
        (count,) = struct.unpack("<I", raw[4:8])
        expected = 8 + 12 * count
        if len(raw) != expected:
            raise CloudFormatError(
                f"{path}: expected {expected} bytes for {count} points, got {len(raw)} (offset 8)"
            )
        pts = np.frombuffer(raw[8:], dtype="<f4").astype(np.float64).reshape(count, 3)
        if count < 1:
            raise CloudFormatError(f"{path}: empty cloud")
        if not np.isfinite(pts).all():
            bad = int(np.flatnonzero(~np.isfinite(pts).all(axis=1))[0])
            raise CloudFormatError(f"{path}: non-finite point at offset {8 + 12 * bad}")
        return pts
    if fmt == "xyz":
        rows = []
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 3:
                raise CloudFormatError(f"{path}:{lineno}: expected 3 values, got {len(parts)}")
            try:
                rows.append([float(v) for v in parts])
            except ValueError as exc:
                raise CloudFormatError(f"{path}:{lineno}: {exc}") from None
        if not rows:
            raise CloudFormatError(f"{path}: empty cloud")
        pts = np.asarray(rows, dtype=np.float64)
        if not np.isfinite(pts).all():
            raise CloudFormatError(f"{path}: non-finite coordinate")
        return pts
    raise ValueError(f"unknown format {fmt!r}")


def write_dataset_manifest(path, manifest: DatasetManifest) -> None:
    classes = ",".join(manifest.classes)
    lines = [f"{DATA_MAGIC} seed={manifest.seed} n={manifest.n_points} classes={classes}"]
    for r in manifest.records:
        lines.append(f"{r.path} {r.label} {r.split}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_dataset_manifest(path) -> DatasetManifest:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith(DATA_MAGIC):
        raise CloudFormatError(f"{path}: missing header {DATA_MAGIC!r}")
    fields = dict(part.split("=", 1) for part in lines[0].split()[2:])
    manifest = DatasetManifest(
        seed=int(fields["seed"]),
        n_points=int(fields["n"]),
        classes=tuple(fields["classes"].split(",")),
    )
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3 or parts[2] not in ("train", "test"):
            raise CloudFormatError(f"{path}:{lineno}: malformed record {line!r}")
        label = int(parts[1])
        if label >= len(manifest.classes):
            raise CloudFormatError(f"{path}:{lineno}: label {label} out of range")
        manifest.records.append(ManifestRecord(parts[0], label, parts[2]))
    return manifest


def load_split(manifest_path, split: str) -> list[Sample]:
    """Load all samples of one split ('train' | 'test' | 'all'), in manifest order."""
    manifest = read_dataset_manifest(manifest_path)
    base = Path(manifest_path).parent
    out = []
    for r in manifest.records:
        if split != "all" and r.split != split:
            continue
        out.append(Sample(points=read_cloud(base / r.path), label=r.label))
    return out


def resample_to_n(points: np.ndarray, n: int, rng: RngStream) -> np.ndarray:
    """Force a cloud to exactly n points: FPS subsample or random duplication."""
    pts = geom.as_points(points)
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if pts.shape[0] == n:
        return pts
    if pts.shape[0] > n:
        return pts[geom.fps(pts, n, start=0)]
    extra = rng.generator().integers(0, pts.shape[0], size=n - pts.shape[0])
    return np.concatenate([pts, pts[extra]], axis=0)
