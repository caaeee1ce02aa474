"""Deterministic test-time corruption families.

Seven families at five severities each, independent of any learned model:
per-axis scaling, Gaussian jitter, global/local point dropping, global/local
point adding, and rotation. Severity parameters live in a SeverityTable so a
published benchmark's calibration can be substituted wholesale.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataio, geom
from .rng import RngStream, mix64

FAMILIES = ("Scale", "Jitter", "DropGlobal", "DropLocal", "AddGlobal", "AddLocal", "Rotate")
SEVERITIES = (1, 2, 3, 4, 5)
SUITE_MAGIC = "ADAPTPOINT-SUITE v1"


@dataclass(frozen=True)
class CorruptionSpec:
    family: str
    severity: int

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown corruption family {self.family!r}; expected one of {FAMILIES}")
        if self.severity not in SEVERITIES:
            raise ValueError(f"severity must be in {SEVERITIES}, got {self.severity}")


def _default(fn) -> tuple[float, ...]:
    return tuple(fn(level) for level in SEVERITIES)


@dataclass(frozen=True)
class SeverityTable:
    """Per-family 5-entry parameter vectors, strictly monotone in severity."""

    scale_bound: tuple = _default(lambda l: 1.0 + 0.2 * l)  # factors log-uniform in [1/s, s]
    jitter_sigma: tuple = _default(lambda l: 0.01 * l)
    # 50 degrees max: past ~55 the chamfer response of rotationally symmetric
    # shapes flattens and severity ordering would no longer be measurable
    rotate_bound_deg: tuple = _default(lambda l: 10.0 * l)
    drop_global_fraction: tuple = _default(lambda l: 0.125 + 0.125 * l)
    drop_local_fraction: tuple = _default(lambda l: 0.05 * l * 1.5)
    add_fraction: tuple = _default(lambda l: 0.1 * l)  # both add families
    cluster_count: tuple = _default(lambda l: min(8, l + 1))  # drop/add local centers
    add_local_sigma: float = 0.075
    add_local_clip: float = 1.1

    def __post_init__(self) -> None:
        for name in ("scale_bound", "jitter_sigma", "rotate_bound_deg",
                     "drop_global_fraction", "drop_local_fraction", "add_fraction"):
            vec = getattr(self, name)
            if len(vec) != 5:
                raise ValueError(f"{name} must have 5 entries, got {len(vec)}")
            if any(b <= a for a, b in zip(vec, vec[1:])):
                raise ValueError(f"{name} must be strictly increasing in severity: {vec}")
        if len(self.cluster_count) != 5 or any(b < a for a, b in zip(self.cluster_count, self.cluster_count[1:])):
            raise ValueError(f"cluster_count must be non-decreasing: {self.cluster_count}")


DEFAULT_TABLE = SeverityTable()


def _unit_ball(rng: np.random.Generator, count: int) -> np.ndarray:
    direction = rng.normal(size=(count, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = rng.random(count) ** (1.0 / 3.0)
    return direction * radius[:, None]


def _split_total(rng: np.random.Generator, total: int, bins: int) -> np.ndarray:
    """Random split of `total` across `bins` (multinomial, uniform)."""
    return rng.multinomial(total, np.full(bins, 1.0 / bins))


def apply_corruption(cloud: np.ndarray, spec: CorruptionSpec, rng: RngStream,
                     table: SeverityTable = DEFAULT_TABLE) -> np.ndarray:
    """Corrupt a unit-sphere-normalized cloud; pure in (cloud, spec, rng).

    Drop families return a subset of the input, add families a superset; the
    output point count may differ from N.
    """
    pts = geom.as_points(cloud)
    n = pts.shape[0]
    if n < 64:
        raise ValueError(f"corruptions expect N >= 64 points, got {n}")
    level = spec.severity
    i = level - 1
    gen = rng.generator()

    if spec.family == "Scale":
        # per-axis |log factor| drawn from this severity's band so adjacent
        # levels stay separated; the factor always lies in [1/s_l, s_l]
        hi = math.log(table.scale_bound[i])
        lo = math.log(table.scale_bound[i - 1]) if i > 0 else 0.0
        magnitude = gen.uniform(lo, hi, size=3)
        sign = np.where(gen.random(3) < 0.5, -1.0, 1.0)
        return pts * np.exp(sign * magnitude)

    if spec.family == "Jitter":
        return pts + gen.normal(0.0, table.jitter_sigma[i], size=pts.shape)

    if spec.family == "Rotate":
        # per-axis |angle| in this severity's band, random sign; bounded by
        # the table's angle bound for the level
        hi = math.radians(table.rotate_bound_deg[i])
        lo = math.radians(table.rotate_bound_deg[i - 1]) if i > 0 else 0.0
        magnitude = gen.uniform(lo, hi, size=3)
        sign = np.where(gen.random(3) < 0.5, -1.0, 1.0)
        return pts @ geom.euler_to_rotation(sign * magnitude).T

    if spec.family == "DropGlobal":
        drop = int(n * table.drop_global_fraction[i])
        doomed = gen.choice(n, size=drop, replace=False)
        keep = np.setdiff1d(np.arange(n), doomed, assume_unique=True)
        return pts[keep]

    if spec.family == "DropLocal":
        total = int(n * table.drop_local_fraction[i])
        clusters = int(table.cluster_count[i])
        centers = pts[gen.choice(n, size=clusters, replace=False)]
        counts = _split_total(gen, total, clusters)
        alive = np.ones(n, dtype=bool)
        for center, count in zip(centers, counts):
            count = min(int(count), int(alive.sum()) - 1)  # never drop the last point
            if count <= 0:
                continue
            live_idx = np.flatnonzero(alive)
            d2 = ((pts[live_idx] - center) ** 2).sum(axis=1)
            nearest = live_idx[np.argsort(d2, kind="stable")[:count]]
            alive[nearest] = False
        return pts[alive]

    if spec.family == "AddGlobal":
        extra = _unit_ball(gen, int(n * table.add_fraction[i]))
        return np.concatenate([pts, extra], axis=0)

    if spec.family == "AddLocal":
        total = int(n * table.add_fraction[i])
        clusters = int(table.cluster_count[i])
        centers = pts[gen.choice(n, size=clusters, replace=False)]
        counts = _split_total(gen, total, clusters)
        blobs = [pts]
        for center, count in zip(centers, counts):
            if count == 0:
                continue
            blob = center + gen.normal(0.0, table.add_local_sigma, size=(int(count), 3))
            norms = np.linalg.norm(blob, axis=1, keepdims=True)
            over = norms[:, 0] > table.add_local_clip
            if over.any():
                blob[over] *= table.add_local_clip / norms[over]
            blobs.append(blob)
        return np.concatenate(blobs, axis=0)

    raise AssertionError(f"unhandled family {spec.family}")


def chamfer_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean nearest-neighbor distance between two clouds."""
    pa = geom.as_points(a, "a")
    pb = geom.as_points(b, "b")
    d2 = ((pa[:, None, :] - pb[None, :, :]) ** 2).sum(axis=2)
    ab = np.sqrt(d2.min(axis=1)).mean()
    ba = np.sqrt(d2.min(axis=0)).mean()
    return 0.5 * (ab + ba)


def stream_for(sample_index: int, family: str, severity: int) -> int:
    """Stable sub-stream label for one (sample, family, severity) cell."""
    return mix64(sample_index, FAMILIES.index(family), severity)


@dataclass
class SuiteRecord:
    path: str
    family: str
    severity: int
    sample_index: int
    point_count: int


@dataclass
class SuiteManifest:
    seed: int
    records: list[SuiteRecord] = field(default_factory=list)


def _build_one_sample(job) -> list[SuiteRecord]:
    idx, cloud, out_dir, seed, table, families, severities = job
    records = []
    for family in families:
        for severity in severities:
            spec = CorruptionSpec(family, severity)
            stream = RngStream(seed, stream_for(idx, family, severity))
            corrupted = apply_corruption(cloud, spec, stream, table)
            rel = f"s{idx:05d}_{family}_l{severity}.pcb"
            dataio.write_cloud(Path(out_dir) / rel, corrupted, fmt="pcb")
            records.append(SuiteRecord(rel, family, severity, idx, corrupted.shape[0]))
    return records


def build_suite(dataset: list[np.ndarray], out_dir, seed: int,
                table: SeverityTable = DEFAULT_TABLE,
                families: tuple[str, ...] = FAMILIES,
                severities: tuple[int, ...] = SEVERITIES,
                threads: int = 1) -> SuiteManifest:
    """Write every (sample, family, severity) corruption plus a manifest.

    Each cell owns the stream (seed, stream_for(sample, family, severity)),
    so regeneration with the same seed is byte-identical, any subset can be
    rebuilt independently, and the worker count cannot change the output.
    """
    if not dataset:
        raise ValueError("dataset must not be empty")
    for fam in families:
        if fam not in FAMILIES:
            raise ValueError(f"unknown corruption family {fam!r}")
    for sev in severities:
        if sev not in SEVERITIES:
            raise ValueError(f"severity must be in {SEVERITIES}, got {sev}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(idx, cloud, str(out_dir), seed, table, tuple(families), tuple(severities))
            for idx, cloud in enumerate(dataset)]
    manifest = SuiteManifest(seed=seed)
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=threads) as pool:
            for records in pool.map(_build_one_sample, jobs):
                manifest.records.extend(records)
    else:
        for job in jobs:
            manifest.records.extend(_build_one_sample(job))
    write_suite_manifest(out_dir / "suite.manifest", manifest)
    return manifest


def write_suite_manifest(path, manifest: SuiteManifest) -> None:
    lines = [f"{SUITE_MAGIC} seed={manifest.seed}"]
    for r in manifest.records:
        lines.append(f"{r.path} {r.family} {r.severity} {r.sample_index} {r.point_count}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_suite_manifest(path) -> SuiteManifest:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith(SUITE_MAGIC):
        raise ValueError(f"{path}: missing suite header {SUITE_MAGIC!r}")
    header = text[0].split()
    seed = int(header[-1].split("=", 1)[1])
    manifest = SuiteManifest(seed=seed)
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"{path}:{lineno}: malformed record {line!r}")
        manifest.records.append(
            SuiteRecord(parts[0], parts[1], int(parts[2]), int(parts[3]), int(parts[4]))
        )
    return manifest
