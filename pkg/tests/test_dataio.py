import numpy as np
import pytest

from adaptpoint import dataio, geom
from adaptpoint.corruptions import chamfer_distance
from adaptpoint.dataio import (
    CloudFormatError,
    SyntheticConfig,
    generate_synthetic,
    read_cloud,
    read_dataset_manifest,
    resample_to_n,
    sample_shape,
    write_cloud,
)
from adaptpoint.rng import RngStream


def test_binary_round_trip_exact(tmp_path):
    pts = np.random.default_rng(0).normal(size=(33, 3)).astype(np.float32).astype(np.float64)
    p = tmp_path / "c.pcb"
    write_cloud(p, pts, fmt="pcb")
    assert np.array_equal(read_cloud(p), pts)


def test_text_round_trip_close(tmp_path):
    gen = np.random.default_rng(1)
    pts = gen.normal(size=(20, 3)) * 1e-3 + gen.normal(size=(20, 3))
    p = tmp_path / "c.xyz"
    write_cloud(p, pts, fmt="xyz")
    assert np.abs(read_cloud(p) - pts).max() <= 1e-8


def test_empty_and_corrupt_files_rejected(tmp_path):
    p = tmp_path / "bad.pcb"
    p.write_bytes(b"")
    with pytest.raises(CloudFormatError):
        read_cloud(p)
    p.write_bytes(b"XXXX\x01\x00\x00\x00" + b"\x00" * 12)
    with pytest.raises(CloudFormatError, match="magic"):
        read_cloud(p)
    good = tmp_path / "good.pcb"
    write_cloud(good, np.ones((4, 3)))
    truncated = tmp_path / "trunc.pcb"
    truncated.write_bytes(good.read_bytes()[:-3])
    with pytest.raises(CloudFormatError, match="offset"):
        read_cloud(truncated)
    t = tmp_path / "bad.xyz"
    t.write_text("1 2\n")
    with pytest.raises(CloudFormatError, match="expected 3"):
        read_cloud(t)
    t.write_text("1 2 nan\n")
    with pytest.raises(CloudFormatError):
        read_cloud(t)


def test_sphere_samples_have_unit_norm():
    pts = sample_shape("sphere", np.random.default_rng(2), 500)
    assert np.abs(np.linalg.norm(pts, axis=1) - 1.0).max() <= 1e-6


def test_every_shape_produces_finite_clouds():
    for shape in dataio.SHAPES:
        pts = sample_shape(shape, np.random.default_rng(3), 200)
        assert pts.shape == (200, 3)
        assert np.isfinite(pts).all()


def test_generate_synthetic_counts_and_split(tmp_path):
    cfg = SyntheticConfig(per_class=10, n_points=64)
    manifest = generate_synthetic(cfg, tmp_path, seed=7)
    assert len(manifest.records) == 60
    n_train = sum(r.split == "train" for r in manifest.records)
    assert n_train == 48 and len(manifest.records) - n_train == 12
    # every record resolves, is normalized, and respects the class id range
    for r in manifest.records:
        pts = read_cloud(tmp_path / r.path)
        assert pts.shape == (64, 3)
        assert r.label < len(manifest.classes)
        assert np.linalg.norm(pts, axis=1).max() <= 1.0 + 1e-6


def test_generate_synthetic_is_byte_deterministic(tmp_path):
    cfg = SyntheticConfig(classes=("sphere", "cube"), per_class=5, n_points=64)
    generate_synthetic(cfg, tmp_path / "a", seed=11)
    generate_synthetic(cfg, tmp_path / "b", seed=11)
    for f in sorted((tmp_path / "a").iterdir()):
        assert (tmp_path / "b" / f.name).read_bytes() == f.read_bytes()


def test_manifest_round_trip(tmp_path):
    cfg = SyntheticConfig(classes=("torus", "plane"), per_class=3, n_points=64)
    manifest = generate_synthetic(cfg, tmp_path, seed=1)
    loaded = read_dataset_manifest(tmp_path / "dataset.manifest")
    assert loaded.seed == 1
    assert loaded.classes == ("torus", "plane")
    assert [(r.path, r.label, r.split) for r in loaded.records] == \
        [(r.path, r.label, r.split) for r in manifest.records]


def test_resample_identity_shrink_grow():
    gen = np.random.default_rng(4)
    pts = gen.normal(size=(50, 3))
    same = resample_to_n(pts, 50, RngStream(0))
    assert np.array_equal(same, pts)
    one = resample_to_n(pts, 1, RngStream(0))
    assert one.shape == (1, 3)
    assert any(np.array_equal(one[0], p) for p in pts)
    small = resample_to_n(pts, 20, RngStream(0))
    members = {tuple(p) for p in pts}
    assert all(tuple(p) in members for p in small)
    big = resample_to_n(pts, 80, RngStream(0))
    assert big.shape == (80, 3)
    assert np.array_equal(big[:50], pts)
    assert all(tuple(p) in members for p in big[50:])


def test_synthetic_classes_are_chamfer_separable(tmp_path):
    # 5-NN chamfer classifier on raw data: the desk-scale task must be learnable
    cfg = SyntheticConfig(per_class=25, n_points=128)
    generate_synthetic(cfg, tmp_path, seed=23)
    train = dataio.load_split(tmp_path / "dataset.manifest", "train")
    test = dataio.load_split(tmp_path / "dataset.manifest", "test")
    correct = 0
    for sample in test:
        dists = [(chamfer_distance(sample.points, t.points), t.label) for t in train]
        dists.sort(key=lambda pair: pair[0])
        votes = np.bincount([lab for _, lab in dists[:5]], minlength=len(cfg.classes))
        correct += int(np.argmax(votes) == sample.label)
    accuracy = correct / len(test)
    assert accuracy >= 0.8, accuracy
