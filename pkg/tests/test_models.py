import numpy as np
import pytest

from adaptpoint import geom
from adaptpoint.autograd import no_grad
from adaptpoint.models import BackboneConfig, ClassifierConfig, Discriminator, PointClassifier
from adaptpoint.rng import RngStream

CFG = ClassifierConfig(n_points=128, centers=(32, 8), widths=(16, 32), k_neighbors=4,
                       n_classes=5, head_hidden=16)


def make_cloud(seed=0, n=128):
    gen = np.random.default_rng(seed)
    return geom.normalize_unit_sphere(gen.normal(size=(n, 3)))


def test_config_validation():
    with pytest.raises(ValueError):
        ClassifierConfig(centers=(8, 32))
    with pytest.raises(ValueError):
        ClassifierConfig(n_points=64, centers=(128, 32))
    with pytest.raises(ValueError):
        ClassifierConfig(n_classes=1)


def test_classifier_shape_and_finiteness():
    model = PointClassifier(CFG, RngStream(0).generator())
    with no_grad():
        logits = model(make_cloud())
    assert logits.data.shape == (1, 5)
    assert np.isfinite(logits.data).all()


def test_classifier_rejects_wrong_point_count():
    model = PointClassifier(CFG, RngStream(1).generator())
    with pytest.raises(ValueError):
        model(np.zeros((64, 3)))


def test_classifier_permutation_invariance():
    model = PointClassifier(CFG, RngStream(2).generator())
    cloud = make_cloud(3)
    with no_grad():
        base = model(cloud).data
        gen = np.random.default_rng(4)
        worst = 0.0
        for _ in range(100):
            out = model(cloud[gen.permutation(len(cloud))]).data
            worst = max(worst, np.abs(out - base).max())
    assert worst <= 1e-5, worst


def test_classifier_invariance_with_duplicated_points():
    # duplicates happen after resampling; ties must not break invariance
    model = PointClassifier(CFG, RngStream(5).generator())
    cloud = make_cloud(6, n=100)
    cloud = np.concatenate([cloud, cloud[:28]], axis=0)
    with no_grad():
        base = model(cloud).data
        gen = np.random.default_rng(7)
        for _ in range(20):
            out = model(cloud[gen.permutation(len(cloud))]).data
            assert np.abs(out - base).max() <= 1e-5


def test_discriminator_output_in_unit_interval():
    disc = Discriminator(BackboneConfig(n_points=128, centers=(32, 8), widths=(16, 32),
                                        k_neighbors=4), RngStream(8).generator())
    with no_grad():
        for seed in range(20):
            p = disc(make_cloud(seed)).item()
            assert 0.05 < p < 0.95


def test_discriminator_permutation_invariance():
    disc = Discriminator(BackboneConfig(n_points=128, centers=(32, 8), widths=(16, 32),
                                        k_neighbors=4), RngStream(9).generator())
    cloud = make_cloud(10)
    with no_grad():
        base = disc(cloud).item()
        gen = np.random.default_rng(11)
        for _ in range(100):
            out = disc(cloud[gen.permutation(len(cloud))]).item()
            assert abs(out - base) <= 1e-5


def test_classifier_gradcheck():
    from adaptpoint.checks import classifier_ce_case
    from adaptpoint.gradcheck import gradcheck

    case = classifier_ce_case(seed=1)
    report = gradcheck(case.loss_fn, case.params, max_coords=30)
    assert report.max_rel_err <= case.tol
