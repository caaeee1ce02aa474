import math

import numpy as np
import pytest

from adaptpoint import dataio, geom
from adaptpoint.autograd import Tensor
from adaptpoint.imitator import ImitatorConfig, compute_geometry
from adaptpoint.models import ClassifierConfig, backbone_geometry
from adaptpoint.rng import RngStream
from adaptpoint.simulator import FusionConfig
from adaptpoint.training import (
    TrainConfig,
    adversarial_losses,
    beta_at,
    build_players,
    feedback_loss,
    train,
    train_step,
)

SMALL_ICFG = ImitatorConfig(n_points=64, n_sampled=16, n_anchors=4, feat_dim=16, k_neighbors=4)
SMALL_CCFG = ClassifierConfig(n_points=64, centers=(16, 8), widths=(16, 16),
                              k_neighbors=4, n_classes=3, head_hidden=16)


def tiny_dataset(n_per_class=4, n_points=64, seed=0):
    gen = np.random.default_rng(seed)
    samples = []
    for label, stretch in enumerate(((1, 1, 1), (3, 1, 0.3), (1, 3, 3))):
        for _ in range(n_per_class):
            pts = gen.normal(size=(n_points, 3)) * np.array(stretch)
            samples.append(dataio.Sample(points=geom.normalize_unit_sphere(pts), label=label))
    return samples


def make_setup(seed=0, **flags):
    cfg = TrainConfig(epochs=1, batch_size=4, seed=seed, **flags)
    players = build_players(cfg, SMALL_ICFG, SMALL_CCFG, None)
    samples = tiny_dataset()
    fusion = FusionConfig()
    geo = [compute_geometry(s.points, SMALL_ICFG, fusion) for s in samples]
    bb = [backbone_geometry(s.points, SMALL_CCFG) for s in samples]
    return cfg, players, samples, geo, bb


# -- losses ---------------------------------------------------------------------


def test_feedback_loss_analytic_points():
    assert feedback_loss(1.5, 1.0, 1.5).item() == 0.0
    assert feedback_loss(math.log(2.0), 0.0, 1.0).item() == pytest.approx(1.0)
    assert feedback_loss(-math.log(2.0), 0.0, 1.0).item() == pytest.approx(0.5)


def test_feedback_loss_monotone_in_gap():
    gaps = np.arange(-5.0, 5.0, 1e-3)
    vals = np.array([feedback_loss(g, 0.0, 1.0).item() for g in gaps])
    neg = gaps < 0
    assert np.all(np.diff(vals[neg]) < 0)
    assert np.all(np.diff(vals[~neg][1:]) > 0)


def test_feedback_loss_clamps_extreme_gaps():
    assert np.isfinite(feedback_loss(1e6, 0.0, 1.0).item())
    assert feedback_loss(25.0, 0.0, 1.0).item() == feedback_loss(30.0, 0.0, 1.0).item()


def test_feedback_loss_rejects_beta_below_one():
    with pytest.raises(ValueError):
        feedback_loss(1.0, 1.0, 0.5)


def test_adversarial_losses_analytic_points():
    imit, disc = adversarial_losses(1.0 - 1e-9, 0.5)
    assert imit.item() <= 1e-6
    imit, disc = adversarial_losses(0.5, 0.5)
    assert disc.item() == pytest.approx(math.log(2.0))


def test_adversarial_imitator_term_strictly_decreasing():
    probs = np.linspace(0.01, 0.99, 99)
    vals = [adversarial_losses(p, 0.5)[0].item() for p in probs]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_adversarial_losses_survive_saturated_probs():
    imit, disc = adversarial_losses(0.0, 1.0)
    assert np.isfinite(imit.item()) and np.isfinite(disc.item())


def test_beta_schedule_endpoints_and_midpoint():
    cfg = TrainConfig(epochs=11)
    assert beta_at(0, cfg) == 1.0
    assert beta_at(10, cfg) == 2.0
    assert beta_at(5, cfg) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        beta_at(11, cfg)
    assert np.all(np.diff([beta_at(e, cfg) for e in range(11)]) >= 0)


# -- train_step -----------------------------------------------------------------


def param_hashes(module):
    return {name: p.data.tobytes() for name, p in module.named_parameters()}


def test_step_updates_are_isolated_per_phase():
    cfg, players, samples, geo, bb = make_setup()
    batch, bgeo, bbb = samples[:4], geo[:4], bb[:4]

    before_i = param_hashes(players.imitator)
    before_c = param_hashes(players.classifier)
    before_d = param_hashes(players.discriminator)
    train_step(players, batch, bgeo, bbb, 1.0, cfg, RngStream(0))
    assert param_hashes(players.imitator) != before_i
    assert param_hashes(players.classifier) != before_c
    assert param_hashes(players.discriminator) != before_d


def test_step_with_all_imitator_losses_off_freezes_imitator():
    cfg, players, samples, geo, bb = make_setup(use_feedback=False, use_adversarial=False)
    before_i = param_hashes(players.imitator)
    before_d = param_hashes(players.discriminator)
    report, _ = train_step(players, samples[:4], geo[:4], bb[:4], 1.0, cfg, RngStream(0))
    assert param_hashes(players.imitator) == before_i
    assert param_hashes(players.discriminator) == before_d
    assert report.l_feed == 0.0 and report.l_adv_imitator == 0.0


def test_identity_ablation_trains_classifier_on_clean_only():
    cfg, players, samples, geo, bb = make_setup(use_deformation=False, use_mask=False)
    before_c = param_hashes(players.classifier)
    report, _ = train_step(players, samples[:4], [None] * 4, bb[:4], 1.0, cfg, RngStream(0))
    assert param_hashes(players.classifier) != before_c
    assert report.lc_aug == report.lc_clean


def test_step_report_is_reproducible():
    r1, _ = train_step(*_fresh_step_args(seed=7))
    r2, _ = train_step(*_fresh_step_args(seed=7))
    assert r1 == r2


def _fresh_step_args(seed):
    cfg, players, samples, geo, bb = make_setup(seed=seed)
    return players, samples[:4], geo[:4], bb[:4], 1.25, cfg, RngStream(seed)


# -- train ----------------------------------------------------------------------


def test_zero_epochs_writes_initial_checkpoint_only(tmp_path):
    samples = tiny_dataset()
    res = train(samples, TrainConfig(epochs=0, batch_size=4, seed=0), tmp_path,
                imitator_cfg=SMALL_ICFG, classifier_cfg=SMALL_CCFG)
    assert len(res.checkpoints) == 1
    assert res.checkpoints[0].name == "ckpt_init.adpt"
    assert res.checkpoints[0].exists()


def test_same_seed_gives_identical_final_checkpoint(tmp_path):
    samples = tiny_dataset()
    cfg = TrainConfig(epochs=2, batch_size=4, seed=3)
    res1 = train(samples, cfg, tmp_path / "a", imitator_cfg=SMALL_ICFG, classifier_cfg=SMALL_CCFG)
    res2 = train(samples, cfg, tmp_path / "b", imitator_cfg=SMALL_ICFG, classifier_cfg=SMALL_CCFG)
    assert res1.checkpoints[-1].read_bytes() == res2.checkpoints[-1].read_bytes()
    assert res1.log_path.read_text() == res2.log_path.read_text()


def test_identity_ablation_matches_clean_baseline_run(tmp_path):
    # disabling both imitator stages must reduce exactly to clean-only training
    samples = tiny_dataset()
    cfg = TrainConfig(epochs=2, batch_size=4, seed=5, use_deformation=False, use_mask=False)
    res1 = train(samples, cfg, tmp_path / "a", imitator_cfg=SMALL_ICFG, classifier_cfg=SMALL_CCFG)
    res2 = train(samples, cfg, tmp_path / "b", imitator_cfg=SMALL_ICFG, classifier_cfg=SMALL_CCFG)
    assert res1.checkpoints[-1].read_bytes() == res2.checkpoints[-1].read_bytes()


def test_log_format_has_eight_tab_separated_columns(tmp_path):
    samples = tiny_dataset()
    res = train(samples, TrainConfig(epochs=2, batch_size=4, seed=1), tmp_path,
                imitator_cfg=SMALL_ICFG, classifier_cfg=SMALL_CCFG)
    lines = res.log_path.read_text().strip().split("\n")
    assert len(lines) == 2
    for i, line in enumerate(lines):
        cols = line.split("\t")
        assert len(cols) == 8
        assert int(cols[0]) == i
        assert all(math.isfinite(float(c)) for c in cols[1:])


def test_losses_stay_finite_over_a_short_run(tmp_path):
    samples = tiny_dataset()
    res = train(samples, TrainConfig(epochs=3, batch_size=4, seed=2), tmp_path,
                imitator_cfg=SMALL_ICFG, classifier_cfg=SMALL_CCFG)
    for report in res.reports:
        report.validate()
    betas = [r.beta for r in res.reports]
    assert betas[0] == 1.0 and betas[-1] == 2.0
    assert all(b >= 1.0 for b in betas)
    assert all(y >= x for x, y in zip(betas, betas[1:]))


def test_batched_imitate_matches_per_sample_path():
    from adaptpoint.nn import sample_gumbel

    cfg, players, samples, geo, bb = make_setup(seed=11)
    im = players.imitator
    batch = samples[:3]
    noise = [sample_gumbel((64, 2), RngStream(50, i).generator()) for i in range(3)]
    flat = im.imitate_batch([s.points for s in batch], geo[:3], None,
                            hard_mask=True, mask_noise=noise)
    for i, s in enumerate(batch):
        single, _, _, _ = im.imitate(s.points, None, hard_mask=True,
                                     geometry=geo[i], mask_noise=noise[i])
        block = flat.data[i * 64:(i + 1) * 64]
        assert np.abs(block - single.data).max() <= 1e-9, i
