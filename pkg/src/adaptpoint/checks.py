"""End-to-end gradient verification suites.

Shared by the `gradcheck` CLI command and the test suite: one closure per
differentiable operation, plus deep closures through the imitator feedback
loss and the classifier cross-entropy. All randomness is frozen up front so
every closure is a deterministic function of its parameters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autograd as ag
from . import nn
from .autograd import Tensor
from .gradcheck import GradcheckReport, gradcheck
from .imitator import Imitator, ImitatorConfig, compute_geometry
from .models import ClassifierConfig, Discriminator, PointClassifier
from .rng import RngStream
from .simulator import FusionConfig
from .training import adversarial_losses, feedback_loss


@dataclass
class CheckCase:
    name: str
    loss_fn: Callable[[], Tensor]
    params: dict[str, Tensor]
    tol: float


def _away_from(x: np.ndarray, kink: float = 0.0, margin: float = 0.05) -> np.ndarray:
    """Push values at least `margin` away from a kink so FD stays two-sided."""
    shifted = x.copy()
    near = np.abs(shifted - kink) < margin
    shifted[near] += np.where(shifted[near] >= kink, margin, -margin)
    return shifted


def _weighted(out: Tensor, gen: np.random.Generator) -> Tensor:
    w = Tensor(gen.normal(size=out.data.shape))
    return (out * w).sum()


def op_cases(seed: int = 0) -> list[CheckCase]:
    gen = RngStream(seed).generator()
    cases: list[CheckCase] = []

    def case(name, build, tol=1e-6):
        loss_fn, params = build()
        cases.append(CheckCase(name, loss_fn, params, tol))

    def simple(name, fn, data, tol=1e-6):
        def build():
            t = Tensor(data, requires_grad=True)
            red = Tensor(gen.normal(size=np.asarray(fn(t).data).shape))
            return (lambda: (fn(t) * red).sum()), {name: t}
        case(name, build, tol)

    x34 = gen.normal(size=(3, 4))
    row = Tensor(gen.normal(size=(1, 4)))
    col = Tensor(gen.normal(size=(3, 1)))
    denom = Tensor(_away_from(gen.normal(size=(3, 4)), margin=0.5))
    simple("add_broadcast", lambda t: t + row, x34)
    simple("mul_broadcast", lambda t: t * col, x34)
    simple("div", lambda t: t / denom, x34)
    simple("power", lambda t: t ** 3.0, x34)
    simple("exp", ag.exp, x34)
    simple("log", ag.log, np.abs(x34) + 0.5)
    simple("sqrt", ag.sqrt, np.abs(x34) + 0.5)
    simple("sin", ag.sin, x34)
    simple("cos", ag.cos, x34)
    simple("tanh", ag.tanh, x34)
    simple("sigmoid", ag.sigmoid, x34)
    simple("relu", ag.relu, _away_from(gen.normal(size=(3, 4))))
    simple("abs", ag.absolute, _away_from(gen.normal(size=(3, 4))))
    simple("clamp", lambda t: ag.clamp(t, -0.8, 0.8),
           _away_from(_away_from(gen.uniform(-1.5, 1.5, size=(3, 4)), -0.8), 0.8))
    simple("sum_axis", lambda t: t.sum(axis=0), x34)
    simple("mean_axis", lambda t: t.mean(axis=1, keepdims=True), x34)
    simple("max_pool", lambda t: t.max(axis=0), gen.normal(size=(5, 4)))
    simple("softmax", lambda t: ag.softmax(t, axis=-1), gen.normal(size=(4, 5)))
    simple("transpose", lambda t: t.T, x34)
    simple("reshape", lambda t: t.reshape(4, 3), x34)
    simple("getitem_rows", lambda t: t[np.array([2, 0, 2]), :], x34)
    simple("concat_self", lambda t: ag.concat([t, t * 2.0], axis=1), x34)

    def build_linear():
        x = Tensor(gen.normal(size=(5, 3)), requires_grad=True)
        w = Tensor(gen.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(gen.normal(size=4), requires_grad=True)
        red = Tensor(gen.normal(size=(5, 4)))
        return (lambda: ((x @ w + b) * red).sum()), {"x": x, "w": w, "b": b}

    case("linear_bias", build_linear)

    def build_layer_norm():
        ln = nn.LayerNorm(6)
        x = Tensor(gen.normal(size=(4, 6)), requires_grad=True)
        red = Tensor(gen.normal(size=(4, 6)))
        params = {"x": x, "gamma": ln.gamma, "beta": ln.beta}
        return (lambda: (ln(x) * red).sum()), params

    case("layer_norm", build_layer_norm)

    def build_attention():
        mha = nn.MultiHeadAttention(8, 2, gen)
        tokens = Tensor(gen.normal(size=(5, 8)), requires_grad=True)
        positions = gen.normal(size=(5, 3))
        red = Tensor(gen.normal(size=(5, 8)))
        params = {"tokens": tokens}
        params.update(dict(mha.named_parameters(prefix="mha.")))
        return (lambda: (mha(tokens, positions) * red).sum()), params

    case("multi_head_attention", build_attention, tol=1e-5)

    def build_gumbel():
        logits = Tensor(gen.normal(size=(6, 2)), requires_grad=True)
        noise = nn.sample_gumbel((6, 2), gen)
        red = Tensor(gen.normal(size=(6, 2)))
        return (lambda: (nn.gumbel_softmax(logits, 0.7, hard=False, noise=noise) * red).sum()), {
            "logits": logits
        }

    case("gumbel_softmax_soft", build_gumbel)

    def build_ce():
        logits = Tensor(gen.normal(size=(5, 4)), requires_grad=True)
        labels = gen.integers(0, 4, size=5)
        return (lambda: nn.cross_entropy(logits, labels)), {"logits": logits}

    case("cross_entropy", build_ce)

    def build_feedback():
        lc_aug = Tensor(np.array(1.7), requires_grad=True)
        lc_clean = Tensor(np.array(0.9), requires_grad=True)
        return (lambda: feedback_loss(lc_aug, lc_clean, 1.5)), {"lc_aug": lc_aug, "lc_clean": lc_clean}

    case("feedback_loss", build_feedback)

    def build_adversarial():
        pa = Tensor(np.array(0.3), requires_grad=True)
        pc = Tensor(np.array(0.8), requires_grad=True)

        def loss():
            imit, disc = adversarial_losses(pa, pc)
            return imit + disc

        return loss, {"d_on_aug": pa, "d_on_clean": pc}

    case("adversarial_losses", build_adversarial)
    return cases


def small_imitator_setup(seed: int = 0):
    """A reduced imitator/classifier/discriminator trio plus one fixed cloud."""
    stream = RngStream(seed)
    icfg = ImitatorConfig(n_points=48, n_sampled=16, n_anchors=4, feat_dim=16,
                          k_neighbors=4, heads=4)
    ccfg = ClassifierConfig(n_points=48, centers=(16, 8), widths=(16, 16),
                            k_neighbors=4, n_classes=4, head_hidden=16)
    imitator = Imitator(icfg, stream.substream(1).generator(), head_init="random")
    classifier = PointClassifier(ccfg, stream.substream(2).generator())
    discriminator = Discriminator(ccfg, stream.substream(3).generator())
    cloud_gen = stream.substream(4).generator()
    cloud = cloud_gen.normal(size=(icfg.n_points, 3))
    cloud /= np.abs(cloud).max()
    return imitator, classifier, discriminator, cloud, icfg


def imitator_feedback_case(seed: int = 0) -> CheckCase:
    """Full-pipeline closure: adversarial + feedback loss through the imitator.

    Soft mask and frozen gumbel noise keep the closure smooth; classifier and
    discriminator stay frozen, so only imitator parameters are checked.
    """
    imitator, classifier, discriminator, cloud, icfg = small_imitator_setup(seed)
    geometry = compute_geometry(cloud, icfg, imitator.fusion)
    noise = nn.sample_gumbel((icfg.n_points, 2), RngStream(seed).substream(5).generator())
    label = 1
    lc_clean = nn.cross_entropy(classifier(cloud), [label]).item()

    def loss_fn() -> Tensor:
        aug, _, _, _ = imitator.imitate(cloud, hard_mask=False, geometry=geometry,
                                        mask_noise=noise)
        lc_aug = nn.cross_entropy(classifier(aug), [label])
        imit_term, _ = adversarial_losses(discriminator(aug), 0.5)
        return (imit_term + feedback_loss(lc_aug, lc_clean, 1.5)).sum()

    params = dict(imitator.named_parameters(prefix="imitator."))
    return CheckCase("imitator_feedback_closure", loss_fn, params, tol=1e-4)


def classifier_ce_case(seed: int = 0) -> CheckCase:
    _, classifier, _, cloud, _ = small_imitator_setup(seed)

    def loss_fn() -> Tensor:
        return nn.cross_entropy(classifier(cloud), [2])

    params = dict(classifier.named_parameters(prefix="classifier."))
    return CheckCase("classifier_ce_closure", loss_fn, params, tol=1e-5)


def run_suite(seed: int = 0, max_coords: int = 200) -> tuple[float, list[tuple[str, GradcheckReport, float]]]:
    """Run every case; returns (max error over all cases, per-case reports)."""
    reports = []
    worst = 0.0
    for case in op_cases(seed) + [imitator_feedback_case(seed), classifier_ce_case(seed)]:
        report = gradcheck(case.loss_fn, case.params, max_coords=max_coords)
        reports.append((case.name, report, case.tol))
        worst = max(worst, report.max_rel_err)
    return worst, reports
