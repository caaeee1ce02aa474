"""Losses and the three-player co-training loop.

Per batch, three sequential updates: (1) the discriminator learns to tell
clean clouds from augmented ones, (2) the imitator follows the adversarial
pull toward plausibility plus a feedback term that keeps the augmented
classification loss near beta times the clean loss, (3) the classifier
trains on an even mix of clean and augmented samples. The difficulty knob
beta rises linearly across epochs. Single-threaded and bit-deterministic
for a fixed seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import geom
from .autograd import Tensor, no_grad
from .checkpoint import save_checkpoint
from .dataio import Sample
from .imitator import CloudGeometry, Imitator, ImitatorConfig, compute_geometry
from .models import (
    BackboneConfig,
    BackboneGeometry,
    ClassifierConfig,
    Discriminator,
    PointClassifier,
    backbone_geometry,
)
from .nn import cross_entropy
from .optim import Adam
from .rng import RngStream
from .simulator import FusionConfig

PROB_EPS = 1e-7
GAP_CLAMP = 20.0


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    lam: float = 1.0  # feedback weight
    beta_start: float = 1.0
    beta_end: float = 2.0
    lr_imitator: float = 1e-4
    lr_discriminator: float = 4e-4
    lr_classifier: float = 2e-3
    use_feedback: bool = True
    use_adversarial: bool = True
    use_deformation: bool = True
    use_mask: bool = True

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")
        if not (self.beta_end >= self.beta_start >= 1.0):
            raise ValueError(f"beta schedule must satisfy 1 <= start <= end, got "
                             f"{self.beta_start}..{self.beta_end}")
        if min(self.lr_imitator, self.lr_discriminator, self.lr_classifier) <= 0:
            raise ValueError("learning rates must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class LossReport:
    lc_clean: float
    lc_aug: float
    l_feed: float
    l_adv_imitator: float
    l_disc: float
    beta: float

    def validate(self) -> None:
        vals = [self.lc_clean, self.lc_aug, self.l_feed, self.l_adv_imitator, self.l_disc]
        if not all(math.isfinite(v) for v in vals):
            raise FloatingPointError(f"non-finite loss report: {self}")
        if self.l_feed < 0:
            raise FloatingPointError(f"feedback loss must be non-negative: {self}")


def feedback_loss(lc_aug, lc_clean, beta: float):
    """|1 - exp(g)| with g = lc_aug - beta*lc_clean clamped to +-20.

    Zero exactly when the augmented loss sits at beta times the clean loss;
    grows in either direction away from that target.
    """
    if beta < 1.0:
        raise ValueError(f"beta must be >= 1, got {beta}")
    gap = ag.as_tensor(lc_aug) - beta * ag.as_tensor(lc_clean)
    return ag.absolute(1.0 - ag.exp(ag.clamp(gap, -GAP_CLAMP, GAP_CLAMP)))


def adversarial_losses(d_on_aug, d_on_clean):
    """(imitator term, discriminator term) from two cleanliness probabilities.

    Non-saturating split: the imitator pushes its outputs toward looking
    clean via -log D(aug); the discriminator averages the usual two-sided
    log loss. Probabilities are clamped away from 0 and 1.
    """
    pa = ag.clamp(ag.as_tensor(d_on_aug), PROB_EPS, 1.0 - PROB_EPS)
    pc = ag.clamp(ag.as_tensor(d_on_clean), PROB_EPS, 1.0 - PROB_EPS)
    imitator_term = -ag.log(pa)
    disc_term = -(ag.log(pc) + ag.log(1.0 - pa)) * 0.5
    return imitator_term, disc_term


def beta_at(epoch: int, cfg: TrainConfig) -> float:
    """Linear interpolation beta_start -> beta_end over the epoch range."""
    if not 0 <= epoch < max(cfg.epochs, 1):
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if cfg.epochs <= 1:
        return cfg.beta_start
    t = epoch / (cfg.epochs - 1)
    return cfg.beta_start + (cfg.beta_end - cfg.beta_start) * t


@dataclass
class Players:
    """The three co-trained networks plus their optimizers."""

    imitator: Imitator
    classifier: PointClassifier
    discriminator: Discriminator
    opt_imitator: Adam
    opt_classifier: Adam
    opt_discriminator: Adam


def build_players(cfg: TrainConfig, imitator_cfg: ImitatorConfig,
                  classifier_cfg: ClassifierConfig,
                  fusion: FusionConfig | None = None) -> Players:
    seed = RngStream(cfg.seed)
    imitator = Imitator(imitator_cfg, seed.substream(1).generator(), fusion=fusion)
    classifier = PointClassifier(classifier_cfg, seed.substream(2).generator())
    disc_cfg = BackboneConfig(
        n_points=classifier_cfg.n_points,
        centers=classifier_cfg.centers,
        widths=classifier_cfg.widths,
        k_neighbors=classifier_cfg.k_neighbors,
    )
    discriminator = Discriminator(disc_cfg, seed.substream(3).generator())
    return Players(
        imitator=imitator,
        classifier=classifier,
        discriminator=discriminator,
        opt_imitator=Adam(imitator.parameters(), cfg.lr_imitator),
        opt_classifier=Adam(classifier.parameters(), cfg.lr_classifier),
        opt_discriminator=Adam(discriminator.parameters(), cfg.lr_discriminator),
    )


def train_step(players: Players, batch: list[Sample], geo: list[CloudGeometry],
               clean_bb: list[BackboneGeometry], beta: float, cfg: TrainConfig,
               rng: RngStream) -> tuple[LossReport, int]:
    """One three-phase update; returns (batch-mean loss report, #correct clean).

    The augmented batch comes from a single grad-enabled imitator pass over
    the whole batch: its detached values feed the discriminator and
    classifier phases (the imitator is only updated in phase two, so the
    values are identical to a frozen pass), while the live graph drives the
    imitator update. The identity ablation (deformation and mask both off)
    skips the imitator and discriminator entirely.
    """
    b = len(batch)
    n = players.classifier.cfg.n_points
    labels = np.array([s.label for s in batch], dtype=np.int64)
    clean_flat = Tensor(np.concatenate([s.points for s in batch], axis=0))
    identity_aug = not (cfg.use_deformation or cfg.use_mask)

    l_disc = 0.0
    l_adv = 0.0
    l_feed = 0.0

    if not identity_aug:
        gens = [rng.substream(1, i).generator() for i in range(b)]
        flat_live = players.imitator.imitate_batch(
            [s.points for s in batch], geo, gens, hard_mask=True,
            use_deformation=cfg.use_deformation, use_mask=cfg.use_mask,
        )
        flat_frozen = Tensor(flat_live.data)
        aug_coords = flat_live.data.reshape(b, n, 3)
        aug_bb = [backbone_geometry(aug_coords[i], players.classifier.cfg) for i in range(b)]

        # (1) discriminator: clean vs frozen augmented
        if cfg.use_adversarial:
            d_clean = players.discriminator.forward_flat(clean_flat, b, clean_bb)
            d_aug = players.discriminator.forward_flat(flat_frozen, b, aug_bb)
            _, disc_terms = adversarial_losses(d_aug, d_clean)
            disc_loss = disc_terms.mean()
            players.opt_discriminator.zero_grad()
            disc_loss.backward()
            players.opt_discriminator.step()
            players.opt_discriminator.zero_grad()
            l_disc = disc_loss.item()

        # (2) imitator: adversarial pull + difficulty feedback
        if cfg.use_adversarial or cfg.use_feedback:
            parts = []
            if cfg.use_adversarial:
                d_live = players.discriminator.forward_flat(flat_live, b, aug_bb)
                imit_terms, _ = adversarial_losses(d_live, 0.5)
                adv_mean = imit_terms.mean()
                parts.append(adv_mean)
                l_adv = adv_mean.item()
            if cfg.use_feedback:
                with no_grad():
                    clean_ng = players.classifier.forward_flat(clean_flat, b, clean_bb)
                    lc_clean_rows = cross_entropy(clean_ng, labels, reduction="none").data
                aug_logits = players.classifier.forward_flat(flat_live, b, aug_bb)
                lc_aug_rows = cross_entropy(aug_logits, labels, reduction="none")
                feed_mean = feedback_loss(lc_aug_rows, Tensor(lc_clean_rows), beta).mean()
                parts.append(cfg.lam * feed_mean)
                l_feed = feed_mean.item()
            imit_loss = parts[0]
            for extra in parts[1:]:
                imit_loss = imit_loss + extra
            for module in (players.imitator, players.classifier, players.discriminator):
                module.zero_grad()
            imit_loss.backward()
            players.opt_imitator.step()
            for module in (players.imitator, players.classifier, players.discriminator):
                module.zero_grad()

    # (3) classifier: even mix of clean and (frozen) augmented samples
    clean_logits = players.classifier.forward_flat(clean_flat, b, clean_bb)
    lc_clean_t = cross_entropy(clean_logits, labels)
    if identity_aug:
        class_loss = lc_clean_t
        lc_aug_val = lc_clean_t.item()
    else:
        aug_logits_frozen = players.classifier.forward_flat(flat_frozen, b, aug_bb)
        lc_aug_t = cross_entropy(aug_logits_frozen, labels)
        class_loss = 0.5 * (lc_clean_t + lc_aug_t)
        lc_aug_val = lc_aug_t.item()
    players.opt_classifier.zero_grad()
    class_loss.backward()
    players.opt_classifier.step()
    players.opt_classifier.zero_grad()
    correct = int((np.argmax(clean_logits.data, axis=1) == labels).sum())

    report = LossReport(
        lc_clean=lc_clean_t.item(),
        lc_aug=lc_aug_val,
        l_feed=l_feed,
        l_adv_imitator=l_adv,
        l_disc=l_disc,
        beta=beta,
    )
    report.validate()
    return report, correct


@dataclass
class TrainResult:
    checkpoints: list[Path]
    log_path: Path
    final_train_accuracy: float
    reports: list[LossReport] = field(default_factory=list)


def _full_state(players: Players) -> dict[str, np.ndarray]:
    state = players.imitator.state_dict(prefix="imitator.")
    state.update(players.classifier.state_dict(prefix="classifier."))
    state.update(players.discriminator.state_dict(prefix="discriminator."))
    return state


def train(samples: list[Sample], cfg: TrainConfig, out_dir,
          imitator_cfg: ImitatorConfig | None = None,
          classifier_cfg: ClassifierConfig | None = None,
          fusion: FusionConfig | None = None) -> TrainResult:
    """Run the co-training loop over `samples`; write checkpoints and a log.

    The metrics log has one tab-separated line per epoch:
    epoch, lc_clean, lc_aug, l_feed, l_adv, l_disc, beta, train_acc.
    """
    if not samples:
        raise ValueError("training set must not be empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    # single-threaded BLAS: bit-determinism, and faster on these small kernels
    import threadpoolctl

    with threadpoolctl.threadpool_limits(limits=1):
        return _train_inner(samples, cfg, out_dir, imitator_cfg, classifier_cfg, fusion)


def _train_inner(samples, cfg, out_dir, imitator_cfg, classifier_cfg, fusion) -> "TrainResult":
    n = samples[0].points.shape[0]
    imitator_cfg = imitator_cfg or ImitatorConfig(n_points=n)
    n_classes = max(s.label for s in samples) + 1
    classifier_cfg = classifier_cfg or ClassifierConfig(n_points=n, n_classes=n_classes)
    for s in samples:
        if s.points.shape[0] != n:
            raise ValueError("all training clouds must share the same point count")

    players = build_players(cfg, imitator_cfg, classifier_cfg, fusion)
    fusion = fusion or FusionConfig()
    # clean clouds never change, so their index structure is computed once
    if cfg.use_deformation or cfg.use_mask:
        geometry = [compute_geometry(s.points, imitator_cfg, fusion) for s in samples]
    else:
        geometry = [None] * len(samples)
    clean_bb = [backbone_geometry(s.points, players.classifier.cfg) for s in samples]

    root = RngStream(cfg.seed)
    checkpoints = [out_dir / "ckpt_init.adpt"]
    save_checkpoint(checkpoints[0], _full_state(players))
    log_lines: list[str] = []
    reports: list[LossReport] = []
    final_acc = 0.0

    for epoch in range(cfg.epochs):
        beta = beta_at(epoch, cfg)
        order = root.substream(10, epoch).generator().permutation(len(samples))
        epoch_reports: list[LossReport] = []
        correct = 0
        for b0 in range(0, len(samples), cfg.batch_size):
            idx = order[b0 : b0 + cfg.batch_size]
            batch = [samples[i] for i in idx]
            geo = [geometry[i] for i in idx]
            bb = [clean_bb[i] for i in idx]
            step_rng = root.substream(20, epoch, b0)
            report, n_correct = train_step(players, batch, geo, bb, beta, cfg, step_rng)
            epoch_reports.append(report)
            correct += n_correct
        acc = correct / len(samples)
        final_acc = acc
        mean = LossReport(
            lc_clean=float(np.mean([r.lc_clean for r in epoch_reports])),
            lc_aug=float(np.mean([r.lc_aug for r in epoch_reports])),
            l_feed=float(np.mean([r.l_feed for r in epoch_reports])),
            l_adv_imitator=float(np.mean([r.l_adv_imitator for r in epoch_reports])),
            l_disc=float(np.mean([r.l_disc for r in epoch_reports])),
            beta=beta,
        )
        reports.append(mean)
        log_lines.append(
            f"{epoch}\t{mean.lc_clean:.6f}\t{mean.lc_aug:.6f}\t{mean.l_feed:.6f}"
            f"\t{mean.l_adv_imitator:.6f}\t{mean.l_disc:.6f}\t{mean.beta:.6f}\t{acc:.6f}"
        )
        ckpt = out_dir / f"ckpt_epoch_{epoch:04d}.adpt"
        save_checkpoint(ckpt, _full_state(players))
        checkpoints.append(ckpt)

    log_path = out_dir / "train_log.tsv"
    log_path.write_text("\n".join(log_lines) + ("\n" if log_lines else ""))
    return TrainResult(checkpoints=checkpoints, log_path=log_path,
                       final_train_accuracy=final_acc, reports=reports)
