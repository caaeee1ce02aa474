"""Command-line entry point: the full workflow as subcommands.

Every command funnels randomness through --seed, resolves its configuration
from defaults plus an optional key=value --config file, writes the resolved
configuration to <out>/run.meta, and finishes with one machine-readable
summary line `OK <command> <key metrics>` (non-zero exit and a one-line
reason otherwise).
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, corruptions, dataio, evaluation, geom, render, training
from .autograd import no_grad
from .config import Config
from .imitator import Imitator
from .models import PointClassifier
from .rng import RngStream


def _common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, default=0, help="64-bit master seed")
    sub.add_argument("--threads", type=int, default=1,
                     help="worker count for embarrassingly parallel stages")
    sub.add_argument("--out", type=Path, required=True, help="output directory")
    sub.add_argument("--config", type=Path, default=None,
                     help="key=value file overriding any default")


def _setup(args, command: str) -> Config:
    cfg = Config.from_file(args.config) if args.config else Config()
    args.out.mkdir(parents=True, exist_ok=True)
    cfg.write_meta(args.out / "run.meta",
                   extra={"command": command, "seed": args.seed, "threads": args.threads})
    return cfg


def cmd_gen_data(args) -> int:
    cfg = _setup(args, "gen-data")
    manifest = dataio.generate_synthetic(cfg.synthetic(), args.out, seed=args.seed)
    n_train = sum(1 for r in manifest.records if r.split == "train")
    n_test = len(manifest.records) - n_train
    print(f"OK gen-data files={len(manifest.records)} train={n_train} test={n_test} "
          f"manifest={args.out / 'dataset.manifest'}")
    return 0


def cmd_corrupt(args) -> int:
    cfg = _setup(args, "corrupt")
    families = tuple(args.families.split(",")) if args.families else corruptions.FAMILIES
    severities = tuple(int(s) for s in args.severities.split(",")) if args.severities \
        else corruptions.SEVERITIES
    samples = dataio.load_split(args.dataset, args.split)
    if not samples:
        raise ValueError(f"no samples in split {args.split!r} of {args.dataset}")
    manifest = corruptions.build_suite(
        [s.points for s in samples], args.out, seed=args.seed,
        table=cfg.severity_table(), families=families, severities=severities,
        threads=args.threads,
    )
    print(f"OK corrupt files={len(manifest.records)} manifest={args.out / 'suite.manifest'}")
    return 0


def cmd_train(args) -> int:
    cfg = _setup(args, "train")
    ablate = tuple(a for a in (args.ablate or "").split(",") if a)
    samples = dataio.load_split(args.dataset, "train")
    if not samples:
        raise ValueError(f"no training samples in {args.dataset}")
    n = samples[0].points.shape[0]
    n_classes = len(dataio.read_dataset_manifest(args.dataset).classes)
    result = training.train(
        samples,
        cfg.train(seed=args.seed, epochs=args.epochs, batch_size=args.batch_size, ablate=ablate),
        args.out,
        imitator_cfg=cfg.imitator(n_points=n),
        classifier_cfg=cfg.classifier(n_points=n, n_classes=n_classes),
        fusion=cfg.fusion(),
    )
    print(f"OK train epochs={args.epochs if args.epochs is not None else cfg['train.epochs']} "
          f"final_train_acc={result.final_train_accuracy:.4f} ckpt={result.checkpoints[-1]}")
    return 0


def cmd_eval(args) -> int:
    cfg = _setup(args, "eval")
    data_manifest = dataio.read_dataset_manifest(args.dataset)
    clean = dataio.load_split(args.dataset, args.split)
    if not clean:
        raise ValueError(f"no samples in split {args.split!r} of {args.dataset}")
    n = clean[0].points.shape[0]
    classifier = PointClassifier(
        cfg.classifier(n_points=n, n_classes=len(data_manifest.classes)),
        RngStream(args.seed).generator(),
    )
    state = checkpoint.load_checkpoint(args.checkpoint)
    classifier.load_state_dict(checkpoint.filter_prefix(state, "classifier."))
    result = evaluation.evaluate_suite(classifier, args.suite, clean,
                                       resample_seed=cfg["eval.resample_seed"])
    (args.out / "predictions.dump").write_text("\n".join(result.dump_lines) + "\n")
    evaluation.write_errors_tsv(args.out / "errors.tsv", result.table)

    baseline = None
    note = "none (raw error rates only)"
    mce_text = "na"
    if args.baseline_errors:
        baseline = evaluation.read_errors_tsv(args.baseline_errors)
        note = f"clean-trained reference classifier errors from {args.baseline_errors}"
        ce, mce = evaluation.corruption_error(result.table, baseline)
        render.render_ce_bars(ce, mce, args.out / "report.svg")
        mce_text = f"{mce:.1f}"
    (args.out / "report.tsv").write_text(
        evaluation.format_report(result.table, baseline, note))
    print(f"OK eval oa={result.table.oa_clean:.4f} mce={mce_text} "
          f"report={args.out / 'report.tsv'}")
    return 0


def cmd_augment(args) -> int:
    cfg = _setup(args, "augment")
    state = checkpoint.load_checkpoint(args.checkpoint)
    first = dataio.read_cloud(args.inputs[0])
    imitator = Imitator(cfg.imitator(n_points=first.shape[0]),
                        RngStream(args.seed).generator(), fusion=cfg.fusion())
    imitator.load_state_dict(checkpoint.filter_prefix(state, "imitator."))
    root = RngStream(args.seed)
    written = 0
    for i, path in enumerate(args.inputs):
        pts = geom.normalize_unit_sphere(dataio.read_cloud(path))
        gen = root.substream(i).generator()
        with no_grad():
            aug, _, mask, _ = imitator.imitate(pts, gen, hard_mask=True)
        stem = Path(path).stem
        if args.mask_mode == "filter":
            # surviving points are untouched by the hard multiply, so filtering
            # the already-masked cloud reproduces the pre-mask coordinates
            from .simulator import apply_mask

            filtered = apply_mask(aug, mask.values, mode="filter", rng=gen)
            dataio.write_cloud(args.out / f"{stem}_aug.pcb", filtered, fmt="pcb")
        else:
            dataio.write_cloud(args.out / f"{stem}_aug.pcb", aug.data, fmt="pcb")
        mask_path = args.out / f"{stem}_mask.txt"
        mask_path.write_text("\n".join(f"{v:.6f}" for v in mask.values.data[:, 0]) + "\n")
        written += 1
    print(f"OK augment files={written}")
    return 0


def cmd_render(args) -> int:
    _setup(args, "render")
    if args.masks and len(args.masks) != len(args.inputs):
        raise ValueError(f"got {len(args.masks)} masks for {len(args.inputs)} inputs")
    written = 0
    for i, path in enumerate(args.inputs):
        pts = dataio.read_cloud(path)
        color = None
        label = "depth"
        if args.color_by == "mask":
            if not args.masks:
                raise ValueError("--color-by mask requires --masks")
            color = np.loadtxt(args.masks[i]).reshape(-1)
            if color.shape[0] != pts.shape[0]:
                raise ValueError(f"{args.masks[i]}: {color.shape[0]} values for {pts.shape[0]} points")
            label = "mask"
        out_path = args.out / f"{Path(path).stem}.svg"
        render.render_cloud_svg(pts, out_path, color_values=color, color_label=label,
                                title=Path(path).name)
        written += 1
    print(f"OK render files={written}")
    return 0


def cmd_gradcheck(args) -> int:
    from . import checks

    _setup(args, "gradcheck")
    worst, reports = checks.run_suite(seed=args.seed)
    failures = [(name, rep.max_rel_err, tol) for name, rep, tol in reports if rep.max_rel_err > tol]
    report_path = args.out / "gradcheck.tsv"
    report_path.write_text(
        "\n".join(f"{name}\t{rep.max_rel_err:.3e}\t{tol:.0e}" for name, rep, tol in reports) + "\n"
    )
    if failures:
        worst_name, err, tol = max(failures, key=lambda f: f[1])
        raise ValueError(f"gradient check failed: {worst_name} err={err:.3e} > tol={tol:.0e}")
    print(f"OK gradcheck max_rel_err={worst:.3e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adaptpoint",
        description="Point-cloud corruption benchmarking and sample-adaptive augmentation",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-data", help="generate a synthetic labelled dataset")
    _common_flags(p)
    p.set_defaults(func=cmd_gen_data)

    p = subs.add_parser("corrupt", help="build a corruption suite from a dataset")
    _common_flags(p)
    p.add_argument("--dataset", type=Path, required=True, help="dataset manifest path")
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--families", default=None, help="comma list, default all seven")
    p.add_argument("--severities", default=None, help="comma list, default 1-5")
    p.set_defaults(func=cmd_corrupt)

    p = subs.add_parser("train", help="run the three-player co-training loop")
    _common_flags(p)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--ablate", default=None,
                   help="comma list from feedback,adv,deform,mask")
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("eval", help="score a checkpoint over a corruption suite")
    _common_flags(p)
    p.add_argument("--suite", type=Path, required=True, help="suite manifest path")
    p.add_argument("--dataset", type=Path, required=True, help="clean dataset manifest")
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--baseline-errors", type=Path, default=None,
                   help="errors.tsv of the baseline run (enables CE/mCE)")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("augment", help="apply a trained imitator to cloud files")
    _common_flags(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--mask-mode", choices=("multiply", "filter"), default="multiply")
    p.add_argument("--inputs", type=Path, nargs="+", required=True)
    p.set_defaults(func=cmd_augment)

    p = subs.add_parser("render", help="render clouds to orthographic SVG scatters")
    _common_flags(p)
    p.add_argument("--inputs", type=Path, nargs="+", required=True)
    p.add_argument("--color-by", choices=("depth", "mask"), default="depth")
    p.add_argument("--masks", type=Path, nargs="*", default=None)
    p.set_defaults(func=cmd_render)

    p = subs.add_parser("gradcheck", help="finite-difference check of every gradient path")
    _common_flags(p)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # contract: non-zero exit, one-line reason
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
