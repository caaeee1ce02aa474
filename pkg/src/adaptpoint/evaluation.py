"""Robustness metrics: accuracy, per-corruption error, CE and mCE.

CE for a family is 100 times the ratio of the method's summed error rates
(over the five severities) to a baseline's; mCE averages the seven families.
A method evaluated against itself scores exactly 100 everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autograd import no_grad
from .corruptions import FAMILIES, SEVERITIES, SuiteManifest, read_suite_manifest
from .dataio import Sample, read_cloud, resample_to_n
from .rng import RngStream


class UndefinedCEError(ValueError):
    """Baseline has zero summed error in some family, so CE is undefined."""


@dataclass
class MetricsTable:
    """Error rates in [0, 1], one row per family, one column per severity."""

    errors: np.ndarray  # (7, 5)
    oa_clean: float

    def __post_init__(self) -> None:
        self.errors = np.asarray(self.errors, dtype=np.float64)
        if self.errors.shape != (len(FAMILIES), len(SEVERITIES)):
            raise ValueError(f"errors must be {(len(FAMILIES), len(SEVERITIES))}, got {self.errors.shape}")
        if ((self.errors < 0) | (self.errors > 1)).any():
            raise ValueError("error rates must lie in [0, 1]")
        if not 0.0 <= self.oa_clean <= 1.0:
            raise ValueError(f"clean accuracy must lie in [0, 1], got {self.oa_clean}")


def overall_accuracy(predictions, labels) -> float:
    pred = np.asarray(predictions)
    lab = np.asarray(labels)
    if pred.shape != lab.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {lab.shape}")
    if pred.size == 0:
        raise ValueError("cannot score an empty prediction set")
    return float((pred == lab).mean())


def corruption_error(method: MetricsTable, baseline: MetricsTable) -> tuple[np.ndarray, float]:
    """(CE per family in %, mCE in %) of `method` against `baseline`."""
    ce = np.empty(len(FAMILIES))
    for i, family in enumerate(FAMILIES):
        base_sum = baseline.errors[i].sum()
        if base_sum == 0.0:
            raise UndefinedCEError(f"baseline error sum is zero for family {family!r}")
        ce[i] = 100.0 * method.errors[i].sum() / base_sum
    return ce, float(ce.mean())


@dataclass
class SuiteEvaluation:
    table: MetricsTable
    dump_lines: list[str]  # "<path> <true> <pred>", clean entries use clean:<idx>


def evaluate_suite(classifier, manifest_path, clean_samples: list[Sample],
                   resample_seed: int = 0) -> SuiteEvaluation:
    """Score a classifier over a corruption suite plus the clean test set.

    Clouds are resampled to the classifier's expected point count (seeded,
    recorded), predictions are dumped in a re-scorable form, and the error
    table is aggregated per (family, severity).
    """
    manifest = read_suite_manifest(manifest_path)
    base = Path(manifest_path).parent
    n_expected = classifier.cfg.n_points
    resample_root = RngStream(resample_seed)

    dump: list[str] = []
    with no_grad():
        for i, sample in enumerate(clean_samples):
            pts = resample_to_n(sample.points, n_expected, resample_root.substream(0, i))
            pred = int(np.argmax(classifier(pts).data))
            dump.append(f"clean:{i} {sample.label} {pred}")
        for j, rec in enumerate(manifest.records):
            if rec.sample_index >= len(clean_samples):
                raise ValueError(
                    f"manifest references sample {rec.sample_index}, "
                    f"but only {len(clean_samples)} clean samples were provided"
                )
            pts = read_cloud(base / rec.path)
            if pts.shape[0] != rec.point_count:
                raise ValueError(f"{rec.path}: manifest says {rec.point_count} points, file has {pts.shape[0]}")
            pts = resample_to_n(pts, n_expected, resample_root.substream(1, j))
            pred = int(np.argmax(classifier(pts).data))
            dump.append(f"{rec.path} {clean_samples[rec.sample_index].label} {pred}")
    table = rescore(manifest, dump)
    return SuiteEvaluation(table=table, dump_lines=dump)


def rescore(manifest: SuiteManifest, dump_lines: list[str]) -> MetricsTable:
    """Rebuild the MetricsTable from a prediction dump, bit-identically."""
    by_path = {}
    clean_true: list[int] = []
    clean_pred: list[int] = []
    for line in dump_lines:
        path, true_s, pred_s = line.split()
        if path.startswith("clean:"):
            clean_true.append(int(true_s))
            clean_pred.append(int(pred_s))
        else:
            by_path[path] = (int(true_s), int(pred_s))
    if not clean_true:
        raise ValueError("prediction dump has no clean entries")
    wrong = np.zeros((len(FAMILIES), len(SEVERITIES)), dtype=np.int64)
    total = np.zeros_like(wrong)
    for rec in manifest.records:
        if rec.path not in by_path:
            raise ValueError(f"prediction dump is missing {rec.path}")
        true, pred = by_path[rec.path]
        fi = FAMILIES.index(rec.family)
        si = rec.severity - 1
        total[fi, si] += 1
        wrong[fi, si] += int(pred != true)
    if (total == 0).any():
        raise ValueError("suite does not cover every (family, severity) cell")
    return MetricsTable(errors=wrong / total, oa_clean=overall_accuracy(clean_pred, clean_true))


# -- report formatting ----------------------------------------------------------


def format_report(method: MetricsTable, baseline: MetricsTable | None,
                  baseline_note: str) -> str:
    """Tab-separated error table with a CE/mCE footer when a baseline exists."""
    lines = [f"# baseline: {baseline_note}", f"# clean OA: {method.oa_clean:.4f}"]
    lines.append("family\t" + "\t".join(f"sev{s}" for s in SEVERITIES))
    for i, family in enumerate(FAMILIES):
        row = "\t".join(f"{method.errors[i, j]:.4f}" for j in range(len(SEVERITIES)))
        lines.append(f"{family}\t{row}")
    if baseline is not None:
        ce, mce = corruption_error(method, baseline)
        lines.append("CE\t" + "\t".join(f"{v:.1f}" for v in ce))
        lines.append(f"mCE\t{mce:.1f}")
    return "\n".join(lines) + "\n"


def write_errors_tsv(path, table: MetricsTable) -> None:
    """Raw error table in a shape reloadable as a CE baseline."""
    lines = [f"OA\t{table.oa_clean!r}"]
    for i, family in enumerate(FAMILIES):
        row = "\t".join(repr(float(v)) for v in table.errors[i])
        lines.append(f"{family}\t{row}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_errors_tsv(path) -> MetricsTable:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    oa = None
    errors = np.full((len(FAMILIES), len(SEVERITIES)), np.nan)
    for ln in lines:
        parts = ln.split("\t")
        if parts[0] == "OA":
            oa = float(parts[1])
        elif parts[0] in FAMILIES:
            errors[FAMILIES.index(parts[0])] = [float(v) for v in parts[1:]]
        else:
            raise ValueError(f"{path}: unexpected row {parts[0]!r}")
    if oa is None or np.isnan(errors).any():
        raise ValueError(f"{path}: incomplete error table")
    return MetricsTable(errors=errors, oa_clean=oa)
