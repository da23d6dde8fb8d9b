"""Relative-error evaluation on seen and unseen set sizes."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .. import models as M
from ..core import GroundMetric, seeded_rng
from ..data import DatasetSpec, PairSample, generate_sets, sample_and_label_pairs
from ..errors import InputError
from ..ot import SinkhornConfig, sinkhorn

EXCLUDE_BELOW = 1e-9


@dataclass(frozen=True)
class PairRecord:
    pair_id: int
    size_a: int
    size_b: int
    label: float
    prediction: float
    rel_error: float | None


@dataclass
class EvalReport:
    mean_rel_error: float
    std_rel_error: float
    n_pairs: int
    n_excluded: int
    wall_time_seconds: float
    records: list = field(default_factory=list)

    def recompute(self) -> tuple[float, float]:
        errs = np.array([r.rel_error for r in self.records if r.rel_error is not None])
        return float(errs.mean()), float(errs.std())


def report_from_predictions(pairs, predictions, wall_time: float = 0.0) -> EvalReport:
    predictions = np.asarray(predictions, dtype=np.float64)
    if len(pairs) != len(predictions):
        raise InputError("one prediction per pair is required")
    records = []
    for k, (pair, pred) in enumerate(zip(pairs, predictions)):
        rel = abs(pred - pair.label) / pair.label if pair.label >= EXCLUDE_BELOW else None
        records.append(PairRecord(k, pair.A.size, pair.B.size, pair.label, float(pred), rel))
    errs = np.array([r.rel_error for r in records if r.rel_error is not None])
    if errs.size == 0:
        raise InputError("every pair has a label below the exclusion threshold")
    return EvalReport(float(errs.mean()), float(errs.std()), int(errs.size), len(records) - int(errs.size),
                      wall_time, records)


def evaluate(model, pairs, batch_size: int = 256) -> EvalReport:
    if not pairs:
        raise InputError("no pairs to evaluate")
    t0 = time.perf_counter()
    preds = M.predict(model, [(p.A, p.B) for p in pairs], batch_size)
    return report_from_predictions(pairs, preds, time.perf_counter() - t0)


def evaluate_sinkhorn(pairs, p: int = 1, epsilon: float = 0.1) -> EvalReport:
    """The entropic baseline: sharp Sinkhorn cost against the labels."""
    cfg = SinkhornConfig(epsilon=epsilon)
    t0 = time.perf_counter()
    preds = [sinkhorn(pr.A, pr.B, p, GroundMetric.L2, cfg).distance for pr in pairs]
    return report_from_predictions(pairs, preds, time.perf_counter() - t0)


def unseen_pairs(spec: DatasetSpec, size_range, n_pairs: int, seed: int) -> list[PairSample]:
    """Fresh sets with sizes in ``size_range``, labeled as the training data was."""
    rng = seeded_rng(seed)
    sets = generate_sets(spec, rng, max(2, n_pairs), tuple(size_range))
    return sample_and_label_pairs(sets, n_pairs, spec.p, rng, spec.exact_cutoff, spec.sinkhorn_eps)


def write_report(report: EvalReport, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair_id", "size_a", "size_b", "label", "prediction", "rel_error"])
        for r in report.records:
            rel = "" if r.rel_error is None else format(r.rel_error, ".17g")
            w.writerow([r.pair_id, r.size_a, r.size_b, format(r.label, ".17g"), format(r.prediction, ".17g"), rel])


def write_summary(report: EvalReport, path, extra: dict | None = None):
    """One-row summary; wall time is left out so reruns compare byte for byte."""
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(extra) + ["mean_rel_error", "std_rel_error", "n_pairs", "n_excluded"])
        w.writerow(list(extra.values()) + [format(report.mean_rel_error, ".17g"),
                                           format(report.std_rel_error, ".17g"), report.n_pairs, report.n_excluded])
