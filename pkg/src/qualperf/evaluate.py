"""Pooled true-vs-predicted reports, ROC points and error-versus-reject curves."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError
from .perf import OperatingPoint, beta_posterior, count_errors, credible_interval
from .records import Label, RecordSet, pool_by_label

MEASURES = ("fmr", "fnmr")
FULL_CURVE_LIMIT = 10_000
COARSE_CURVE_POINTS = 1_000


def roc_points(rs: RecordSet, thresholds: Sequence[float]) -> np.ndarray:
    """``(fmr, fnmr)`` per threshold, using the ``score >= t`` accept rule."""
    rs.require_both_labels()
    match, nonmatch = np.sort(rs.match_scores), np.sort(rs.nonmatch_scores)
    t = np.asarray(thresholds, dtype=float)
    fnmr = np.searchsorted(match, t, side="left") / match.size
    fmr = (nonmatch.size - np.searchsorted(nonmatch, t, side="left")) / nonmatch.size
    return np.column_stack([fmr, fnmr])


@dataclass
class MeasureSummary:
    true_mean: float = float("nan")
    true_lo: float = float("nan")
    true_hi: float = float("nan")
    pred_mean: float = float("nan")
    pred_lo: float = float("nan")
    pred_hi: float = float("nan")
    n: int = 0
    errors: int = 0
    flag: str = "ok"


@dataclass
class PooledComparison:
    pools: dict[str, dict[str, MeasureSummary]] = field(default_factory=dict)
    threshold: float = float("nan")
    target_fmr: float = float("nan")

    def rows(self) -> list[dict]:
        out = []
        for pool, per in self.pools.items():
            for measure in MEASURES:
                s = per[measure]
                out.append({"pool": pool, "measure": measure, "true_mean": s.true_mean,
                            "true_lo": s.true_lo, "true_hi": s.true_hi, "pred_mean": s.pred_mean,
                            "pred_lo": s.pred_lo, "pred_hi": s.pred_hi, "n": s.n, "flag": s.flag})
        return out


def pooled_comparison(rs: RecordSet, predictions, op: OperatingPoint, alpha: float = 0.05,
                      a0: float = 1.0, b0: float = 1.0) -> PooledComparison:
    """Per pool: Beta posterior of the true rate next to the spread of predictions.

    ``predictions`` is an ``(N, 2)`` array of per-record ``[fmr, fnmr]``. The
    FNMR summaries use a pool's match records and the FMR summaries its
    non-match records; a pool lacking one class gets that measure flagged.
    """
    pred = np.asarray(predictions, dtype=float).reshape(len(rs), -1)
    if pred.shape[1] != 2:
        raise DataError(f"predictions must have 2 columns (fmr, fnmr), got {pred.shape[1]}")
    pools = pool_by_label(rs)
    # recover each pool's original row indices for the prediction lookup
    index: dict[str, list[int]] = {}
    for i, p in enumerate(rs.pool_ids):
        index.setdefault(p, []).append(i)

    out = PooledComparison(threshold=op.threshold, target_fmr=op.target_fmr)
    for pool, sub in pools.items():
        idx = np.array(index[pool])
        per = {}
        for col, measure, label in ((0, "fmr", Label.NONMATCH), (1, "fnmr", Label.MATCH)):
            sel = sub.is_match if label is Label.MATCH else ~sub.is_match
            s = MeasureSummary()
            if not sel.any():
                s.flag = f"no {label.value} records"
            else:
                m, l = count_errors(sub.scores[sel], op.threshold, label)
                post = beta_posterior(m, l, a0, b0)
                s.true_mean = post.mean
                s.true_lo, s.true_hi = credible_interval(post, alpha)
                p = pred[idx[sel], col]
                s.pred_mean = float(p.mean())
                s.pred_lo, s.pred_hi = (float(v) for v in np.quantile(p, [alpha / 2, 1 - alpha / 2]))
                s.n, s.errors = int(sel.sum()), m
            per[measure] = s
        out.pools[pool] = per
    return out


@dataclass(frozen=True, eq=False)
class ErcCurve:
    reject_fraction: np.ndarray
    fnmr: np.ndarray
    variant: str = "model"

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["reject_frac", "fnmr"])
            for f, e in zip(self.reject_fraction, self.fnmr):
                w.writerow([repr(float(f)), repr(float(e))])


def _curve_steps(n: int, stride: int | None) -> np.ndarray:
    if stride is not None:
        return np.arange(0, n, max(1, int(stride)))
    if n <= FULL_CURVE_LIMIT:
        return np.arange(n)
    return np.unique(np.round(np.linspace(0, n - 1, COARSE_CURVE_POINTS)).astype(int))


def _erc_from_order(failures_sorted: np.ndarray, stride: int | None, variant: str) -> ErcCurve:
    n = failures_sorted.size
    rejected_fail = np.concatenate([[0], np.cumsum(failures_sorted)[:-1]])
    k = _curve_steps(n, stride)
    remaining = failures_sorted.sum() - rejected_fail[k]
    return ErcCurve(reject_fraction=k / n, fnmr=remaining / (n - k), variant=variant)


def erc_curve(scores, predicted_fnmr, t: float, stride: int | None = None) -> ErcCurve:
    """FNMR of the retained match attempts as the worst-predicted ones are rejected.

    Attempts are rejected in descending order of predicted FNMR; ties keep
    input order. One point per rejection count ``k`` (``0 <= k < N``) unless
    ``stride`` thins the output.
    """
    s = np.asarray(scores, dtype=float).reshape(-1)
    p = np.asarray(predicted_fnmr, dtype=float).reshape(-1)
    if s.size == 0:
        raise DataError("ERC needs at least one match record")
    if p.size != s.size:
        raise DataError("scores and predictions differ in length")
    order = np.argsort(-p, kind="stable")
    return _erc_from_order((s[order] < t).astype(float), stride, "model")


def ideal_erc(scores, t: float, stride: int | None = None) -> ErcCurve:
    """Benchmark curve that rejects the actual false non-matches first."""
    s = np.asarray(scores, dtype=float).reshape(-1)
    if s.size == 0:
        raise DataError("ERC needs at least one match record")
    fails = (s < t).astype(float)
    order = np.argsort(-fails, kind="stable")
    return _erc_from_order(fails[order], stride, "ideal")


def random_erc(scores, t: float, n_perm: int = 50, seed: int = 0, stride: int | None = None) -> ErcCurve:
    """Mean ERC of a constant predictor over random orderings of the attempts."""
    s = np.asarray(scores, dtype=float).reshape(-1)
    if s.size == 0:
        raise DataError("ERC needs at least one match record")
    rng = np.random.default_rng(seed)
    const = np.zeros(s.size)
    curves = [erc_curve(s[perm], const, t, stride).fnmr for perm in (rng.permutation(s.size) for _ in range(n_perm))]
    k = _curve_steps(s.size, stride)
    return ErcCurve(reject_fraction=k / s.size, fnmr=np.mean(curves, axis=0), variant="random")


def write_roc(path: str | Path, thresholds, points) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fmr", "fnmr"])
        for t, (fmr, fnmr) in zip(thresholds, points):
            w.writerow([repr(float(t)), repr(float(fmr)), repr(float(fnmr))])


def write_pooled(path: str | Path, comparisons: Sequence[PooledComparison]) -> None:
    cols = ["fmr_target", "threshold", "pool", "measure", "true_mean", "true_lo", "true_hi",
            "pred_mean", "pred_lo", "pred_hi", "n", "flag"]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for pc in comparisons:
            for row in pc.rows():
                row = {"fmr_target": pc.target_fmr, "threshold": pc.threshold, **row}
                w.writerow([repr(v) if isinstance(v, float) else v for v in (row[c] for c in cols)])
