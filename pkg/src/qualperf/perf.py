"""Error counts, Beta posteriors over FMR/FNMR, and resampled training data.

Conventions used throughout: scores are similarities and a comparison is
accepted when ``score >= t``. A match pair is a false non-match when
``score < t``; a non-match pair is a false match when ``score >= t``.
Performance vectors are ordered ``[fmr, fnmr]``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import DataError, SparseRegionError
from .partition import QualityRegion
from .records import Label, RecordSet

log = logging.getLogger(__name__)

MIN_MATCH = 10
MIN_NONMATCH = 50
PERF_COLUMNS = ("fmr", "fnmr")


@dataclass(frozen=True)
class OperatingPoint:
    threshold: float
    target_fmr: float
    achieved_fmr: float | None = None

    def __post_init__(self):
        if not np.isfinite(self.threshold):
            raise DataError("threshold must be finite")


@dataclass(frozen=True)
class BetaPosterior:
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and np.isfinite(self.a) and np.isfinite(self.b)):
            raise DataError(f"Beta shapes must be positive and finite, got ({self.a}, {self.b})")

    @property
    def mean(self) -> float:
        return self.a / (self.a + self.b)

    def interval(self, alpha: float = 0.05) -> tuple[float, float]:
        return credible_interval(self, alpha)


@dataclass(frozen=True)
class TrainingSet:
    """Rows ``[q (d_q) | r (d_r)]`` drawn from the per-region models."""

    data: np.ndarray
    d_q: int
    d_r: int = 2

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2 or data.shape[1] != self.d_q + self.d_r:
            raise DataError(f"training data must be N x {self.d_q + self.d_r}, got {data.shape}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def q(self) -> np.ndarray:
        return self.data[:, :self.d_q]

    @property
    def r(self) -> np.ndarray:
        return self.data[:, self.d_q:]

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"q{j + 1}" for j in range(self.d_q)] + list(PERF_COLUMNS[:self.d_r]))
            for row in self.data:
                w.writerow([repr(float(v)) for v in row])


def threshold_at_fmr(nonmatch_scores: Sequence[float], target_fmr: float) -> OperatingPoint:
    """Smallest observed score ``t`` with ``mean(scores >= t) <= target_fmr``.

    When even the largest score is accepted too often (target below
    ``1/N``), the threshold moves just above the maximum so that nothing is
    accepted.
    """
    s = np.sort(np.asarray(nonmatch_scores, dtype=float))
    if s.size == 0:
        raise DataError("cannot set a threshold from an empty score list")
    if not 0.0 < target_fmr < 1.0:
        raise DataError(f"target_fmr must lie in (0, 1), got {target_fmr}")
    n = s.size
    values = np.unique(s)
    n_accepted = n - np.searchsorted(s, values, side="left")
    ok = n_accepted <= target_fmr * n * (1 + 1e-12)
    if ok.any():
        i = int(np.argmax(ok))
        t, acc = float(values[i]), n_accepted[i] / n
    else:
        t, acc = float(np.nextafter(values[-1], np.inf)), 0.0
    return OperatingPoint(threshold=t, target_fmr=float(target_fmr), achieved_fmr=float(acc))


def count_errors(scores: Sequence[float], t: float, label: Label | str) -> tuple[int, int]:
    """Return ``(errors, successes)`` for scores of one ground-truth class."""
    s = np.asarray(scores, dtype=float)
    if Label(label) is Label.MATCH:
        m = int(np.count_nonzero(s < t))
    else:
        m = int(np.count_nonzero(s >= t))
    return m, int(s.size - m)


def beta_posterior(m: int, l: int, a0: float = 1.0, b0: float = 1.0) -> BetaPosterior:
    """Conjugate update of a ``Beta(a0, b0)`` prior with ``m`` errors in ``m + l`` trials."""
    if m < 0 or l < 0:
        raise DataError(f"counts must be non-negative, got m={m}, l={l}")
    if not (a0 > 0 and b0 > 0):
        raise DataError(f"prior shapes must be positive, got a0={a0}, b0={b0}")
    return BetaPosterior(m + a0, l + b0)


def credible_interval(bp: BetaPosterior, alpha: float = 0.05) -> tuple[float, float]:
    """Equal-tailed ``1 - alpha`` credible interval of a Beta posterior."""
    if not 0.0 < alpha < 1.0:
        raise DataError(f"alpha must lie in (0, 1), got {alpha}")
    lo, hi = stats.beta.ppf([alpha / 2, 1 - alpha / 2], bp.a, bp.b)
    return float(lo), float(hi)


def region_performance(region: QualityRegion, rs: RecordSet, op: OperatingPoint,
                       a0: float = 1.0, b0: float = 1.0, min_match: int = MIN_MATCH,
                       min_nonmatch: int = MIN_NONMATCH) -> tuple[BetaPosterior, BetaPosterior]:
    """Posteriors ``(fnmr, fmr)`` from the scores of the region's members.

    Raises ``SparseRegionError`` when either class is under-represented.
    """
    idx = region.member_indices
    is_match = rs.is_match[idx]
    scores = rs.scores[idx]
    match, nonmatch = scores[is_match], scores[~is_match]
    if match.size < min_match or nonmatch.size < min_nonmatch:
        raise SparseRegionError(
            f"region {region.label}: {match.size} match / {nonmatch.size} non-match scores "
            f"(need {min_match} / {min_nonmatch})")
    fnmr = beta_posterior(*count_errors(match, op.threshold, Label.MATCH), a0, b0)
    fmr = beta_posterior(*count_errors(nonmatch, op.threshold, Label.NONMATCH), a0, b0)
    return fnmr, fmr


@dataclass(frozen=True)
class RegionModel:
    """A fitted region: quality Gaussian plus FMR/FNMR posteriors."""

    region: QualityRegion
    fmr: BetaPosterior
    fnmr: BetaPosterior

    @property
    def mean(self) -> np.ndarray:
        return self.region.mean

    @property
    def variance(self) -> np.ndarray:
        return self.region.variance


def model_regions(regions: Sequence[QualityRegion], rs: RecordSet, op: OperatingPoint,
                  a0: float = 1.0, b0: float = 1.0, min_match: int = MIN_MATCH,
                  min_nonmatch: int = MIN_NONMATCH) -> list[RegionModel | QualityRegion]:
    """Attach posteriors to every usable region.

    The result is aligned with ``regions``; entries that could not be
    modelled are returned as ``QualityRegion`` with ``skipped`` set.
    """
    out: list[RegionModel | QualityRegion] = []
    for reg in regions:
        if not reg.usable:
            out.append(reg)
            continue
        try:
            fnmr, fmr = region_performance(reg, rs, op, a0, b0, min_match, min_nonmatch)
        except SparseRegionError as exc:
            log.info("%s", exc)
            out.append(replace(reg, skipped=str(exc)))
            continue
        out.append(RegionModel(region=reg, fmr=fmr, fnmr=fnmr))
    return out


def sample_beta(rng: np.random.Generator, a: float, b: float, size: int) -> np.ndarray:
    """Beta draws as the ratio ``X / (X + Y)`` of two Gamma variates."""
    x = rng.standard_gamma(a, size)
    y = rng.standard_gamma(b, size)
    return x / (x + y)


def sample_training_set(regions: Sequence[RegionModel | QualityRegion], seed: int | np.random.SeedSequence,
                        n_rand: int = 20) -> TrainingSet:
    """Draw ``n_rand`` rows per usable region.

    Region ``i`` uses the ``i``-th child of ``SeedSequence(seed)``, so the
    output does not depend on how regions are scheduled.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = ss.spawn(len(regions))
    blocks = []
    for reg, child in zip(regions, children):
        if not isinstance(reg, RegionModel):
            continue
        rng = np.random.default_rng(child)
        q = rng.normal(reg.mean, np.sqrt(reg.variance), size=(n_rand, len(reg.mean)))
        fmr = sample_beta(rng, reg.fmr.a, reg.fmr.b, n_rand)
        fnmr = sample_beta(rng, reg.fnmr.a, reg.fnmr.b, n_rand)
        blocks.append(np.column_stack([q, fmr, fnmr]))
    if not blocks:
        raise DataError("no usable quality regions to sample from")
    data = np.vstack(blocks)
    return TrainingSet(data=data, d_q=data.shape[1] - 2, d_r=2)
