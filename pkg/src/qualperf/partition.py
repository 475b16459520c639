"""Quantile sampling grid over quality space and the overlapping regions
built around each grid point.

Each axis gets ``n_qs`` quantiles at evenly spaced probabilities. The
extreme quantiles (probability 0 and 1) are not used as sampling points
but still bound the outermost regions. A region centred on interior
quantile ``i`` spans ``[quantile(i-1), quantile(i+1)]`` on that axis, so
neighbouring regions overlap by one quantile interval.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError
from .records import RecordSet

log = logging.getLogger(__name__)

MIN_REGION_SAMPLES = 10
VARIANCE_FLOOR_FRACTION = 1e-6


@dataclass(frozen=True)
class GridSpec:
    """Per-axis merged quantile values and the interior sampling points.

    ``axis_quantiles[j]`` holds the distinct quantile values on axis ``j``;
    ``axis_interior[j]`` the distinct interior values used as sampling
    coordinates; ``axis_bounds[j]`` the ``(lower, upper)`` extent of the
    region around each interior value.
    """

    axis_quantiles: tuple[np.ndarray, ...]
    axis_interior: tuple[np.ndarray, ...]
    axis_bounds: tuple[np.ndarray, ...]
    probabilities: np.ndarray
    axis_range: np.ndarray

    @property
    def d_q(self) -> int:
        return len(self.axis_interior)

    @property
    def points(self) -> np.ndarray:
        """Cartesian product of the interior values, axis 0 varying slowest."""
        return np.array(list(itertools.product(*self.axis_interior)), dtype=float).reshape(-1, self.d_q)

    @property
    def n_points(self) -> int:
        return int(np.prod([len(a) for a in self.axis_interior]))


@dataclass(frozen=True)
class QualityRegion:
    center: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    member_indices: np.ndarray
    mean: np.ndarray | None = None
    variance: np.ndarray | None = None
    label: str = ""
    skipped: str | None = None

    @property
    def usable(self) -> bool:
        return self.skipped is None and self.mean is not None


def quantile_grid(rs: RecordSet, n_qs: int = 12) -> GridSpec:
    if n_qs < 3:
        raise DataError(f"n_qs must be >= 3, got {n_qs}")
    if len(rs) == 0:
        raise DataError("cannot build a quantile grid from an empty record set")
    probs = np.linspace(0.0, 1.0, n_qs)
    quants, interiors, bounds = [], [], []
    for j in range(rs.d_q):
        qv = np.quantile(rs.quality[:, j], probs, method="linear")
        merged = np.unique(qv)
        interior = np.unique(qv[1:-1])
        pos = np.searchsorted(merged, interior)
        lo = merged[np.maximum(pos - 1, 0)]
        hi = merged[np.minimum(pos + 1, len(merged) - 1)]
        quants.append(merged)
        interiors.append(interior)
        bounds.append(np.column_stack([lo, hi]))
    qual = rs.quality
    return GridSpec(
        axis_quantiles=tuple(quants),
        axis_interior=tuple(interiors),
        axis_bounds=tuple(bounds),
        probabilities=probs,
        axis_range=qual.max(axis=0) - qual.min(axis=0),
    )


def box_members(quality: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Indices of rows lying inside the closed box ``[lower, upper]``."""
    inside = np.all((quality >= lower) & (quality <= upper), axis=1)
    return np.flatnonzero(inside)


def build_regions(grid: GridSpec, rs: RecordSet) -> list[QualityRegion]:
    if rs.d_q != grid.d_q:
        raise DataError(f"grid has d_q={grid.d_q}, records have d_q={rs.d_q}")
    regions = []
    for combo in itertools.product(*(range(len(a)) for a in grid.axis_interior)):
        center = np.array([grid.axis_interior[j][i] for j, i in enumerate(combo)])
        lower = np.array([grid.axis_bounds[j][i, 0] for j, i in enumerate(combo)])
        upper = np.array([grid.axis_bounds[j][i, 1] for j, i in enumerate(combo)])
        regions.append(QualityRegion(
            center=center, lower=lower, upper=upper,
            member_indices=box_members(rs.quality, lower, upper),
            label="grid" + "_".join(str(i) for i in combo),
        ))
    return regions


def cluster_regions(rs: RecordSet) -> list[QualityRegion]:
    """One region per pool id (for quality spaces made of distinct clusters)."""
    if rs.pool_ids is None or any(p is None for p in rs.pool_ids):
        raise DataError("cluster mode requires a pool_id on every record")
    groups: dict[str, list[int]] = {}
    for i, p in enumerate(rs.pool_ids):
        groups.setdefault(p, []).append(i)
    regions = []
    for pool, idx in groups.items():
        idx = np.array(idx)
        q = rs.quality[idx]
        regions.append(QualityRegion(
            center=q.mean(axis=0), lower=q.min(axis=0), upper=q.max(axis=0),
            member_indices=idx, label=pool,
        ))
    return regions


def variance_floor(axis_range: np.ndarray) -> np.ndarray:
    """Per-axis floor ``1e-6 * range**2``; a constant axis counts as range 1."""
    r = np.where(np.asarray(axis_range) > 0, axis_range, 1.0)
    return VARIANCE_FLOOR_FRACTION * r**2


def fit_region_gaussian(region: QualityRegion, rs: RecordSet, axis_range: np.ndarray | None = None,
                        min_samples: int = MIN_REGION_SAMPLES) -> QualityRegion:
    """Fit a diagonal Gaussian to the member qualities of ``region``.

    Returns a new region carrying ``mean`` and ``variance``; under-populated
    regions come back with ``skipped`` set instead.
    """
    n = len(region.member_indices)
    if n < min_samples:
        reason = f"{n} quality samples < minimum {min_samples}"
        log.info("region %s skipped: %s", region.label, reason)
        return replace(region, skipped=reason)
    if axis_range is None:
        axis_range = rs.quality.max(axis=0) - rs.quality.min(axis=0)
    q = rs.quality[region.member_indices]
    mean = q.mean(axis=0)
    var = np.maximum(q.var(axis=0, ddof=1), variance_floor(axis_range))
    return replace(region, mean=mean, variance=var)
