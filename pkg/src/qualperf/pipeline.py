"""End-to-end training: regions -> posteriors -> resampled rows -> mixture."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .debias import DebiasTransform
from .errors import DataError
from .gmm import PARAMETRIZATIONS, MixtureModel, SelectionReport, select_model
from .partition import (MIN_REGION_SAMPLES, QualityRegion, build_regions, cluster_regions,
                        fit_region_gaussian, quantile_grid)
from .perf import (MIN_MATCH, MIN_NONMATCH, OperatingPoint, RegionModel, TrainingSet,
                   model_regions, sample_training_set, threshold_at_fmr)
from .records import RecordSet

log = logging.getLogger(__name__)

STANDARD_FMR_TARGETS = (0.0001, 0.0003, 0.001, 0.003, 0.01, 0.03, 0.1, 0.3)


@dataclass
class TrainConfig:
    n_qs: int = 12
    n_rand: int = 20
    k_range: tuple[int, int] = (1, 25)
    params: Sequence[str] = PARAMETRIZATIONS
    seed: int = 0
    prior_a: float = 1.0
    prior_b: float = 1.0
    min_quality: int = MIN_REGION_SAMPLES
    min_match: int = MIN_MATCH
    min_nonmatch: int = MIN_NONMATCH
    mode: str = "grid"
    restarts: int = 5
    tol: float = 1e-8
    max_iter: int = 500

    def to_dict(self) -> dict:
        return {
            "n_qs": self.n_qs, "n_rand": self.n_rand, "k_range": list(self.k_range),
            "params": list(self.params), "seed": self.seed, "prior_a": self.prior_a,
            "prior_b": self.prior_b, "min_quality": self.min_quality, "min_match": self.min_match,
            "min_nonmatch": self.min_nonmatch, "mode": self.mode, "restarts": self.restarts,
            "tol": self.tol, "max_iter": self.max_iter,
        }


@dataclass
class TrainedModel:
    mixture: MixtureModel
    operating_point: OperatingPoint
    report: SelectionReport
    training_shape: tuple[int, int]
    n_regions: int
    n_regions_used: int
    config: dict = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)
    debias: DebiasTransform | None = None


def quality_regions(rs: RecordSet, cfg: TrainConfig) -> list[QualityRegion]:
    """Regions (grid or one per pool) with their quality Gaussians fitted."""
    if cfg.mode == "grid":
        grid = quantile_grid(rs, cfg.n_qs)
        regions = build_regions(grid, rs)
        axis_range = grid.axis_range
    elif cfg.mode == "cluster":
        regions = cluster_regions(rs)
        axis_range = rs.quality.max(axis=0) - rs.quality.min(axis=0)
    else:
        raise DataError(f"unknown region mode '{cfg.mode}' (expected grid or cluster)")
    return [fit_region_gaussian(r, rs, axis_range, cfg.min_quality) for r in regions]


def build_training_set(rs: RecordSet, op: OperatingPoint, cfg: TrainConfig,
                       regions: list[QualityRegion] | None = None):
    """Returns ``(training_set, modelled_regions)``."""
    if regions is None:
        regions = quality_regions(rs, cfg)
    modelled = model_regions(regions, rs, op, cfg.prior_a, cfg.prior_b, cfg.min_match, cfg.min_nonmatch)
    ts = sample_training_set(modelled, np.random.SeedSequence((cfg.seed, 0)), cfg.n_rand)
    return ts, modelled


def train_operating_point(rs: RecordSet, op: OperatingPoint, cfg: TrainConfig,
                          regions: list[QualityRegion] | None = None) -> TrainedModel:
    ts, modelled = build_training_set(rs, op, cfg, regions)
    used = sum(isinstance(m, RegionModel) for m in modelled)
    log.info("target FMR %g: threshold %.6g, %d/%d regions usable, training matrix %d x %d",
             op.target_fmr, op.threshold, used, len(modelled), *ts.shape)
    mixture, report = select_model(ts, cfg.k_range, cfg.params, seed=(cfg.seed, 1),
                                   restarts=cfg.restarts, tol=cfg.tol, max_iter=cfg.max_iter)
    log.info("selected K=%d %s", mixture.K, mixture.parametrization)
    return TrainedModel(
        mixture=mixture, operating_point=op, report=report, training_shape=ts.shape,
        n_regions=len(modelled), n_regions_used=used, config=cfg.to_dict(),
        skipped=[m.skipped for m in modelled if not isinstance(m, RegionModel)],
    )


def train(rs: RecordSet, fmr_targets: Sequence[float], cfg: TrainConfig | None = None) -> list[TrainedModel]:
    """One model per target FMR; thresholds come from all non-match scores of ``rs``."""
    cfg = cfg or TrainConfig()
    rs.require_both_labels()
    regions = quality_regions(rs, cfg)
    if not any(r.usable for r in regions):
        raise DataError("no quality region has enough samples")
    return [train_operating_point(rs, threshold_at_fmr(rs.nonmatch_scores, f), cfg, regions)
            for f in fmr_targets]
