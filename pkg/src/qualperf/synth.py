"""Synthetic verification data with closed-form quality-conditioned error rates.

Capture conditions form a grid of angles per quality axis (think camera
and flash positions). A condition's quality centre is ``scale * angle``;
record qualities scatter around it with a Gaussian spread. Scores are
normal given the record's quality:

    match     ~ N(mu_m(q), sigma_m)
    non-match ~ N(mu_n(q), sigma_n)

    mu_m(q) = m0 - depth * (1 - exp(-0.5 * sum(((q - f) / ell)**2))) + asym . (q - f)
    mu_n(q) = n0 + n_slope . (q - f)

where ``f`` is the frontal point. Hence at threshold ``t``
``FNMR(q) = Phi((t - mu_m(q)) / sigma_m)`` and
``FMR(q) = 1 - Phi((t - mu_n(q)) / sigma_n)``.

With ``biased=True`` the emitted quality folds each axis around the
frontal point (``|q - f| + offset``), imitating an assessor that cannot
tell left from right; scores still follow the unfolded quality.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .errors import DataError
from .records import RecordSet


@dataclass
class SynthConfig:
    angles: list[list[float]] = field(default_factory=lambda: [
        [-30.0, -15.0, 0.0, 15.0, 30.0],
        [-36.0, -18.0, 0.0, 18.0, 36.0],
    ])
    scales: list[float] = field(default_factory=lambda: [1 / 10, 1 / 18])
    spread: list[float] = field(default_factory=lambda: [0.35, 0.3])
    frontal: list[float] = field(default_factory=lambda: [0.0, 0.0])
    match_base: float = 5.0
    match_depth: float = 3.5
    match_length: list[float] = field(default_factory=lambda: [2.0, 1.6])
    match_asym: list[float] = field(default_factory=lambda: [0.3, -0.15])
    match_sigma: float = 1.0
    nonmatch_base: float = 0.0
    nonmatch_slope: list[float] = field(default_factory=lambda: [0.05, 0.0])
    nonmatch_sigma: float = 1.0
    n_match: int = 100
    n_nonmatch: int = 500
    seed: int = 0
    biased: bool = False
    biased_offset: list[float] = field(default_factory=lambda: [-1.0, -2.0])

    def __post_init__(self):
        self.validate()

    @property
    def d_q(self) -> int:
        return len(self.angles)

    @property
    def n_conditions(self) -> int:
        return int(np.prod([len(a) for a in self.angles]))

    def validate(self) -> None:
        d = self.d_q
        if d < 1:
            raise DataError("synth config needs at least one quality axis")
        for name in ("scales", "spread", "frontal", "match_length", "match_asym",
                     "nonmatch_slope", "biased_offset"):
            if len(getattr(self, name)) != d:
                raise DataError(f"synth config: '{name}' must have {d} entries")
        if any(len(a) == 0 for a in self.angles):
            raise DataError("synth config: every axis needs at least one angle")
        if self.match_sigma <= 0 or self.nonmatch_sigma <= 0:
            raise DataError("synth config: score spreads must be positive")
        if any(s < 0 for s in self.spread) or any(l <= 0 for l in self.match_length):
            raise DataError("synth config: spreads must be >= 0 and length scales > 0")
        if self.n_match < 0 or self.n_nonmatch < 0:
            raise DataError("synth config: counts must be non-negative")
        grid = self.support_grid()
        gap = match_mean(self, grid) - nonmatch_mean(self, grid)
        if np.any(gap <= 0):
            raise DataError(
                f"synth config: match mean must exceed non-match mean over the quality "
                f"support (min gap {gap.min():.3g})")

    def centers(self) -> np.ndarray:
        return np.array([[s * a for s, a in zip(self.scales, combo)]
                         for combo in itertools.product(*self.angles)], dtype=float)

    def condition_angles(self) -> np.ndarray:
        return np.array(list(itertools.product(*self.angles)), dtype=float)

    def condition_ids(self) -> list[str]:
        return ["c" + "_".join(str(i) for i in combo)
                for combo in itertools.product(*(range(len(a)) for a in self.angles))]

    def support_grid(self, n: int = 21) -> np.ndarray:
        """Points covering the centres +/- 3 spreads (used for validation)."""
        c = self.centers()
        lo = c.min(axis=0) - 3 * np.asarray(self.spread)
        hi = c.max(axis=0) + 3 * np.asarray(self.spread)
        n = n if self.d_q <= 3 else 5
        axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
        return np.array(list(itertools.product(*axes)), dtype=float)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> SynthConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise DataError(f"synth config: unknown keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> SynthConfig:
        path = Path(path)
        if not path.is_file():
            raise DataError(f"synth config not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"synth config {path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)


def match_mean(cfg: SynthConfig, q) -> np.ndarray:
    Q = np.atleast_2d(np.asarray(q, dtype=float))
    dev = Q - np.asarray(cfg.frontal)
    r2 = np.sum((dev / np.asarray(cfg.match_length)) ** 2, axis=1)
    return cfg.match_base - cfg.match_depth * (1 - np.exp(-0.5 * r2)) + dev @ np.asarray(cfg.match_asym)


def nonmatch_mean(cfg: SynthConfig, q) -> np.ndarray:
    Q = np.atleast_2d(np.asarray(q, dtype=float))
    dev = Q - np.asarray(cfg.frontal)
    return cfg.nonmatch_base + dev @ np.asarray(cfg.nonmatch_slope)


def analytic_performance(cfg: SynthConfig, q, t: float):
    """Exact ``(fmr, fnmr)`` at threshold ``t`` for (unfolded) quality ``q``.

    Returns floats for a single vector and arrays for a matrix of rows.
    """
    arr = np.asarray(q, dtype=float)
    fnmr = norm.cdf((t - match_mean(cfg, arr)) / cfg.match_sigma)
    fmr = norm.sf((t - nonmatch_mean(cfg, arr)) / cfg.nonmatch_sigma)
    if arr.ndim == 1:
        return float(fmr[0]), float(fnmr[0])
    return fmr, fnmr


def _emit_quality(cfg: SynthConfig, z: np.ndarray) -> np.ndarray:
    if not cfg.biased:
        return z
    return np.abs(z - np.asarray(cfg.frontal)) + np.asarray(cfg.biased_offset)


def generate_with_angles(cfg: SynthConfig) -> tuple[RecordSet, np.ndarray, np.ndarray]:
    """Generate records plus per-record capture angles and unfolded qualities."""
    centers = cfg.centers()
    angles = cfg.condition_angles()
    ids = cfg.condition_ids()
    spread = np.asarray(cfg.spread)
    children = np.random.SeedSequence(cfg.seed).spawn(len(centers))
    scores, quality, true_q, is_match, pools, ang = [], [], [], [], [], []
    for c, child in enumerate(children):
        rng = np.random.default_rng(child)
        for n, matched in ((cfg.n_match, True), (cfg.n_nonmatch, False)):
            z = centers[c] + spread * rng.standard_normal((n, cfg.d_q))
            if matched:
                s = match_mean(cfg, z) + cfg.match_sigma * rng.standard_normal(n)
            else:
                s = nonmatch_mean(cfg, z) + cfg.nonmatch_sigma * rng.standard_normal(n)
            scores.append(s)
            true_q.append(z)
            quality.append(_emit_quality(cfg, z))
            is_match.append(np.full(n, matched))
            pools += [ids[c]] * n
            ang.append(np.repeat(angles[c][None, :], n, axis=0))
    d = cfg.d_q
    rs = RecordSet(
        scores=np.concatenate(scores),
        quality=np.concatenate(quality).reshape(-1, d),
        is_match=np.concatenate(is_match),
        pool_ids=tuple(pools),
        provenance=f"synthetic seed={cfg.seed}",
        _d_q=d,
    )
    return rs, np.concatenate(ang).reshape(-1, d), np.concatenate(true_q).reshape(-1, d)


def generate(cfg: SynthConfig) -> RecordSet:
    return generate_with_angles(cfg)[0]


def save_synth(path: str | Path, rs: RecordSet, angles: np.ndarray) -> None:
    """Record file with extra ``gamma<n>`` columns holding the capture angles."""
    d = rs.d_q
    header = ["score", "label"] + [f"q{j + 1}" for j in range(d)] + ["pool"] + \
        [f"gamma{j + 1}" for j in range(angles.shape[1])]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(rs)):
            w.writerow([repr(float(rs.scores[i])), "match" if rs.is_match[i] else "nonmatch"]
                       + [repr(float(v)) for v in rs.quality[i]]
                       + [rs.pool_ids[i]]
                       + [repr(float(v)) for v in angles[i]])
