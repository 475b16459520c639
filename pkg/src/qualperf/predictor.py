"""Expected performance for a quality vector from a trained joint mixture.

Conditioning each component on ``q`` gives a mixture over ``r`` with
weights ``psi_k`` proportional to ``pi_k N(q; mu_kq, S_kq)`` and component
moments from the usual Gaussian block formulas:

    mean_k = mu_kr + S_kc^T S_kq^-1 (q - mu_kq)
    cov_k  = S_kr  - S_kc^T S_kq^-1 S_kc

The point prediction is ``sum_k psi_k mean_k``.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.special import logsumexp

from .errors import DataError, NumericalError
from .gmm import LOG_2PI, MixtureModel

log = logging.getLogger(__name__)

DENSITY_FLOOR = 1e-12
REPORT_FLOOR = 1e-6
DEFAULT_N_MC = 10_000


class Support(str, enum.Enum):
    OK = "ok"
    LOW = "low_support"


@dataclass(frozen=True, eq=False)
class ConditionalMixture:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_marginal: float

    @property
    def marginal(self) -> float:
        return float(np.exp(self.log_marginal))

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def log_pdf(self, r) -> np.ndarray:
        """Log-density of the conditional mixture at one or more ``r`` rows."""
        R = np.atleast_2d(np.asarray(r, dtype=float))
        d = self.means.shape[1]
        out = np.full((len(R), len(self.weights)), -np.inf)
        for k, w in enumerate(self.weights):
            if w <= 0:
                continue
            L = np.linalg.cholesky(self.covariances[k])
            z = np.linalg.solve(L, (R - self.means[k]).T)
            out[:, k] = (np.log(w) - 0.5 * np.sum(z * z, axis=0)
                         - np.log(np.diag(L)).sum() - 0.5 * d * LOG_2PI)
        return logsumexp(out, axis=1)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        d = self.means.shape[1]
        z = rng.standard_normal((n, d))
        out = np.empty((n, d))
        for k in range(len(self.weights)):
            sel = comp == k
            if not sel.any():
                continue
            vals, vecs = np.linalg.eigh(self.covariances[k])
            root = vecs * np.sqrt(np.clip(vals, 0.0, None))
            out[sel] = self.means[k] + z[sel] @ root.T
        return out


@dataclass(frozen=True, eq=False)
class Prediction:
    expected: np.ndarray
    expected_raw: np.ndarray
    interval: np.ndarray
    support: Support
    marginal: float


def _check_q(model: MixtureModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape[0] != model.d_q:
        raise DataError(f"quality vector has length {q.shape[0]}, model expects d_q={model.d_q}")
    if not np.all(np.isfinite(q)):
        raise DataError("quality vector must be finite")
    return q


def _component_log_marginals(model: MixtureModel, Q: np.ndarray) -> np.ndarray:
    """``log pi_k + log N(q; mu_kq, S_kq)`` as an ``(n, K)`` array."""
    dq = model.d_q
    out = np.empty((len(Q), model.K))
    for k in range(model.K):
        Sq = model.covariances[k, :dq, :dq]
        L = np.linalg.cholesky(Sq)
        z = np.linalg.solve(L, (Q - model.means[k, :dq]).T)
        out[:, k] = (np.log(model.weights[k]) - 0.5 * np.sum(z * z, axis=0)
                     - np.log(np.diag(L)).sum() - 0.5 * dq * LOG_2PI)
    return out


def log_marginal_q(model: MixtureModel, q) -> float | np.ndarray:
    """Log of ``f(q)``; a matrix of rows gives one value per row."""
    arr = np.asarray(q, dtype=float)
    if arr.ndim == 2:
        if arr.shape[1] != model.d_q or not np.all(np.isfinite(arr)):
            raise DataError(f"expected finite rows of length d_q={model.d_q}, got shape {arr.shape}")
        return logsumexp(_component_log_marginals(model, arr), axis=1)
    q = _check_q(model, arr)
    return float(logsumexp(_component_log_marginals(model, q[None, :])[0]))


def marginal_q(model: MixtureModel, q) -> float | np.ndarray:
    """Marginal quality density ``f(q) = sum_k pi_k N(q; mu_kq, S_kq)``."""
    out = np.exp(log_marginal_q(model, q))
    return out if isinstance(out, np.ndarray) else float(out)


def _conditional_blocks(model: MixtureModel, k: int, q: np.ndarray):
    dq = model.d_q
    mu, S = model.means[k], model.covariances[k]
    Sq, Sc, Sr = S[:dq, :dq], S[:dq, dq:], S[dq:, dq:]
    factor = cho_factor(Sq, lower=True)
    gain = cho_solve(factor, Sc)  # S_kq^-1 S_kc
    mean = mu[dq:] + gain.T @ (q - mu[:dq])
    cov = Sr - Sc.T @ gain
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    if vals[0] < -1e-10 * max(1.0, abs(vals[-1])):
        raise NumericalError(f"component {k}: conditional covariance not PSD (min eig {vals[0]:.3g})")
    if vals[0] < 0:
        cov = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
    return mean, cov


def _component_log_marginals_single(model: MixtureModel, k: int, q: np.ndarray) -> float:
    dq = model.d_q
    diff = q - model.means[k, :dq]
    L = np.linalg.cholesky(model.covariances[k, :dq, :dq])
    z = np.linalg.solve(L, diff)
    return float(np.log(model.weights[k]) - 0.5 * z @ z
                 - np.log(np.diag(L)).sum() - 0.5 * dq * LOG_2PI)


def condition(model: MixtureModel, q) -> ConditionalMixture:
    """Condition the joint mixture on quality ``q``.

    Components whose quality block cannot be factorised are dropped and the
    remaining weights renormalised.
    """
    q = _check_q(model, q)
    lw = np.full(model.K, -np.inf)
    means = np.zeros((model.K, model.d_r))
    covs = np.zeros((model.K, model.d_r, model.d_r))
    for k in range(model.K):
        try:
            means[k], covs[k] = _conditional_blocks(model, k, q)
            lw[k] = _component_log_marginals_single(model, k, q)
        except (LinAlgError, np.linalg.LinAlgError, NumericalError) as exc:
            log.warning("component %d skipped while conditioning: %s", k, exc)
            covs[k] = np.eye(model.d_r)
    if not np.any(np.isfinite(lw)):
        raise NumericalError("no mixture component could be conditioned on q")
    log_marg = float(logsumexp(lw))
    weights = np.exp(lw - log_marg)
    weights /= weights.sum()
    return ConditionalMixture(weights=weights, means=means, covariances=covs, log_marginal=log_marg)


def predict(model: MixtureModel, q, alpha: float = 0.05, n_mc: int = DEFAULT_N_MC,
            rng: np.random.Generator | int | None = 0, density_floor: float = DENSITY_FLOOR) -> Prediction:
    """Conditional expectation of ``r`` given ``q`` with a Monte-Carlo band.

    The band holds the ``alpha/2`` and ``1 - alpha/2`` quantiles of
    ``n_mc`` draws from the conditional mixture (``n_mc=0`` skips it and
    returns NaNs). ``expected`` is clamped to ``[1e-6, 1]`` for reporting;
    ``expected_raw`` keeps the unclamped value.
    """
    if not 0.0 < alpha < 1.0:
        raise DataError(f"alpha must lie in (0, 1), got {alpha}")
    cm = condition(model, q)
    raw = cm.mean
    if n_mc > 0:
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        draws = cm.sample(rng, n_mc)
        interval = np.quantile(draws, [alpha / 2, 1 - alpha / 2], axis=0).T
    else:
        interval = np.full((model.d_r, 2), np.nan)
    support = Support.OK if cm.log_marginal >= np.log(density_floor) else Support.LOW
    return Prediction(
        expected=np.clip(raw, REPORT_FLOOR, 1.0),
        expected_raw=raw,
        interval=interval,
        support=support,
        marginal=cm.marginal,
    )


def predict_batch(model: MixtureModel, Q, alpha: float = 0.05, n_mc: int = DEFAULT_N_MC,
                  seed: int = 0, density_floor: float = DENSITY_FLOOR) -> list[Prediction]:
    """``predict`` for every row of ``Q``; row ``i`` draws from the ``i``-th child of ``seed``."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    children = np.random.SeedSequence(seed).spawn(len(Q))
    return [predict(model, q, alpha, n_mc, np.random.default_rng(c), density_floor)
            for q, c in zip(Q, children)]


def expected_performance(model: MixtureModel, Q) -> np.ndarray:
    """Vectorised raw ``E(r | q)`` for every row of ``Q`` (no intervals, no clamping)."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.shape[1] != model.d_q:
        raise DataError(f"quality rows have {Q.shape[1]} columns, model expects d_q={model.d_q}")
    dq = model.d_q
    lw = _component_log_marginals(model, Q)
    psi = np.exp(lw - logsumexp(lw, axis=1, keepdims=True))
    out = np.zeros((len(Q), model.d_r))
    for k in range(model.K):
        mu, S = model.means[k], model.covariances[k]
        gain = cho_solve(cho_factor(S[:dq, :dq], lower=True), S[:dq, dq:])
        out += psi[:, k, None] * (mu[dq:] + (Q - mu[:dq]) @ gain)
    return out
