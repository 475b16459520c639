"""Gaussian mixture density of the joint quality/performance space.

EM with the volume/shape/orientation covariance families whose M-step has
a closed form:

    EII  one shared spherical covariance  lambda * I
    VII  per-component spherical          lambda_k * I
    EEI  one shared diagonal covariance
    VVI  per-component diagonal
    EEE  one shared full covariance
    VVV  per-component full covariance

``VEI``, ``EVI``, ``EEV`` and ``VEV`` are recognised but need an iterative
M-step; they raise ``UnsupportedParametrizationError``. Model selection
uses ``BIC = 2 lnL - n ln N`` (larger is better).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import DataError, FitFailedError, UnsupportedParametrizationError
from .perf import TrainingSet

log = logging.getLogger(__name__)

PARAMETRIZATIONS = ("EII", "VII", "EEI", "VVI", "EEE", "VVV")
UNSUPPORTED = ("VEI", "EVI", "EEV", "VEV")
_SHARED = {"EII", "EEI", "EEE"}

RIDGE = 1e-8
EMPTY_COMPONENT = 1e-8
COLLAPSE = 1e-8
LOG_2PI = np.log(2 * np.pi)


def check_parametrization(param: str) -> str:
    token = str(param).upper()
    if token in PARAMETRIZATIONS:
        return token
    if token in UNSUPPORTED:
        raise UnsupportedParametrizationError(
            f"parametrization {token} needs an iterative M-step and is not supported")
    raise UnsupportedParametrizationError(f"unknown covariance parametrization '{param}'")


@dataclass(frozen=True, eq=False)
class MixtureModel:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    parametrization: str
    d_q: int
    d_r: int
    log_likelihood: float = float("nan")
    n_iter: int = 0
    converged: bool = False
    ll_trace: tuple[float, ...] = ()
    resets: int = 0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        cov = np.asarray(self.covariances, dtype=float)
        K = w.shape[0]
        d = self.d_q + self.d_r
        if mu.shape != (K, d) or cov.shape != (K, d, d):
            raise DataError(f"inconsistent mixture shapes: weights {w.shape}, means {mu.shape}, "
                            f"covariances {cov.shape} for d={d}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise DataError(f"mixture weights must lie on the simplex (sum {w.sum():.12g})")
        for a in (w, mu, cov):
            a.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)

    @property
    def K(self) -> int:
        return len(self.weights)

    @property
    def d(self) -> int:
        return self.d_q + self.d_r


def free_param_count(K: int, d: int, param: str) -> int:
    """Number of free parameters of a ``K``-component mixture in ``d`` dimensions."""
    param = check_parametrization(param)
    if K < 1 or d < 1:
        raise DataError(f"K and d must be >= 1, got K={K}, d={d}")
    cov = {
        "EII": 1,
        "VII": K,
        "EEI": d,
        "VVI": K * d,
        "EEE": d * (d + 1) // 2,
        "VVV": K * d * (d + 1) // 2,
    }[param]
    return (K - 1) + K * d + cov


def _cholesky(covs: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(covs)
    except np.linalg.LinAlgError:
        raise FitFailedError("covariance matrix is not positive definite") from None


def component_log_pdf(X: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """``log N(x_i; mu_k, Sigma_k)`` as an ``(n, K)`` array."""
    X = np.atleast_2d(X)
    n, d = X.shape
    chol = _cholesky(covs)
    out = np.empty((n, len(means)))
    for k in range(len(means)):
        z = solve_triangular(chol[k], (X - means[k]).T, lower=True, check_finite=False)
        out[:, k] = (-0.5 * np.einsum("ij,ij->j", z, z)
                     - np.log(np.diagonal(chol[k])).sum() - 0.5 * d * LOG_2PI)
    return out


def _as_matrix(data) -> tuple[np.ndarray, int, int]:
    if isinstance(data, TrainingSet):
        return data.data, data.d_q, data.d_r
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X, X.shape[1], 0


def log_density(model: MixtureModel, x) -> float | np.ndarray:
    """Mixture log-density at a point (float) or at each row of a matrix."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    X = np.atleast_2d(arr)
    if X.shape[1] != model.d or not np.all(np.isfinite(X)):
        raise DataError(f"expected finite points of dimension {model.d}, got shape {arr.shape}")
    lp = component_log_pdf(X, model.means, model.covariances) + np.log(model.weights)
    out = logsumexp(lp, axis=1)
    return float(out[0]) if single else out


def _regularize(cov: np.ndarray, reg: float) -> np.ndarray:
    """Add a ridge ``reg * trace / d`` when the smallest eigenvalue falls below it."""
    d = cov.shape[-1]
    cov = 0.5 * (cov + cov.T)
    floor = reg * np.trace(cov) / d
    if np.linalg.eigvalsh(cov)[0] < floor:
        cov = cov + floor * np.eye(d)
    return cov


def _m_step(X: np.ndarray, resp: np.ndarray, param: str, reg: float):
    n, d = X.shape
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    means = resp.T @ X / nk[:, None]
    K = len(nk)
    scatter = np.empty((K, d, d))
    for k in range(K):
        diff = X - means[k]
        scatter[k] = (resp[:, k, None] * diff).T @ diff

    if param == "VVV":
        covs = scatter / nk[:, None, None]
    elif param == "EEE":
        covs = np.broadcast_to(scatter.sum(axis=0) / n, (K, d, d))
    elif param == "VVI":
        covs = np.stack([np.diag(np.diag(scatter[k]) / nk[k]) for k in range(K)])
    elif param == "EEI":
        shared = np.diag(np.einsum("kii->i", scatter) / n)
        covs = np.broadcast_to(shared, (K, d, d))
    elif param == "VII":
        lam = np.einsum("kii->k", scatter) / (d * nk)
        covs = lam[:, None, None] * np.eye(d)
    elif param == "EII":
        lam = np.einsum("kii->", scatter) / (d * n)
        covs = np.broadcast_to(lam * np.eye(d), (K, d, d))
    else:  # pragma: no cover - guarded by check_parametrization
        raise UnsupportedParametrizationError(param)

    if param in _SHARED:
        covs = np.broadcast_to(_regularize(covs[0], reg), (K, d, d)).copy()
    else:
        covs = np.stack([_regularize(c, reg) for c in covs])
    weights = nk / nk.sum()
    return weights, means, covs


def _data_covariance(X: np.ndarray, param: str, reg: float) -> np.ndarray:
    d = X.shape[1]
    cov = np.cov(X, rowvar=False, bias=True).reshape(d, d)
    if param.endswith("II"):
        cov = np.trace(cov) / d * np.eye(d)
    elif param.endswith("I"):
        cov = np.diag(np.diag(cov))
    return _regularize(cov, reg)


def _rescue_empty(X, weights, means, covs, param, reg) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Re-seed components whose responsibility mass vanished at the worst-fit row."""
    n = len(X)
    empty = np.flatnonzero(weights < EMPTY_COMPONENT)
    if empty.size == 0:
        return weights, means, covs, 0
    means, covs, weights = means.copy(), covs.copy(), weights.copy()
    ok = np.setdiff1d(np.arange(len(weights)), empty)
    lp = logsumexp(component_log_pdf(X, means[ok], covs[ok]) + np.log(weights[ok]), axis=1)
    order = np.argsort(lp, kind="stable")
    for j, k in enumerate(empty):
        means[k] = X[order[j]]
        if param not in _SHARED:
            covs[k] = _data_covariance(X, param, reg)
        weights[k] = 1.0 / n
    weights /= weights.sum()
    log.debug("re-seeded %d empty component(s)", empty.size)
    return weights, means, covs, int(empty.size)


def _check_collapse(covs: np.ndarray, scale: np.ndarray) -> None:
    """Fail when a component has shrunk onto a point or a line at the data's own scale.

    Covariances are compared after standardising every axis by the data's
    standard deviation, so an axis that is small in absolute terms is not
    mistaken for a collapse.
    """
    std = scale[:, None] * scale[None, :]
    for k, cov in enumerate(covs):
        smallest = np.linalg.eigvalsh(cov / std)[0]
        if smallest < COLLAPSE:
            raise FitFailedError(f"component {k} collapsed (standardised eigenvalue {smallest:.3g})")


def _init_responsibilities(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """Farthest-point seeding on standardised data, then one hard assignment."""
    scale = X.std(axis=0)
    Z = (X - X.mean(axis=0)) / np.where(scale > 0, scale, 1.0)
    centers = [int(rng.integers(len(Z)))]
    dist = np.sum((Z - Z[centers[0]]) ** 2, axis=1)
    for _ in range(1, K):
        nxt = int(np.argmax(dist))
        centers.append(nxt)
        dist = np.minimum(dist, np.sum((Z - Z[nxt]) ** 2, axis=1))
    d2 = np.stack([np.sum((Z - Z[c]) ** 2, axis=1) for c in centers], axis=1)
    resp = np.zeros((len(Z), K))
    resp[np.arange(len(Z)), np.argmin(d2, axis=1)] = 1.0
    return resp


def _em_run(X, K, param, rng, tol, max_iter, reg):
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    weights, means, covs = _m_step(X, _init_responsibilities(X, K, rng), param, reg)
    _check_collapse(covs, scale)
    trace: list[float] = []
    resets = 0
    converged = False
    for it in range(max_iter):
        weights, means, covs, n_reset = _rescue_empty(X, weights, means, covs, param, reg)
        resets += n_reset
        lp = component_log_pdf(X, means, covs) + np.log(weights)
        row_ll = logsumexp(lp, axis=1)
        ll = float(row_ll.sum())
        if not np.isfinite(ll):
            raise FitFailedError("log-likelihood is not finite")
        trace.append(ll)
        if it > 0 and abs(ll - trace[-2]) <= tol * abs(ll):
            converged = True
            break
        resp = np.exp(lp - row_ll[:, None])
        weights, means, covs = _m_step(X, resp, param, reg)
        _check_collapse(covs, scale)
    return weights, means, covs, trace, converged, resets


def em_fit(data, K: int, param: str = "VVV", seed: int = 0, restarts: int = 5,
           tol: float = 1e-8, max_iter: int = 500, reg: float = RIDGE) -> MixtureModel:
    """Fit a ``K``-component mixture by EM, keeping the best of ``restarts`` runs.

    Parameters
    ----------
    data : TrainingSet or array of shape (n, d)
    K : number of components
    param : covariance parametrization token
    seed : root seed; restart ``i`` uses the ``i``-th spawned child stream
    tol : stop when the relative change in log-likelihood is at most ``tol``

    Raises ``FitFailedError`` if every restart ends in a degenerate model.
    """
    param = check_parametrization(param)
    X, d_q, d_r = _as_matrix(data)
    if K < 1:
        raise DataError(f"K must be >= 1, got {K}")
    if len(X) < K:
        raise DataError(f"{len(X)} rows cannot support K={K} components")
    if np.all(X == X[0]):
        raise FitFailedError(f"all {len(X)} rows are identical; no {param} covariance can be estimated")
    best = None
    errors = []
    for child in np.random.SeedSequence(seed).spawn(max(1, restarts)):
        try:
            run = _em_run(X, K, param, np.random.default_rng(child), tol, max_iter, reg)
        except FitFailedError as exc:
            errors.append(str(exc))
            continue
        if best is None or run[3][-1] > best[3][-1]:
            best = run
    if best is None:
        raise FitFailedError(f"all {len(errors)} EM restarts failed for K={K}, {param}: {errors[0]}")
    weights, means, covs, trace, converged, resets = best
    return MixtureModel(
        weights=weights, means=means, covariances=covs, parametrization=param,
        d_q=d_q, d_r=d_r, log_likelihood=trace[-1], n_iter=len(trace),
        converged=converged, ll_trace=tuple(trace), resets=resets,
    )


def data_log_likelihood(model: MixtureModel, data) -> float:
    X, _, _ = _as_matrix(data)
    if X.shape[1] != model.d:
        raise DataError(f"data has {X.shape[1]} columns, model expects {model.d}")
    return float(np.sum(log_density(model, X)))


def bic(model: MixtureModel, data) -> float:
    X, _, _ = _as_matrix(data)
    n = free_param_count(model.K, model.d, model.parametrization)
    return 2.0 * data_log_likelihood(model, X) - n * np.log(len(X))


@dataclass
class SelectionEntry:
    K: int
    parametrization: str
    bic: float
    status: str
    log_likelihood: float = float("nan")
    n_iter: int = 0


@dataclass
class SelectionReport:
    entries: list[SelectionEntry] = field(default_factory=list)
    chosen: tuple[int, str] | None = None

    def table(self) -> dict[tuple[int, str], float]:
        return {(e.K, e.parametrization): e.bic for e in self.entries}

    def to_dict(self) -> dict:
        return {
            "chosen": None if self.chosen is None else {"K": self.chosen[0], "parametrization": self.chosen[1]},
            "entries": [
                {"K": e.K, "parametrization": e.parametrization,
                 "bic": None if not np.isfinite(e.bic) else e.bic, "status": e.status,
                 "log_likelihood": None if not np.isfinite(e.log_likelihood) else e.log_likelihood,
                 "n_iter": e.n_iter}
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> SelectionReport:
        entries = [
            SelectionEntry(K=e["K"], parametrization=e["parametrization"],
                           bic=-np.inf if e["bic"] is None else e["bic"], status=e["status"],
                           log_likelihood=np.nan if e.get("log_likelihood") is None else e["log_likelihood"],
                           n_iter=e.get("n_iter", 0))
            for e in d.get("entries", [])
        ]
        ch = d.get("chosen")
        return cls(entries=entries, chosen=None if ch is None else (ch["K"], ch["parametrization"]))


def select_model(data, k_range: Sequence[int] = (1, 25), params: Iterable[str] = PARAMETRIZATIONS,
                 seed: int = 0, restarts: int = 5, tol: float = 1e-8,
                 max_iter: int = 500) -> tuple[MixtureModel, SelectionReport]:
    """Fit every ``(K, parametrization)`` cell and keep the maximum-BIC model.

    Failed or unsupported cells are recorded with ``BIC = -inf``.
    """
    k_min, k_max = int(k_range[0]), int(k_range[1])
    params = list(params)
    if k_min < 1 or k_max < k_min or not params:
        raise DataError(f"empty model grid: K in [{k_min}, {k_max}], params {params}")
    report = SelectionReport()
    best, best_bic = None, -np.inf
    for K in range(k_min, k_max + 1):
        for p in params:
            try:
                model = em_fit(data, K, p, seed=seed, restarts=restarts, tol=tol, max_iter=max_iter)
            except UnsupportedParametrizationError as exc:
                report.entries.append(SelectionEntry(K, str(p).upper(), -np.inf, f"unsupported: {exc}"))
                continue
            except (FitFailedError, DataError) as exc:
                report.entries.append(SelectionEntry(K, str(p).upper(), -np.inf, f"failed: {exc}"))
                continue
            score = bic(model, data)
            status = "converged" if model.converged else "max_iter"
            report.entries.append(SelectionEntry(K, model.parametrization, score, status,
                                                 model.log_likelihood, model.n_iter))
            if np.isfinite(score) and score > best_bic:
                best, best_bic = model, score
    if best is None:
        raise FitFailedError("every model in the selection grid failed")
    report.chosen = (best.K, best.parametrization)
    return best, report
