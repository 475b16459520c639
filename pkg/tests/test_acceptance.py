"""Acceptance suite: one test per acceptance criterion, each with its runtime budget.

The conftest hooks print a ``criterion N: PASS/FAIL`` line for every test
named ``test_criterion_N_...`` at the end of the run.
"""
import hashlib
import time

import numpy as np
import pytest
from scipy import integrate, special

from qualperf.cli import main
from qualperf.debias import DEFAULT_A, DEFAULT_B, apply, build_targets, fit_from_rows, fit_transform
from qualperf.evaluate import erc_curve, ideal_erc, random_erc
from qualperf.gmm import MixtureModel, em_fit, log_density, select_model
from qualperf.perf import beta_posterior, credible_interval, threshold_at_fmr
from qualperf.pipeline import TrainConfig, build_training_set, quality_regions, train
from qualperf.predictor import condition, expected_performance, log_marginal_q, predict
from qualperf.synth import SynthConfig, analytic_performance, generate, generate_with_angles

pytestmark = pytest.mark.acceptance


class Budget:
    """Wall-clock guard for a criterion's runtime limit."""

    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        if exc[0] is None:
            assert self.elapsed < self.seconds, f"took {self.elapsed:.1f}s, budget {self.seconds}s"


@pytest.fixture(scope="module")
def default_model():
    """Default synthetic data and the model trained on it with K=9, VVV at FMR 0.001.

    Returns the records, the trained model and the fitting time, so the
    criterion that owns this fit can charge it to its own budget.
    """
    cfg = SynthConfig()
    start = time.perf_counter()
    rs = generate(cfg)
    tm, = train(rs, [0.001], TrainConfig(k_range=(9, 9), params=["VVV"]))
    return cfg, rs, tm, time.perf_counter() - start


def test_criterion_1_structural_shapes():
    with Budget(5):
        rs = generate(SynthConfig())
        grid = TrainConfig(n_qs=12, n_rand=20)
        op = threshold_at_fmr(rs.nonmatch_scores, 0.001)
        regions = quality_regions(rs, grid)
        assert len(regions) == 100
        ts, _ = build_training_set(rs, op, grid, regions)
        assert ts.shape == (2000, 4)
        ts, modelled = build_training_set(rs, op, TrainConfig(n_rand=20, mode="cluster"))
        assert len(modelled) == 25
        assert ts.shape == (500, 4)


def test_criterion_2_conjugacy():
    rng = np.random.default_rng(2)
    with Budget(10):
        for m, l in rng.integers(0, 10_000, size=(1000, 2)):
            bp = beta_posterior(int(m), int(l), 1, 1)
            assert (bp.a, bp.b) == (m + 1, l + 1)
            alpha = rng.uniform(0.01, 0.5)
            lo, hi = credible_interval(bp, alpha)
            log_norm = special.betaln(bp.a, bp.b)

            def pdf(x, a=bp.a, b=bp.b, c=log_norm):
                return np.exp((a - 1) * np.log(x) + (b - 1) * np.log1p(-x) - c)

            mass = integrate.quad(pdf, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
            assert abs(mass - (1 - alpha)) <= 1e-8


def test_criterion_3_coverage():
    rng = np.random.default_rng(3)
    with Budget(30):
        n_exp = 10_000
        tau = rng.uniform(0, 1, n_exp)
        n = rng.integers(20, 501, n_exp)
        m = rng.binomial(n, tau)
        hits = 0
        for ti, ni, mi in zip(tau, n, m):
            lo, hi = credible_interval(beta_posterior(int(mi), int(ni - mi)), 0.05)
            hits += lo <= ti <= hi
        coverage = hits / n_exp
        assert abs(coverage - 0.95) <= 0.02, coverage


def test_criterion_4_em():
    with Budget(60):
        rng = np.random.default_rng(4)
        for seed in range(100):
            K = 1 + seed % 4
            param = ("EII", "VII", "EEI", "VVI", "EEE", "VVV")[seed % 6]
            centers = 3 * rng.normal(size=(K, 3))
            X = centers[rng.integers(0, K, 200)] + rng.normal(size=(200, 3))
            trace = np.array(em_fit(X, K, param, seed=seed, restarts=1).ll_trace)
            assert np.all(np.diff(trace) >= -1e-9), (seed, np.diff(trace).min())

        X = rng.normal(size=(500, 4)) @ rng.normal(size=(4, 4))
        one = em_fit(X, 1, "VVV")
        np.testing.assert_allclose(one.means[0], X.mean(axis=0), rtol=0, atol=1e-10)
        np.testing.assert_allclose(one.covariances[0], np.cov(X.T, bias=True), rtol=0, atol=1e-10)

        hits = 0
        for seed in range(20):
            r = np.random.default_rng(100 + seed)
            centers = np.array([[0.0, 0.0], [8.0, 0.0], [4.0, 8.0 * np.sqrt(3) / 2]])
            X = np.vstack([c + r.standard_normal((100, 2)) for c in centers])
            model, _ = select_model(X, (1, 8), ("EII", "VVV"), seed=seed, restarts=1)
            hits += model.K == 3
        assert hits >= 18, hits


def random_joint(rng):
    K = int(rng.integers(1, 6))
    d_q, d_r = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    d = d_q + d_r
    covs = []
    for _ in range(K):
        A = rng.normal(size=(d, d))
        covs.append(0.3 * (A @ A.T) + 0.2 * np.eye(d))
    return MixtureModel(weights=rng.dirichlet(np.ones(K)), means=2 * rng.normal(size=(K, d)),
                        covariances=np.array(covs), parametrization="VVV", d_q=d_q, d_r=d_r)


def test_criterion_5_conditioning():
    rng = np.random.default_rng(5)
    with Budget(60):
        for _ in range(50):
            model = random_joint(rng)
            q = model.means[rng.integers(model.K), :model.d_q] + 0.5 * rng.normal(size=model.d_q)
            cm = condition(model, q)
            sd = np.sqrt(np.max(np.diagonal(cm.covariances, axis1=1, axis2=2), axis=0))
            lo, hi = cm.means.min(axis=0) - 10 * sd, cm.means.max(axis=0) + 10 * sd
            n = 2001 if model.d_r == 1 else 401
            grids = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
            mesh = np.meshgrid(*grids, indexing="ij")
            R = np.column_stack([g.ravel() for g in mesh])
            joint = log_density(model, np.column_stack([np.tile(q, (len(R), 1)), R]))

            ratio = np.exp(joint - log_marginal_q(model, q))
            cond = np.exp(cm.log_pdf(R))
            big = ratio > 1e-300
            np.testing.assert_allclose(cond[big], ratio[big], rtol=1e-6)

            dens = np.exp(joint).reshape(mesh[0].shape)
            first = [R[:, j].reshape(mesh[0].shape) * dens for j in range(model.d_r)]

            def integrate_all(v):
                for g in reversed(grids):
                    v = integrate.simpson(v, x=g, axis=-1)
                return float(v)

            marginal = integrate_all(dens)
            expected = np.array([integrate_all(f) for f in first]) / marginal
            pred = predict(model, q, n_mc=0)
            np.testing.assert_allclose(pred.expected_raw, expected, rtol=0, atol=1e-4)


def test_criterion_6_end_to_end_accuracy(default_model):
    cfg, rs, tm, fit_seconds = default_model
    with Budget(120 - fit_seconds):
        centres = cfg.centers()
        _, true_fnmr = analytic_performance(cfg, centres, tm.operating_point.threshold)
        keep = true_fnmr >= 1e-3
        assert keep.sum() >= 10
        pred = np.array([predict(tm.mixture, c, n_mc=0).expected[1] for c in centres[keep]])
        mae = np.mean(np.abs(np.log10(pred) - np.log10(true_fnmr[keep])))
        print(f"log10 FNMR mean absolute error {mae:.4f} over {keep.sum()} conditions")
        assert mae <= 0.15


def test_criterion_7_erc(default_model):
    _, rs, tm, _ = default_model
    t = tm.operating_point.threshold
    with Budget(30):
        match = rs.match_scores
        fails = match < t
        overall = fails.mean()
        oracle = erc_curve(match, fails.astype(float), t)
        k = int(fails.sum())
        assert oracle.reject_fraction[k] == pytest.approx(overall, abs=1e-15)
        assert oracle.fnmr[k] == 0 and oracle.fnmr[k - 1] > 0

        pred = expected_performance(tm.mixture, rs.quality[rs.is_match])[:, 1]
        model = erc_curve(match, pred, t)
        ideal = ideal_erc(match, t)
        rand = random_erc(match, t, n_perm=50, seed=0)
        assert np.all(model.fnmr >= ideal.fnmr)
        assert np.all(model.fnmr <= rand.fnmr)


def test_criterion_8_debias():
    rng = np.random.default_rng(8)
    with Budget(5):
        A = rng.normal(size=(200, 4))
        x0 = rng.normal(size=(4, 2))
        np.testing.assert_allclose(fit_transform(A, A @ x0).x, x0, rtol=0, atol=1e-10)

        A = rng.normal(size=(300, 4)) * [1, 10, 100, 0.1]
        B = rng.normal(size=(300, 2))
        t = fit_transform(A, B)
        grad = A.T @ (A @ t.x - B)
        scale = np.linalg.norm(A, axis=0)[:, None] * np.linalg.norm(B, axis=0)[None, :]
        assert np.max(np.abs(grad) / scale) <= 1e-8

        assert (DEFAULT_A, DEFAULT_B) == (1 / 10, 1 / 18)
        rows = np.array([[1.0, 2.0, 30.0, 18.0], [3.0, 4.0, 30.0, 18.0]])
        Bt, _ = build_targets(rows)
        np.testing.assert_allclose(Bt.mean(axis=0), [30 / 10, 18 / 18])

        sc = SynthConfig(biased=True, n_match=40, n_nonmatch=40)
        srs, angles, _ = generate_with_angles(sc)
        data = np.column_stack([srs.quality, angles])
        t = fit_from_rows(data)
        assert (t.a, t.b) == (1 / 10, 1 / 18)
        out = apply(t, data)
        keys, inv = np.unique(angles, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        cents = np.array([out[inv == i].mean(axis=0) for i in range(len(keys))])
        within = np.mean([np.linalg.norm(out[inv == i] - cents[i], axis=1).mean() for i in range(len(keys))])
        dist = np.linalg.norm(cents[:, None] - cents[None], axis=2)
        assert dist[np.triu_indices(len(keys), 1)].min() > 3 * within


def test_criterion_9_determinism(tmp_path):
    def digest(path):
        return hashlib.sha256(path.read_bytes()).hexdigest()

    with Budget(120):
        hashes = []
        for run in ("a", "b"):
            d = tmp_path / run
            d.mkdir()
            assert main(["synth", "--seed", "11", "--output", str(d / "data.csv")]) == 0
            assert main(["train", "--input", str(d / "data.csv"), "--output", str(d / "model"),
                         "--fmr-targets", "0.001,0.01", "--kmin", "2", "--kmax", "4",
                         "--params", "VVI,VVV", "--seed", "3"]) == 0
            assert main(["predict", "--model", str(d / "model" / "model_fmr0.001.json"),
                         "--input", str(d / "data.csv"), "--output", str(d / "pred.csv"),
                         "--nmc", "200", "--seed", "5"]) == 0
            files = sorted(p for p in d.rglob("*") if p.is_file())
            hashes.append({p.relative_to(d).as_posix(): digest(p) for p in files})
        assert len(hashes[0]) == 5
        assert hashes[0] == hashes[1]
