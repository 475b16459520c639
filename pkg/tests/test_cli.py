import csv
import hashlib
import json
import logging
import subprocess
import sys

import numpy as np
import pytest

from qualperf.cli import main
from qualperf.evaluate import ideal_erc, pooled_comparison
from qualperf.modelfile import load_models
from qualperf.predictor import REPORT_FLOOR, expected_performance, predict_batch
from qualperf.records import load_records
from qualperf.synth import SynthConfig

FAST = ["--kmin", "3", "--kmax", "3", "--params", "VVV", "--restarts", "2"]


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_config(path, **kw):
    path.write_text(json.dumps(SynthConfig(**kw).to_dict()))
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A small synthetic set plus a model trained on it by the CLI."""
    d = tmp_path_factory.mktemp("cli")
    cfg = write_config(d / "synth.json", n_match=60, n_nonmatch=300, seed=1)
    assert main(["synth", "--config", str(cfg), "--output", str(d / "data.csv")]) == 0
    assert main(["train", "--input", str(d / "data.csv"), "--output", str(d / "model"), *FAST]) == 0
    return d


class TestSynth:
    def test_default_row_count(self, tmp_path):
        out = tmp_path / "d.csv"
        assert main(["synth", "--output", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("score,label,q1,q2,pool")
        assert len(lines) == 1 + 15_000

    def test_bad_config_path(self, tmp_path, capsys):
        missing = tmp_path / "nope.json"
        assert main(["synth", "--config", str(missing), "--output", str(tmp_path / "d.csv")]) == 2
        assert str(missing) in capsys.readouterr().err

    def test_same_seed_same_file(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", n_match=30, n_nonmatch=30)
        for name in ("a.csv", "b.csv"):
            main(["synth", "--config", str(cfg), "--seed", "4", "--output", str(tmp_path / name)])
        assert sha(tmp_path / "a.csv") == sha(tmp_path / "b.csv")
        main(["synth", "--config", str(cfg), "--seed", "5", "--output", str(tmp_path / "c.csv")])
        assert sha(tmp_path / "a.csv") != sha(tmp_path / "c.csv")


class TestTrain:
    def test_default_settings_log_training_matrix(self, tmp_path, caplog):
        main(["synth", "--output", str(tmp_path / "d.csv")])
        with caplog.at_level(logging.INFO):
            code = main(["train", "--input", str(tmp_path / "d.csv"), "--output", str(tmp_path / "m"),
                         "--kmin", "1", "--kmax", "1", "--params", "VVV", "--restarts", "1"])
        assert code == 0
        assert "training matrix 2000 x 4" in caplog.text
        doc = json.loads((tmp_path / "m" / "model_fmr0.001.json").read_text())
        assert doc["training"]["config"]["n_qs"] == 12 and doc["training"]["config"]["n_rand"] == 20

    def test_cluster_mode(self, workspace, tmp_path, caplog):
        with caplog.at_level(logging.INFO):
            main(["train", "--input", str(workspace / "data.csv"), "--output", str(tmp_path / "m"),
                  "--mode", "cluster", "--kmin", "2", "--kmax", "2", "--params", "VVI"])
        assert "training matrix 500 x 4" in caplog.text

    def test_eight_targets(self, workspace, tmp_path):
        targets = "0.0001,0.0003,0.001,0.003,0.01,0.03,0.1,0.3"
        assert main(["train", "--input", str(workspace / "data.csv"), "--output", str(tmp_path / "m"),
                     "--fmr-targets", targets, "--kmin", "1", "--kmax", "1", "--params", "VVV",
                     "--restarts", "1"]) == 0
        files = sorted(p.name for p in (tmp_path / "m").glob("model_*.json"))
        assert len(files) == 8
        manifest = json.loads((tmp_path / "m" / "manifest.json").read_text())
        assert [e["target_fmr"] for e in manifest["models"]] == [float(v) for v in targets.split(",")]

    def test_no_usable_regions(self, workspace, tmp_path, capsys):
        code = main(["train", "--input", str(workspace / "data.csv"), "--output", str(tmp_path / "m"),
                     "--min-match", "100000", *FAST])
        assert code == 2
        assert "no usable" in capsys.readouterr().err

    def test_unknown_parametrization_is_usage_error(self, workspace, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--input", str(workspace / "data.csv"), "--output", str(tmp_path / "m"),
                  "--params", "ABC"])
        assert exc.value.code == 1

    def test_all_fits_unsupported(self, workspace, tmp_path, capsys):
        code = main(["train", "--input", str(workspace / "data.csv"), "--output", str(tmp_path / "m"),
                     "--params", "VEV", "--kmin", "1", "--kmax", "1"])
        assert code == 3
        assert "numerical" in capsys.readouterr().err


class TestPredict:
    def test_centres_and_far_points(self, workspace, tmp_path):
        tm, = load_models(workspace / "model")
        centres = SynthConfig().centers()
        q = np.vstack([centres, [[60.0, 60.0]]])
        qfile = tmp_path / "q.csv"
        qfile.write_text("q1,q2\n" + "".join(f"{float(a)!r},{float(b)!r}\n" for a, b in q))
        out = tmp_path / "p.csv"
        assert main(["predict", "--model", str(workspace / "model"), "--input", str(qfile),
                     "--output", str(out), "--nmc", "500"]) == 0
        rows = read_csv(out)
        assert list(rows[0]) == ["q1", "q2", "fmr_pred", "fnmr_pred", "fmr_lo", "fmr_hi", "fnmr_lo",
                                 "fnmr_hi", "support_flag"]
        for row in rows[:-1]:
            assert row["support_flag"] == "ok"
            assert all(np.isfinite(float(row[k])) for k in ("fmr_pred", "fnmr_pred", "fnmr_lo"))
        assert rows[-1]["support_flag"] == "low_support"

        preds = predict_batch(tm.mixture, q, n_mc=500, seed=0)
        for row, p in zip(rows, preds):
            assert float(row["fnmr_pred"]) == p.expected[1]
            assert float(row["fmr_lo"]) == p.interval[0, 0]

    def test_dimension_mismatch(self, workspace, tmp_path, capsys):
        qfile = tmp_path / "q.csv"
        qfile.write_text("q1\n0.5\n")
        assert main(["predict", "--model", str(workspace / "model"), "--input", str(qfile),
                     "--output", str(tmp_path / "p.csv")]) == 2
        assert "d_q" in capsys.readouterr().err

    def test_density_floor_flag(self, workspace, tmp_path):
        qfile = tmp_path / "q.csv"
        qfile.write_text("q1,q2\n0.0,0.0\n")
        main(["predict", "--model", str(workspace / "model"), "--input", str(qfile),
              "--output", str(tmp_path / "p.csv"), "--density-floor", "1e6", "--nmc", "10"])
        assert read_csv(tmp_path / "p.csv")[0]["support_flag"] == "low_support"


class TestEvaluate:
    def test_outputs_and_library_agreement(self, workspace, tmp_path):
        out = tmp_path / "ev"
        assert main(["evaluate", "--model", str(workspace / "model"), "--input", str(workspace / "data.csv"),
                     "--output", str(out), "--plots"]) == 0
        for name in ("pooled_report.csv", "roc_true.csv", "roc_pred.csv", "erc_fmr0.001_model.csv",
                     "erc_fmr0.001_ideal.csv", "roc.svg", "erc.svg"):
            assert (out / name).is_file(), name
        assert (out / "roc.svg").read_text().lstrip().startswith("<?xml")

        rs = load_records(workspace / "data.csv")
        tm, = load_models(workspace / "model")
        pred = np.clip(expected_performance(tm.mixture, rs.quality), REPORT_FLOOR, 1.0)
        pc = pooled_comparison(rs, pred, tm.operating_point)
        rows = read_csv(out / "pooled_report.csv")
        assert len(rows) == 2 * 25
        for row in rows:
            s = pc.pools[row["pool"]][row["measure"]]
            for key in ("true_mean", "true_lo", "true_hi", "pred_mean", "pred_lo", "pred_hi"):
                assert float(row[key]) == getattr(s, key)

    def test_perfect_predictor_injection(self, workspace, tmp_path):
        rs = load_records(workspace / "data.csv")
        tm, = load_models(workspace / "model")
        t = tm.operating_point.threshold
        fails = (rs.scores < t) & rs.is_match
        inj = tmp_path / "oracle.csv"
        inj.write_text("fmr_pred,fnmr_pred\n" + "".join(f"0.0,{float(f)!r}\n" for f in fails))
        out = tmp_path / "ev"
        assert main(["evaluate", "--model", str(workspace / "model"), "--input", str(workspace / "data.csv"),
                     "--output", str(out), "--predictions", str(inj)]) == 0
        curve = read_csv(out / "erc_fmr0.001_model.csv")
        frac = np.array([float(r["reject_frac"]) for r in curve])
        fnmr = np.array([float(r["fnmr"]) for r in curve])
        overall = fails.sum() / rs.is_match.sum()
        assert fnmr[0] == pytest.approx(overall)
        k = int(np.argmax(fnmr == 0))
        assert frac[k] == pytest.approx(overall, abs=1e-12)
        assert np.all(fnmr[k:] == 0)
        ideal = ideal_erc(rs.match_scores, t)
        np.testing.assert_allclose(fnmr, ideal.fnmr)

    def test_single_pool(self, tmp_path, workspace):
        data = tmp_path / "one.csv"
        cfg = write_config(tmp_path / "c.json", angles=[[0.0], [0.0]], n_match=30, n_nonmatch=60)
        main(["synth", "--config", str(cfg), "--output", str(data)])
        main(["evaluate", "--model", str(workspace / "model"), "--input", str(data),
              "--output", str(tmp_path / "ev")])
        rows = read_csv(tmp_path / "ev" / "pooled_report.csv")
        assert sorted((r["pool"], r["measure"]) for r in rows) == [("c0_0", "fmr"), ("c0_0", "fnmr")]

    def test_missing_pools(self, workspace, tmp_path, capsys):
        data = tmp_path / "nopool.csv"
        data.write_text("score,label,q1,q2\n1.0,match,0,0\n0.0,nonmatch,0,0\n")
        assert main(["evaluate", "--model", str(workspace / "model"), "--input", str(data),
                     "--output", str(tmp_path / "ev")]) == 2
        assert "pool" in capsys.readouterr().err


class TestDebias:
    def test_fit_and_train_with_transform(self, tmp_path):
        data = tmp_path / "b.csv"
        cfg = write_config(tmp_path / "c.json", biased=True, n_match=40, n_nonmatch=120)
        main(["synth", "--config", str(cfg), "--output", str(data)])
        assert main(["debias", "--input", str(data), "--output", str(tmp_path / "t.json")]) == 0
        doc = json.loads((tmp_path / "t.json").read_text())
        assert (doc["a"], doc["b"]) == (0.1, 1 / 18)
        assert np.array(doc["x"]).shape == (4, 2)
        assert main(["train", "--input", str(data), "--output", str(tmp_path / "m"), "--mode", "cluster",
                     "--debias", str(tmp_path / "t.json"), "--kmin", "2", "--kmax", "2",
                     "--params", "VVI"]) == 0
        assert load_models(tmp_path / "m")[0].debias is not None
        assert main(["predict", "--model", str(tmp_path / "m"), "--input", str(data),
                     "--output", str(tmp_path / "p.csv"), "--nmc", "10"]) == 0
        assert main(["evaluate", "--model", str(tmp_path / "m"), "--input", str(data),
                     "--output", str(tmp_path / "ev")]) == 0

    def test_prediction_without_angles_refused(self, tmp_path):
        data = tmp_path / "b.csv"
        cfg = write_config(tmp_path / "c.json", biased=True, n_match=40, n_nonmatch=120)
        main(["synth", "--config", str(cfg), "--output", str(data)])
        main(["debias", "--input", str(data), "--output", str(tmp_path / "t.json")])
        main(["train", "--input", str(data), "--output", str(tmp_path / "m"), "--mode", "cluster",
              "--debias", str(tmp_path / "t.json"), "--kmin", "1", "--kmax", "1", "--params", "VVI"])
        qfile = tmp_path / "q.csv"
        qfile.write_text("q1,q2\n0.1,0.2\n")
        assert main(["predict", "--model", str(tmp_path / "m"), "--input", str(qfile),
                     "--output", str(tmp_path / "p.csv")]) == 2

    def test_rank_deficient_is_numerical_failure(self, tmp_path, capsys):
        f = tmp_path / "a.csv"
        f.write_text("q1,q2,gamma1,gamma2\n0.1,0.2,0,0\n0.3,0.1,0,0\n0.2,0.5,0,0\n0.4,0.4,0,0\n0.0,0.9,0,0\n")
        assert main(["debias", "--input", str(f), "--output", str(tmp_path / "t.json")]) == 3
        assert "null directions" in capsys.readouterr().err


class TestProcess:
    def test_usage_exit_code(self):
        proc = subprocess.run([sys.executable, "-m", "qualperf"], capture_output=True, text=True)
        assert proc.returncode == 1
        assert "usage" in proc.stderr

    def test_data_error_exit_code(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "qualperf", "train", "--input", str(tmp_path / "x.csv"),
                               "--output", str(tmp_path / "m")], capture_output=True, text=True)
        assert proc.returncode == 2
        assert "x.csv" in proc.stderr
