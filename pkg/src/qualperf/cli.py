"""Command-line front end.

    qualperf synth     --output data.csv [--config synth.json] [--seed N]
    qualperf train     --input data.csv --output model_dir [--fmr-targets ...]
    qualperf predict   --model model_dir --input quality.csv --output pred.csv
    qualperf evaluate  --model model_dir --input data.csv --output report_dir [--plots]
    qualperf debias    --input angles.csv --output transform.json

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import debias as debias_mod
from .errors import DataError, NumericalError, QualPerfError
from .evaluate import (erc_curve, ideal_erc, pooled_comparison, roc_points, write_pooled,
                       write_roc)
from .gmm import PARAMETRIZATIONS, UNSUPPORTED
from .modelfile import load_models, load_transform, save_manifest, save_transform
from .pipeline import TrainConfig, TrainedModel, train
from .predictor import DENSITY_FLOOR, DEFAULT_N_MC, REPORT_FLOOR, expected_performance, predict_batch
from .records import RecordSet, load_quality, load_records, load_table_columns
from .synth import SynthConfig, generate_with_angles, save_synth

log = logging.getLogger("qualperf")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from None


def _param_list(text: str) -> list[str]:
    tokens = [t.strip().upper() for t in text.split(",") if t.strip()]
    bad = [t for t in tokens if t not in PARAMETRIZATIONS + UNSUPPORTED]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown parametrization(s): {', '.join(bad)}")
    return tokens


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qualperf", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic verification dataset")
    s.add_argument("--config", type=Path, help="JSON synth configuration")
    s.add_argument("--output", type=Path, required=True)
    s.add_argument("--seed", type=int, help="override the config seed")

    t = sub.add_parser("train", help="train one model per target FMR")
    t.add_argument("--input", type=Path, required=True)
    t.add_argument("--output", type=Path, required=True, help="output directory (manifest + models)")
    t.add_argument("--nqs", type=int, default=12)
    t.add_argument("--nrand", type=int, default=20)
    t.add_argument("--kmin", type=int, default=1)
    t.add_argument("--kmax", type=int, default=25)
    t.add_argument("--params", type=_param_list, default=list(PARAMETRIZATIONS))
    t.add_argument("--fmr-targets", type=_float_list, default=[0.001])
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--prior-a", type=float, default=1.0)
    t.add_argument("--prior-b", type=float, default=1.0)
    t.add_argument("--min-match", type=int, default=10)
    t.add_argument("--min-nonmatch", type=int, default=50)
    t.add_argument("--mode", choices=("grid", "cluster"), default="grid")
    t.add_argument("--restarts", type=int, default=5)
    t.add_argument("--debias", type=Path, help="transform file; input must carry gamma columns")

    r = sub.add_parser("predict", help="predict performance for quality vectors")
    r.add_argument("--model", type=Path, required=True, help="model file, manifest or model directory")
    r.add_argument("--input", type=Path, required=True)
    r.add_argument("--output", type=Path, required=True)
    r.add_argument("--fmr-target", type=float, help="pick one model from a manifest")
    r.add_argument("--alpha", type=float, default=0.05)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--nmc", type=int, default=DEFAULT_N_MC)
    r.add_argument("--density-floor", type=float, default=DENSITY_FLOOR)

    e = sub.add_parser("evaluate", help="pooled report, ROC and ERC files")
    e.add_argument("--model", type=Path, required=True)
    e.add_argument("--input", type=Path, required=True)
    e.add_argument("--output", type=Path, required=True, help="output directory")
    e.add_argument("--alpha", type=float, default=0.05)
    e.add_argument("--prior-a", type=float, default=1.0)
    e.add_argument("--prior-b", type=float, default=1.0)
    e.add_argument("--predictions", type=Path,
                   help="per-record fmr_pred,fnmr_pred to evaluate instead of model output")
    e.add_argument("--stride", type=int)
    e.add_argument("--plots", action="store_true", help="also write SVG plots")

    d = sub.add_parser("debias", help="fit the least-squares quality transform")
    d.add_argument("--input", type=Path, required=True, help="file with q1,q2,gamma1,gamma2")
    d.add_argument("--output", type=Path, required=True)
    d.add_argument("--a", type=float, default=debias_mod.DEFAULT_A)
    d.add_argument("--b", type=float, default=debias_mod.DEFAULT_B)
    return p


def _debias_quality(q: np.ndarray, path: Path, tr) -> np.ndarray:
    """Map measured quality plus the file's gamma columns through ``tr``."""
    if tr is None:
        return q
    gammas = load_table_columns(path, ("gamma1", "gamma2"))
    return debias_mod.apply(tr, np.column_stack([q, gammas]))


def _apply_debias(rs: RecordSet, path: Path, tr) -> RecordSet:
    if tr is None:
        return rs
    q = _debias_quality(rs.quality, path, tr)
    return RecordSet(scores=rs.scores, quality=q, is_match=rs.is_match, pool_ids=rs.pool_ids,
                     provenance=rs.provenance + " (debiased)")


def cmd_synth(args) -> int:
    cfg = SynthConfig.load(args.config) if args.config else SynthConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    rs, angles, _ = generate_with_angles(cfg)
    save_synth(args.output, rs, angles)
    log.info("wrote %d records (%d conditions) to %s", len(rs), cfg.n_conditions, args.output)
    return 0


def cmd_train(args) -> int:
    tr = load_transform(args.debias) if args.debias else None
    rs = _apply_debias(load_records(args.input), args.input, tr)
    cfg = TrainConfig(
        n_qs=args.nqs, n_rand=args.nrand, k_range=(args.kmin, args.kmax), params=args.params,
        seed=args.seed, prior_a=args.prior_a, prior_b=args.prior_b, min_match=args.min_match,
        min_nonmatch=args.min_nonmatch, mode=args.mode, restarts=args.restarts,
    )
    models = train(rs, args.fmr_targets, cfg)
    for tm in models:
        tm.debias = tr
        log.info("FMR %g: training matrix %d x %d, K=%d %s", tm.operating_point.target_fmr,
                 *tm.training_shape, tm.mixture.K, tm.mixture.parametrization)
    path = save_manifest(models, args.output)
    log.info("wrote %s", path)
    return 0


def _pick_model(models: list[TrainedModel], target: float | None) -> TrainedModel:
    if target is None:
        if len(models) != 1:
            raise DataError(f"manifest holds {len(models)} models; choose one with --fmr-target")
        return models[0]
    for tm in models:
        if np.isclose(tm.operating_point.target_fmr, target):
            return tm
    raise DataError(f"no model for target FMR {target}")


def cmd_predict(args) -> int:
    tm = _pick_model(load_models(args.model), args.fmr_target)
    m = tm.mixture
    if tm.debias is not None:
        q = _debias_quality(load_quality(args.input, tm.debias.d_in - 2), args.input, tm.debias)
    else:
        q = load_quality(args.input, m.d_q)
    preds = predict_batch(m, q, alpha=args.alpha, n_mc=args.nmc, seed=args.seed,
                          density_floor=args.density_floor)
    write_predictions(args.output, q, preds)
    return 0


def write_predictions(path: Path, q: np.ndarray, preds) -> None:
    header = [f"q{j + 1}" for j in range(q.shape[1])] + [
        "fmr_pred", "fnmr_pred", "fmr_lo", "fmr_hi", "fnmr_lo", "fnmr_hi", "support_flag"]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for qi, p in zip(q, preds):
            iv = p.interval
            w.writerow([repr(float(v)) for v in qi]
                       + [repr(float(p.expected[0])), repr(float(p.expected[1])),
                          repr(float(iv[0, 0])), repr(float(iv[0, 1])),
                          repr(float(iv[1, 0])), repr(float(iv[1, 1])), p.support.value])


def cmd_evaluate(args) -> int:
    models = load_models(args.model)
    rs = _apply_debias(load_records(args.input), args.input, models[0].debias)
    rs.require_both_labels()
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    injected = None
    if args.predictions is not None:
        injected = load_table_columns(args.predictions, ("fmr_pred", "fnmr_pred"))
        if len(injected) != len(rs):
            raise DataError(f"{args.predictions}: {len(injected)} rows, dataset has {len(rs)}")

    comparisons, thresholds, pred_roc = [], [], []
    erc_files = {}
    for tm in models:
        op = tm.operating_point
        if tm.mixture.d_q != rs.d_q:
            raise DataError(f"model expects d_q={tm.mixture.d_q}, dataset has {rs.d_q}")
        raw = injected if injected is not None else expected_performance(tm.mixture, rs.quality)
        reported = np.clip(raw, REPORT_FLOOR, 1.0)
        comparisons.append(pooled_comparison(rs, reported, op, args.alpha, args.prior_a, args.prior_b))
        thresholds.append(op.threshold)
        pred_roc.append((reported[~rs.is_match, 0].mean(), reported[rs.is_match, 1].mean()))

        tag = f"fmr{op.target_fmr:g}"
        match = rs.is_match
        model_curve = erc_curve(rs.scores[match], raw[match, 1], op.threshold, args.stride)
        ideal = ideal_erc(rs.scores[match], op.threshold, args.stride)
        for curve in (model_curve, ideal):
            path = out / f"erc_{tag}_{curve.variant}.csv"
            curve.save(path)
            erc_files[f"{tag} {curve.variant}"] = path

    write_pooled(out / "pooled_report.csv", comparisons)
    write_roc(out / "roc_true.csv", thresholds, roc_points(rs, thresholds))
    write_roc(out / "roc_pred.csv", thresholds, pred_roc)
    if args.plots:
        from .plots import plot_erc, plot_roc
        plot_roc(out / "roc_true.csv", out / "roc_pred.csv", out / "roc.svg")
        plot_erc(erc_files, out / "erc.svg")
    log.info("wrote evaluation files to %s", out)
    return 0


def cmd_debias(args) -> int:
    rows = debias_mod.load_rows(args.input)
    tr = debias_mod.fit_from_rows(rows, args.a, args.b)
    save_transform(tr, args.output)
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "debias": cmd_debias,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"qualperf: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, QualPerfError, OSError) as exc:
        print(f"qualperf: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
