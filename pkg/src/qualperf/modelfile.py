"""JSON documents for trained models and the per-operating-point manifest.

Covariances are always stored as full row-major matrices. Output is
deterministic: floats are written with their shortest round-trip
representation and keys in a fixed order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .debias import DebiasTransform
from .errors import DataError
from .gmm import MixtureModel, SelectionReport
from .perf import OperatingPoint, PERF_COLUMNS
from .pipeline import TrainedModel

MODEL_FORMAT = "qualperf-model/1"
MANIFEST_FORMAT = "qualperf-manifest/1"
TRANSFORM_FORMAT = "qualperf-debias/1"


def model_to_dict(tm: TrainedModel) -> dict:
    m = tm.mixture
    op = tm.operating_point
    doc = {
        "format": MODEL_FORMAT,
        "d_q": m.d_q,
        "d_r": m.d_r,
        "performance": list(PERF_COLUMNS[:m.d_r]),
        "parametrization": m.parametrization,
        "K": m.K,
        "weights": m.weights.tolist(),
        "means": m.means.tolist(),
        "covariances": m.covariances.tolist(),
        "operating_point": {"threshold": op.threshold, "target_fmr": op.target_fmr,
                            "achieved_fmr": op.achieved_fmr},
        "fit": {"log_likelihood": m.log_likelihood, "n_iter": m.n_iter, "converged": m.converged},
        "training": {"rows": tm.training_shape[0], "cols": tm.training_shape[1],
                     "regions": tm.n_regions, "regions_used": tm.n_regions_used,
                     "config": tm.config},
        "selection": tm.report.to_dict(),
    }
    if tm.debias is not None:
        doc["debias"] = tm.debias.to_dict()
    return doc


def model_from_dict(doc: dict) -> TrainedModel:
    if doc.get("format") != MODEL_FORMAT:
        raise DataError(f"not a model document (format tag {doc.get('format')!r})")
    mixture = MixtureModel(
        weights=np.array(doc["weights"], dtype=float),
        means=np.array(doc["means"], dtype=float),
        covariances=np.array(doc["covariances"], dtype=float),
        parametrization=doc["parametrization"],
        d_q=int(doc["d_q"]), d_r=int(doc["d_r"]),
        log_likelihood=doc["fit"]["log_likelihood"], n_iter=doc["fit"]["n_iter"],
        converged=doc["fit"]["converged"],
    )
    op = doc["operating_point"]
    tr = doc["training"]
    return TrainedModel(
        mixture=mixture,
        operating_point=OperatingPoint(op["threshold"], op["target_fmr"], op.get("achieved_fmr")),
        report=SelectionReport.from_dict(doc.get("selection", {})),
        training_shape=(tr["rows"], tr["cols"]),
        n_regions=tr["regions"], n_regions_used=tr["regions_used"], config=tr.get("config", {}),
        debias=DebiasTransform.from_dict(doc["debias"]) if "debias" in doc else None,
    )


def _dump(doc: dict, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=1, allow_nan=True) + "\n")


def _load(path: Path) -> dict:
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None


def save_model(tm: TrainedModel, path: str | Path) -> None:
    _dump(model_to_dict(tm), Path(path))


def load_model(path: str | Path) -> TrainedModel:
    return model_from_dict(_load(Path(path)))


def model_filename(target_fmr: float) -> str:
    return f"model_fmr{target_fmr:g}.json"


def save_manifest(models: list[TrainedModel], directory: str | Path) -> Path:
    """Write one model file per operating point plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for tm in models:
        name = model_filename(tm.operating_point.target_fmr)
        save_model(tm, directory / name)
        entries.append({"target_fmr": tm.operating_point.target_fmr,
                        "threshold": tm.operating_point.threshold, "file": name})
    path = directory / "manifest.json"
    _dump({"format": MANIFEST_FORMAT, "models": entries}, path)
    return path


def load_models(path: str | Path) -> list[TrainedModel]:
    """Load a manifest (or its directory), or a single model file."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    doc = _load(path)
    if doc.get("format") == MODEL_FORMAT:
        return [model_from_dict(doc)]
    if doc.get("format") != MANIFEST_FORMAT:
        raise DataError(f"{path}: unrecognised format tag {doc.get('format')!r}")
    return [load_model(path.parent / e["file"]) for e in doc["models"]]


def save_transform(t: DebiasTransform, path: str | Path) -> None:
    _dump({"format": TRANSFORM_FORMAT, **t.to_dict()}, Path(path))


def load_transform(path: str | Path) -> DebiasTransform:
    doc = _load(Path(path))
    if doc.get("format") == MODEL_FORMAT and "debias" in doc:
        doc = doc["debias"]
    elif doc.get("format") != TRANSFORM_FORMAT:
        raise DataError(f"{path}: no debias transform in document")
    return DebiasTransform.from_dict(doc)
