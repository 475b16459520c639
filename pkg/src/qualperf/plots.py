"""Optional SVG plots, drawn only from the emitted CSV files."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def _read(path: Path) -> dict[str, np.ndarray]:
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in (rows[0] if rows else {})}


def plot_roc(true_csv: Path, pred_csv: Path, out: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    for path, style, name in ((true_csv, "o-", "true"), (pred_csv, "s--", "predicted")):
        d = _read(path)
        ax.plot(np.maximum(d["fmr"], 1e-6), d["fnmr"], style, label=name)
    ax.set_xscale("log")
    ax.set_xlabel("FMR")
    ax.set_ylabel("FNMR")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, format="svg")
    plt.close(fig)


def plot_erc(curves: dict[str, Path], out: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    for name, path in curves.items():
        d = _read(path)
        ax.plot(d["reject_frac"], d["fnmr"], ":" if "ideal" in name else "-", label=name)
    ax.set_xlabel("fraction rejected")
    ax.set_ylabel("FNMR")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(out, format="svg")
    plt.close(fig)
