"""Linear map from biased quality measurements to a debiased quality space.

Training rows are ``[q1, q2, gamma1, gamma2]``: two measured quality
features plus the ground-truth capture angles (degrees). Targets shift
each measurement by the mean of its capture condition and add the scaled
angle, ``a * gamma1 + (q1 - mean_q1[cond])`` and likewise with ``b`` for
the second feature. The transform is the least-squares solution of
``A x ~= B``, computed with a QR factorisation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import qr, solve_triangular

from .errors import DataError, NumericalError
from .records import load_table_columns

DEFAULT_A = 1 / 10
DEFAULT_B = 1 / 18


@dataclass(frozen=True, eq=False)
class DebiasTransform:
    x: np.ndarray
    a: float = DEFAULT_A
    b: float = DEFAULT_B
    condition_means: dict[tuple[float, ...], np.ndarray] = field(default_factory=dict)

    @property
    def d_in(self) -> int:
        return self.x.shape[0]

    @property
    def d_out(self) -> int:
        return self.x.shape[1]

    def to_dict(self) -> dict:
        return {
            "x": self.x.tolist(),
            "a": self.a,
            "b": self.b,
            "condition_means": [
                {"gamma": list(k), "mean": v.tolist()} for k, v in self.condition_means.items()
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> DebiasTransform:
        return cls(
            x=np.array(d["x"], dtype=float),
            a=float(d["a"]),
            b=float(d["b"]),
            condition_means={tuple(e["gamma"]): np.array(e["mean"]) for e in d.get("condition_means", [])},
        )


def build_targets(rows, a: float = DEFAULT_A, b: float = DEFAULT_B):
    """Debiased targets ``B`` for rows ``(q1, q2, gamma1, gamma2)``.

    Returns ``(B, condition_means)``. Every capture condition needs at least
    two rows, otherwise centring is meaningless.
    """
    A = np.asarray(rows, dtype=float)
    if A.ndim != 2 or A.shape[1] != 4:
        raise DataError(f"expected rows of (q1, q2, gamma1, gamma2), got shape {A.shape}")
    gammas = A[:, 2:4]
    keys, inverse, counts = np.unique(gammas, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if np.any(counts < 2):
        bad = keys[counts < 2][0]
        raise DataError(f"capture condition gamma=({bad[0]:g}, {bad[1]:g}) has a single row")
    means = np.zeros((len(keys), 2))
    np.add.at(means, inverse, A[:, :2])
    means /= counts[:, None]
    B = np.column_stack([
        a * A[:, 2] + (A[:, 0] - means[inverse, 0]),
        b * A[:, 3] + (A[:, 1] - means[inverse, 1]),
    ])
    cond = {tuple(float(g) for g in k): m for k, m in zip(keys, means)}
    return B, cond


def _rank_check(A: np.ndarray) -> None:
    _, s, vt = np.linalg.svd(A, full_matrices=False)
    tol = s[0] * max(A.shape) * np.finfo(float).eps if s.size else 0.0
    null = vt[s <= tol]
    if A.shape[0] < A.shape[1] or null.size:
        dirs = "; ".join(np.array2string(v, precision=3) for v in null) or "too few rows"
        raise NumericalError(f"design matrix is rank deficient, null directions: {dirs}")


def fit_transform(A, B, a: float = DEFAULT_A, b: float = DEFAULT_B,
                  condition_means: dict | None = None) -> DebiasTransform:
    """Least-squares ``x = argmin ||A x - B||`` via ``A = QR``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    if A.ndim != 2 or A.shape[0] != B.shape[0]:
        raise DataError(f"A {A.shape} and B {B.shape} must have the same number of rows")
    _rank_check(A)
    Q, R = qr(A, mode="economic")
    x = solve_triangular(R, Q.T @ B)
    return DebiasTransform(x=x, a=a, b=b, condition_means=condition_means or {})


def fit_from_rows(rows, a: float = DEFAULT_A, b: float = DEFAULT_B) -> DebiasTransform:
    """Build targets from ``(q1, q2, gamma1, gamma2)`` rows and fit the transform."""
    A = np.asarray(rows, dtype=float)
    B, cond = build_targets(A, a, b)
    return fit_transform(A, B, a, b, cond)


def apply(t: DebiasTransform, a_row) -> np.ndarray:
    """Map input row(s) of length ``d_in`` to the debiased space."""
    arr = np.asarray(a_row, dtype=float)
    if arr.shape[-1] != t.d_in:
        raise DataError(f"input has {arr.shape[-1]} features, transform expects {t.d_in}")
    return arr @ t.x


def load_rows(path: str | Path, columns=("q1", "q2", "gamma1", "gamma2")) -> np.ndarray:
    """Read the debias training columns from a comma-separated file."""
    return load_table_columns(path, columns)
