"""Verification records: schema, delimited-text I/O and pooling.

A ``RecordSet`` stores its records column-wise (score vector, quality
matrix, label mask, pool labels) because every downstream consumer works
on whole columns. Individual ``VerificationRecord`` objects are produced
on iteration or indexing.
"""

from __future__ import annotations

import csv
import enum
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataError


class Label(str, enum.Enum):
    MATCH = "match"
    NONMATCH = "nonmatch"


@dataclass(frozen=True)
class VerificationRecord:
    score: float
    quality: tuple[float, ...]
    label: Label
    pool_id: str | None = None


@dataclass(frozen=True)
class Schema:
    """Column mapping for delimited record files.

    ``quality`` lists the quality columns explicitly; when ``None`` every
    column named ``<quality_prefix><n>`` is used, ordered by ``n``.
    ``negate_scores`` converts distance-style inputs into similarities.
    """

    score: str = "score"
    label: str = "label"
    pool: str = "pool"
    quality: tuple[str, ...] | None = None
    quality_prefix: str = "q"
    match_token: str = "match"
    nonmatch_token: str = "nonmatch"
    negate_scores: bool = False

    def quality_columns(self, header: Sequence[str]) -> list[str]:
        if self.quality is not None:
            missing = [c for c in self.quality if c not in header]
            if missing:
                raise DataError(f"missing quality columns: {', '.join(missing)}")
            return list(self.quality)
        pat = re.compile(rf"^{re.escape(self.quality_prefix)}(\d+)$")
        found = [(int(m.group(1)), c) for c in header if (m := pat.match(c))]
        if not found:
            raise DataError(f"no quality columns matching '{self.quality_prefix}<n>' in header")
        return [c for _, c in sorted(found)]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class RecordSet:
    """Immutable column store of verification records."""

    scores: np.ndarray
    quality: np.ndarray
    is_match: np.ndarray
    pool_ids: tuple[str | None, ...] | None = None
    provenance: str = ""
    _d_q: int | None = field(default=None, repr=False)

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float).reshape(-1)
        quality = np.asarray(self.quality, dtype=float)
        if quality.ndim == 1:
            quality = quality.reshape(len(scores), -1) if len(scores) else quality.reshape(0, self._d_q or 1)
        is_match = np.asarray(self.is_match, dtype=bool).reshape(-1)
        n = len(scores)
        if quality.shape[0] != n or is_match.shape[0] != n:
            raise DataError("scores, quality and labels must have the same length")
        if self._d_q is not None and quality.shape[1] != self._d_q:
            raise DataError(f"quality has {quality.shape[1]} columns, expected d_q={self._d_q}")
        if not np.all(np.isfinite(scores)):
            raise DataError("scores must be finite")
        if self.pool_ids is not None and len(self.pool_ids) != n:
            raise DataError("pool_ids length does not match record count")
        object.__setattr__(self, "scores", _frozen(scores))
        object.__setattr__(self, "quality", _frozen(quality))
        object.__setattr__(self, "is_match", _frozen(is_match))
        if self.pool_ids is not None:
            object.__setattr__(self, "pool_ids", tuple(self.pool_ids))
        object.__setattr__(self, "_d_q", quality.shape[1])

    @property
    def d_q(self) -> int:
        return self._d_q

    @classmethod
    def from_records(cls, records: Iterable[VerificationRecord], d_q: int | None = None,
                     provenance: str = "") -> RecordSet:
        records = list(records)
        if d_q is None:
            if not records:
                raise DataError("cannot infer d_q from an empty record list")
            d_q = len(records[0].quality)
        for i, r in enumerate(records):
            if len(r.quality) != d_q:
                raise DataError(f"record {i}: quality has length {len(r.quality)}, expected {d_q}")
        pools = [r.pool_id for r in records]
        return cls(
            scores=np.array([r.score for r in records], dtype=float),
            quality=np.array([r.quality for r in records], dtype=float).reshape(len(records), d_q),
            is_match=np.array([Label(r.label) is Label.MATCH for r in records], dtype=bool),
            pool_ids=None if all(p is None for p in pools) else tuple(pools),
            provenance=provenance,
            _d_q=d_q,
        )

    def __len__(self) -> int:
        return len(self.scores)

    def __getitem__(self, i: int) -> VerificationRecord:
        return VerificationRecord(
            score=float(self.scores[i]),
            quality=tuple(float(v) for v in self.quality[i]),
            label=Label.MATCH if self.is_match[i] else Label.NONMATCH,
            pool_id=None if self.pool_ids is None else self.pool_ids[i],
        )

    def __iter__(self) -> Iterator[VerificationRecord]:
        return (self[i] for i in range(len(self)))

    @property
    def records(self) -> list[VerificationRecord]:
        return list(self)

    def subset(self, indices) -> RecordSet:
        idx = np.asarray(indices)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return RecordSet(
            scores=self.scores[idx],
            quality=self.quality[idx].reshape(len(idx), self.d_q),
            is_match=self.is_match[idx],
            pool_ids=None if self.pool_ids is None else tuple(self.pool_ids[i] for i in idx),
            provenance=self.provenance,
            _d_q=self.d_q,
        )

    @property
    def match_scores(self) -> np.ndarray:
        return self.scores[self.is_match]

    @property
    def nonmatch_scores(self) -> np.ndarray:
        return self.scores[~self.is_match]

    def require_both_labels(self) -> None:
        if not self.is_match.any() or self.is_match.all():
            raise DataError("record set must contain both match and non-match records")


def load_records(path: str | Path, schema: Schema | None = None) -> RecordSet:
    """Parse a comma-separated record file with a header row.

    Errors name the offending file line (the header is line 1).
    """
    schema = schema or Schema()
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        for col in (schema.score, schema.label):
            if col not in header:
                raise DataError(f"{path}: missing required column '{col}'")
        qcols = schema.quality_columns(header)
        i_score = header.index(schema.score)
        i_label = header.index(schema.label)
        i_q = [header.index(c) for c in qcols]
        i_pool = header.index(schema.pool) if schema.pool in header else None
        tokens = {schema.match_token: True, schema.nonmatch_token: False}

        scores, quality, labels, pools = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {lineno} has {len(row)} fields, header has {len(header)}")
            qcells = [row[i].strip() for i in i_q]
            if any(c == "" for c in qcells):
                raise DataError(
                    f"{path}: row {lineno}: inconsistent quality dimensionality "
                    f"({sum(c != '' for c in qcells)} of {len(qcols)} values present)")
            try:
                s = float(row[i_score])
                q = [float(c) for c in qcells]
            except ValueError as exc:
                raise DataError(f"{path}: row {lineno}: malformed number ({exc})") from None
            if not np.isfinite(s):
                raise DataError(f"{path}: row {lineno}: score is not finite")
            tok = row[i_label].strip()
            if tok not in tokens:
                raise DataError(f"{path}: row {lineno}: unknown label token '{tok}'")
            scores.append(-s if schema.negate_scores else s)
            quality.append(q)
            labels.append(tokens[tok])
            if i_pool is not None:
                p = row[i_pool].strip()
                pools.append(p if p else None)

    d_q = len(qcols)
    return RecordSet(
        scores=np.array(scores, dtype=float),
        quality=np.array(quality, dtype=float).reshape(len(scores), d_q),
        is_match=np.array(labels, dtype=bool),
        pool_ids=tuple(pools) if i_pool is not None else None,
        provenance=f"loaded from {path.name}",
        _d_q=d_q,
    )


def save_records(rs: RecordSet, path: str | Path) -> None:
    """Write ``rs`` in the format read by ``load_records``.

    Floats use ``repr`` so that a load/save cycle is exact.
    """
    path = Path(path)
    header = ["score", "label"] + [f"q{j + 1}" for j in range(rs.d_q)]
    if rs.pool_ids is not None:
        header.append("pool")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(rs)):
            row = [repr(float(rs.scores[i])), "match" if rs.is_match[i] else "nonmatch"]
            row += [repr(float(v)) for v in rs.quality[i]]
            if rs.pool_ids is not None:
                row.append(rs.pool_ids[i] or "")
            w.writerow(row)


def pool_by_label(rs: RecordSet) -> dict[str, RecordSet]:
    """Partition ``rs`` by pool id, preserving record order within each pool."""
    if rs.pool_ids is None or any(p is None for p in rs.pool_ids):
        missing = len(rs) if rs.pool_ids is None else sum(p is None for p in rs.pool_ids)
        raise DataError(f"{missing} record(s) have no pool_id")
    groups: dict[str, list[int]] = {}
    for i, p in enumerate(rs.pool_ids):
        groups.setdefault(p, []).append(i)
    return {p: rs.subset(idx) for p, idx in groups.items()}


def load_table_columns(path: str | Path, columns: Sequence[str]) -> np.ndarray:
    """Read named numeric columns from a delimited file with a header."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        missing = [c for c in columns if c not in header]
        if missing:
            raise DataError(f"{path}: missing columns {', '.join(missing)}")
        cols = [header.index(c) for c in columns]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(row[i]) for i in cols])
            except (IndexError, ValueError):
                raise DataError(f"{path}: row {lineno}: malformed or missing value") from None
    return np.array(rows, dtype=float).reshape(-1, len(columns))


def load_quality(path: str | Path, d_q: int | None = None, prefix: str = "q") -> np.ndarray:
    """Quality matrix from a file with ``q1..qd`` columns (score/label optional)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        header = next(csv.reader(fh), None)
    if header is None:
        raise DataError(f"{path}: empty file, header row required")
    qcols = Schema(quality_prefix=prefix).quality_columns([h.strip() for h in header])
    if d_q is not None and len(qcols) != d_q:
        raise DataError(f"{path}: {len(qcols)} quality columns but the model expects d_q={d_q}")
    return load_table_columns(path, qcols)
