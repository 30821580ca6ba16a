"""Columnar trace chunks and the CSV trace format.

Header (exact)::

    t,y,u,w,theta_hat,theta_err,r,sum_y2,sum_w2,ratio,phase,stage

Reals are written with ``repr`` (shortest round-trip decimal); the ratio is
``inf`` until the first nonzero noise value. Row ``t = 0`` holds the initial
state with ``w = 0`` and phase ``init``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
import pandas as pd

from .adversary import Phase
from .dynamics import TraceRecord

COLUMNS = ("t", "y", "u", "w", "theta_hat", "theta_err", "r", "sum_y2",
           "sum_w2", "ratio", "phase", "stage")
HEADER = ",".join(COLUMNS)
FLOAT_COLUMNS = COLUMNS[1:10]

_TAGS = np.array([p.tag for p in Phase], dtype=object)
_TAG_CODES = {p.tag: int(p) for p in Phase}


class TraceSchemaError(ValueError):
    pass


def energy_ratio(sum_y2, sum_w2):
    sum_y2 = np.asarray(sum_y2, dtype=np.float64)
    sum_w2 = np.asarray(sum_w2, dtype=np.float64)
    out = np.full(sum_y2.shape, np.inf)
    pos = sum_w2 > 0
    np.divide(sum_y2, sum_w2, out=out, where=pos)
    return out


@dataclass
class TraceChunk:
    t: np.ndarray
    y: np.ndarray
    u: np.ndarray
    w: np.ndarray
    theta_hat: np.ndarray
    theta_err: np.ndarray
    r: np.ndarray
    sum_y2: np.ndarray
    sum_w2: np.ndarray
    ratio: np.ndarray
    phase: np.ndarray
    stage: np.ndarray

    def __len__(self):
        return len(self.t)

    def __getitem__(self, idx) -> "TraceChunk":
        if isinstance(idx, (int, np.integer)):
            idx = slice(idx, idx + 1 if idx != -1 else None)
        return TraceChunk(**{f.name: getattr(self, f.name)[idx] for f in fields(self)})

    def copy(self) -> "TraceChunk":
        return TraceChunk(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    def column(self, name) -> np.ndarray:
        return getattr(self, name)

    def records(self) -> Iterator[TraceRecord]:
        cols = [getattr(self, c).tolist() for c in COLUMNS]
        for row in zip(*cols):
            row = list(row)
            row[10] = _TAGS[row[10]]
            yield TraceRecord(*row)

    @classmethod
    def concat(cls, chunks: Iterable["TraceChunk"]) -> "TraceChunk":
        chunks = list(chunks)
        if not chunks:
            raise ValueError("no chunks")
        return cls(**{f.name: np.concatenate([getattr(c, f.name) for c in chunks])
                      for f in fields(cls)})

    @classmethod
    def from_columns(cls, t, y, u, w, theta_hat, theta_err, r, sum_y2, sum_w2,
                     phase, stage, ratio=None) -> "TraceChunk":
        f64 = lambda a: np.ascontiguousarray(a, dtype=np.float64)  # noqa: E731
        if ratio is None:
            ratio = energy_ratio(sum_y2, sum_w2)
        return cls(np.asarray(t, dtype=np.int64), f64(y), f64(u), f64(w),
                   f64(theta_hat), f64(theta_err), f64(r), f64(sum_y2), f64(sum_w2),
                   f64(ratio), np.asarray(phase, dtype=np.int8),
                   np.asarray(stage, dtype=np.int64))


def as_chunks(trace) -> Iterator[TraceChunk]:
    """Accept a single chunk or any iterable of chunks."""
    if isinstance(trace, TraceChunk):
        yield trace
    else:
        yield from trace


def phase_tags(chunk: TraceChunk) -> np.ndarray:
    return _TAGS[chunk.phase]


# -- CSV ----------------------------------------------------------------------

def format_rows(chunk: TraceChunk) -> str:
    cols = []
    for name in COLUMNS:
        arr = getattr(chunk, name)
        if name == "phase":
            cols.append(_TAGS[arr].tolist())
        elif name in ("t", "stage"):
            cols.append(map(str, arr.tolist()))
        else:
            cols.append(map(repr, arr.tolist()))
    return "".join(",".join(row) + "\n" for row in zip(*cols))


def write_csv(trace, path) -> int:
    """Stream chunks to ``path``; returns the number of rows written."""
    n = 0
    with open(path, "w", newline="") as fh:
        fh.write(HEADER + "\n")
        for chunk in as_chunks(trace):
            fh.write(format_rows(chunk))
            n += len(chunk)
    return n


def read_csv(path, chunksize: int = 1 << 16) -> Iterator[TraceChunk]:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().rstrip("\r\n")
    if header != HEADER:
        raise TraceSchemaError(f"{path}: header {header!r} does not match {HEADER!r}")
    dtypes = {c: np.float64 for c in FLOAT_COLUMNS}
    dtypes.update(t=np.int64, stage=np.int64, phase=str)
    reader = pd.read_csv(path, chunksize=chunksize, dtype=dtypes,
                         float_precision="round_trip", keep_default_na=False)
    for df in reader:
        try:
            phase = df["phase"].map(_TAG_CODES)
        except KeyError as exc:  # pragma: no cover - map does not raise
            raise TraceSchemaError(str(exc)) from exc
        if phase.isna().any():
            bad = df["phase"][phase.isna()].iloc[0]
            raise TraceSchemaError(f"{path}: unknown phase tag {bad!r}")
        yield TraceChunk(
            df["t"].to_numpy(np.int64),
            *(df[c].to_numpy(np.float64) for c in FLOAT_COLUMNS),
            phase.to_numpy(np.int8), df["stage"].to_numpy(np.int64))


def load_csv(path) -> TraceChunk:
    return TraceChunk.concat(read_csv(path))
