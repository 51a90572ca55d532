"""Long-format result tables and their CSV form.

``results.csv`` columns, in order::

    experiment, algorithm, s, x, metric, trial, value

``x`` is the round index for trace experiments and the sweep value otherwise;
``s`` is the local step count (1 for FedProx, 0 where it does not apply).

``summary.csv`` columns, in order::

    experiment, algorithm, s, x, metric, n, mean, stderr

``stderr`` is the sample standard deviation over trials divided by
``sqrt(n)`` (0 for a single trial).  Derived rows (federation gain, reciprocal
MSE) are computed from trial means and carry ``n`` trials with ``stderr`` nan.
All reals are written with 17 significant digits.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..exceptions import EmptySelectionError, InputShapeError

__all__ = ["COLUMNS", "SUMMARY_COLUMNS", "ResultTable", "SummaryRow", "fmt"]

COLUMNS = ("experiment", "algorithm", "s", "x", "metric", "trial", "value")
SUMMARY_COLUMNS = ("experiment", "algorithm", "s", "x", "metric", "n", "mean", "stderr")


def fmt(v) -> str:
    """Text form used in every CSV cell."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _number(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


@dataclass(frozen=True)
class SummaryRow:
    experiment: str
    algorithm: str
    s: int
    x: float
    metric: str
    n: int
    mean: float
    stderr: float


@dataclass
class ResultTable:
    """Raw rows of one experiment plus optional derived summary rows."""

    experiment: str
    rows: List[tuple] = field(default_factory=list)
    derived: List[SummaryRow] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, algorithm: str, s: int, x, metric: str, trial: int, value: float):
        self.rows.append((self.experiment, algorithm, int(s), x, metric, int(trial), float(value)))

    def extend(self, rows: Sequence[tuple]):
        for r in rows:
            if len(r) != len(COLUMNS):
                raise InputShapeError(f"row has {len(r)} fields, expected {len(COLUMNS)}")
            self.rows.append(tuple(r))

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def metrics(self) -> list:
        return list(dict.fromkeys(r[4] for r in self.rows))

    @property
    def algorithms(self) -> list:
        return list(dict.fromkeys(r[1] for r in self.rows))

    def select(self, metric: str, algorithm: Optional[str] = None) -> list:
        return [r for r in self.rows if r[4] == metric and (algorithm is None or r[1] == algorithm)]

    def cells(self) -> Dict[tuple, list]:
        """Values grouped by ``(algorithm, s, x, metric)`` in first-seen order."""
        out: Dict[tuple, list] = {}
        for r in self.rows:
            out.setdefault((r[1], r[2], r[3], r[4]), []).append(r[6])
        return out

    def summary(self) -> List[SummaryRow]:
        rows = []
        for (alg, s, x, metric), vals in self.cells().items():
            v = np.asarray(vals, dtype=float)
            se = float(np.std(v, ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
            rows.append(SummaryRow(self.experiment, alg, s, x, metric, len(v), float(np.mean(v)), se))
        return rows + list(self.derived)

    def series(self, metric: str, summary: Optional[List[SummaryRow]] = None) -> Dict[str, tuple]:
        """``{algorithm: (x, mean, stderr, n)}`` for one metric, x ascending."""
        summary = self.summary() if summary is None else summary
        out: Dict[str, list] = {}
        for r in summary:
            if r.metric == metric:
                out.setdefault(r.algorithm, []).append((r.x, r.mean, r.stderr, r.n))
        if not out:
            raise EmptySelectionError(f"no rows for metric {metric!r}")
        res = {}
        for alg, pts in out.items():
            pts.sort(key=lambda p: p[0])
            x, m, se, n = (np.array(c, dtype=float) for c in zip(*pts))
            res[alg] = (x, m, se, n)
        return res

    def derive(self, algorithm: str, s: int, x, metric: str, n: int, value: float):
        self.derived.append(SummaryRow(self.experiment, algorithm, int(s), x, metric, int(n), float(value),
                                       float("nan")))

    def derive_from_means(self, metric: str, inputs: Sequence[str], fn: Callable[..., float]):
        """Add ``metric = fn(mean(inputs[0]), mean(inputs[1]), ...)`` per (algorithm, s, x)."""
        means: Dict[tuple, dict] = {}
        for r in self.summary():
            if r.metric in inputs:
                means.setdefault((r.algorithm, r.s, r.x), {})[r.metric] = (r.mean, r.n)
        for (alg, s, x), got in means.items():
            if all(k in got for k in inputs):
                self.derive(alg, s, x, metric, got[inputs[0]][1], fn(*(got[k][0] for k in inputs)))

    def check_complete(self, trials: int):
        """Every cell must hold exactly ``trials`` raw rows."""
        bad = {k: len(v) for k, v in self.cells().items() if len(v) != trials}
        if bad:
            k, n = next(iter(bad.items()))
            raise InputShapeError(f"cell {k} has {n} rows, expected {trials}")

    def to_csv(self, path):
        _write(path, COLUMNS, self.rows)

    def summary_to_csv(self, path):
        _write(path, SUMMARY_COLUMNS, [tuple(getattr(r, c) for c in SUMMARY_COLUMNS) for r in self.summary()])

    @classmethod
    def from_csv(cls, path, summary_path=None) -> "ResultTable":
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != COLUMNS:
                raise InputShapeError(f"{path}: header must be {','.join(COLUMNS)}")
            rows = [(e, a, int(s), _number(x), m, int(t), float(v)) for e, a, s, x, m, t, v in reader]
        if not rows:
            raise EmptySelectionError(f"{path} holds no rows")
        table = cls(rows[0][0], rows)
        if summary_path is not None and Path(summary_path).is_file():
            with Path(summary_path).open(newline="") as fh:
                reader = csv.reader(fh)
                next(reader, None)
                for e, a, s, x, m, n, mean, se in reader:
                    if se == "nan":
                        table.derived.append(SummaryRow(e, a, int(s), _number(x), m, int(n), float(mean),
                                                        float(se)))
        return table


def _write(path, header, rows):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
