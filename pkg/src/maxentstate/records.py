"""Column-oriented training logs with a bit-exact CSV form."""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


class TrainRecord:
    """Rows of named numeric columns; floats are written with ``repr`` so a
    CSV round trip reproduces every value exactly."""

    def __init__(self, columns, rows=None):
        self.columns = tuple(columns)
        self.rows: list[tuple] = []
        for r in rows or ():
            self.append(r)

    def append(self, row) -> None:
        row = tuple(row)
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} fields, expected {len(self.columns)}")
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    def last(self, name: str) -> float:
        return float(self.rows[-1][self.columns.index(name)])

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(v) for v in r])
        return buf.getvalue()

    def to_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv_text())

    @classmethod
    def from_csv(cls, path: str | Path) -> "TrainRecord":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [tuple(int(x) if x.lstrip("-").isdigit() else float(x) for x in r) for r in reader]
        return cls(header, rows)

    def __eq__(self, other) -> bool:
        return isinstance(other, TrainRecord) and self.to_csv_text() == other.to_csv_text()
