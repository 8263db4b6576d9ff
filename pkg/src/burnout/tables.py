"""CSV output with round-trip float formatting, and run comparison."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError

# Grids from two runs must agree to this absolute tolerance to be compared.
GRID_ATOL = 1e-12


def _fmt(x):
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def write_csv(target, columns: dict):
    """Write equal-length columns to a path or open text stream.

    Floats use ``repr`` so they read back exactly.
    """
    names = list(columns)
    arrays = [np.asarray(columns[k]) for k in names]
    sizes = {a.shape for a in arrays}
    if len(sizes) != 1 or arrays[0].ndim != 1:
        raise ArgumentError(f"columns must be 1-D with equal length, got shapes {sorted(sizes)}")

    def emit(fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row in zip(*(a.tolist() for a in arrays)):
            writer.writerow([_fmt(x) for x in row])

    if hasattr(target, "write"):
        emit(target)
        return target
    path = Path(target)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        emit(fh)
    return path


def read_csv(path) -> dict:
    """Read a CSV written by :func:`write_csv` into float arrays."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ArgumentError(f"{path}: empty CSV file") from None
        rows = [r for r in reader if r]
    if len(set(header)) != len(header):
        raise ArgumentError(f"{path}: duplicate column names")
    out = {}
    for j, name in enumerate(header):
        try:
            out[name] = np.array([float(r[j]) for r in rows])
        except (ValueError, IndexError):
            raise ArgumentError(f"{path}: column {name!r} is not numeric") from None
    return out


@dataclass
class CompareReport:
    max_delta: dict
    tolerance: float
    passed: bool
    columns_only_in_a: list = field(default_factory=list)
    columns_only_in_b: list = field(default_factory=list)

    def summary(self):
        return {
            "max_abs_delta": self.max_delta,
            "tolerance": self.tolerance,
            "pass": self.passed,
            "columns_only_in_a": self.columns_only_in_a,
            "columns_only_in_b": self.columns_only_in_b,
        }


def compare_runs(csv_a, csv_b, tolerance: float = 0.0) -> CompareReport:
    """Column-wise max absolute difference between two runs on the same grid.

    Both files need a ``t`` column; differing grids raise
    :class:`ArgumentError`.  NaN matches NaN.
    """
    a, b = read_csv(csv_a), read_csv(csv_b)
    for name, tab in (("first", a), ("second", b)):
        if "t" not in tab:
            raise ArgumentError(f"{name} file has no 't' column")
    if a["t"].shape != b["t"].shape or np.max(np.abs(a["t"] - b["t"]), initial=0.0) > GRID_ATOL:
        raise ArgumentError("runs are on different time grids")
    deltas = {}
    for name in a:
        if name == "t" or name not in b:
            continue
        x, y = a[name], b[name]
        both_nan = np.isnan(x) & np.isnan(y)
        d = np.where(both_nan, 0.0, np.abs(x - y))
        d = np.where(np.isnan(d), math.inf, d)
        deltas[name] = float(np.max(d, initial=0.0))
    worst = max(deltas.values(), default=0.0)
    return CompareReport(
        deltas, float(tolerance), worst <= tolerance,
        sorted(set(a) - set(b)), sorted(set(b) - set(a)),
    )
