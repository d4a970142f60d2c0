"""Volatility-proxy series: loading, cleaning and serialization."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "DataError",
    "VolSeries",
    "FilterReport",
    "load_series",
    "filter_outliers",
    "write_series",
    "write_json",
    "write_fit",
    "format_float",
    "annualized_volatility",
]

TRADING_DAYS = 252


class DataError(ValueError):
    """Input data is malformed or unusable."""


def _date_key(d: str):
    # integer day indices compare numerically, anything else (ISO dates) as text
    try:
        return (0, float(d), "")
    except ValueError:
        return (1, 0.0, d)


def _first_unsorted(dates) -> int | None:
    keys = [_date_key(d) for d in dates]
    for i in range(1, len(keys)):
        if not keys[i] > keys[i - 1]:
            return i
    return None


@dataclass(frozen=True)
class VolSeries:
    """Daily volatility proxy in daily variance units."""

    values: np.ndarray
    dates: tuple[str, ...] | None = None
    n_intraday: int | None = None
    label: str = ""

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1:
            raise DataError("series values must be one-dimensional")
        if not np.all(np.isfinite(v)):
            bad = int(np.flatnonzero(~np.isfinite(v))[0])
            raise DataError(f"non-finite value at position {bad}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.dates is not None:
            dates = tuple(str(d) for d in self.dates)
            if len(dates) != v.size:
                raise DataError("dates and values differ in length")
            bad = _first_unsorted(dates)
            if bad is not None:
                raise DataError(f"dates not strictly increasing at position {bad}")
            object.__setattr__(self, "dates", dates)
        if self.n_intraday is not None and int(self.n_intraday) < 1:
            raise DataError("n_intraday must be positive")

    def __len__(self):
        return self.values.size

    def subset(self, keep: np.ndarray) -> "VolSeries":
        dates = None if self.dates is None else tuple(np.asarray(self.dates, dtype=object)[keep])
        return VolSeries(self.values[keep], dates, self.n_intraday, self.label)


@dataclass
class FilterReport:
    removed_zero: int
    removed_mad: int
    mad_indices: list[int] = field(default_factory=list)
    kept: int = 0

    def to_dict(self) -> dict:
        return {
            "removed_zero": self.removed_zero,
            "removed_mad": self.removed_mad,
            "mad_indices": list(self.mad_indices),
            "kept": self.kept,
        }


def _parse_float(text: str, row: int, col: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise DataError(f"row {row}: non-numeric value {text!r} in column {col!r}") from None
    if not math.isfinite(val):
        raise DataError(f"row {row}: non-finite value {text!r} in column {col!r}")
    return val


def load_series(
    path,
    date_col: str | int | None = "date",
    value_col: str | int | None = None,
    delimiter: str = ",",
    n_intraday: int | None = None,
) -> VolSeries:
    """Read a delimited file with a header row.

    ``value_col`` defaults to the last column; ``date_col`` is optional and
    ignored when absent from the header.  Row numbers in errors count the
    header as row 1.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    text = raw.decode("utf-8-sig")
    reader = csv.reader(io.StringIO(text, newline=""), delimiter=delimiter)
    rows = [r for r in reader if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]

    def resolve(col, default):
        if col is None:
            return default
        if isinstance(col, int):
            return col
        if col in header:
            return header.index(col)
        return None

    vi = resolve(value_col, len(header) - 1)
    if vi is None:
        raise DataError(f"{path}: value column {value_col!r} not found in header {header}")
    di = resolve(date_col, None)
    if di == vi:
        di = None
    values, dates = [], []
    for k, row in enumerate(rows[1:], start=2):
        if len(row) <= vi or (di is not None and len(row) <= di):
            raise DataError(f"{path}: row {k} has too few fields")
        values.append(_parse_float(row[vi].strip(), k, header[vi]))
        if di is not None:
            dates.append(row[di].strip())
    if di is not None:
        bad = _first_unsorted(dates)
        if bad is not None:
            raise DataError(f"{path}: dates not strictly increasing at row {bad + 2}")
    return VolSeries(np.array(values), tuple(dates) if di is not None else None, n_intraday, path.stem)


def filter_outliers(series: VolSeries, window: int = 50, mad_mult: float = 30.0, min_neighbors: int = 10):
    """Drop zeros, then single-pass rolling mean-absolute-deviation filter.

    A point is removed when it deviates from the mean of up to ``window/2``
    neighbours on each side (itself excluded, truncated at the edges) by
    more than ``mad_mult`` mean absolute deviations of those neighbours.
    """
    if len(series) < min_neighbors + 1:
        raise DataError(f"series shorter than {min_neighbors + 1} observations")
    if window < 2 or window % 2:
        raise ValueError("window must be a positive even number")
    v = series.values
    nonzero = v != 0
    removed_zero = int(np.sum(~nonzero))
    kept_idx = np.flatnonzero(nonzero)
    x = v[kept_idx]
    half = window // 2
    drop = np.zeros(x.size, dtype=bool)
    for j in range(x.size):
        lo, hi = max(0, j - half), min(x.size, j + half + 1)
        nb = np.concatenate([x[lo:j], x[j + 1 : hi]])
        if nb.size < min_neighbors:
            continue
        centre = nb.mean()
        dev = np.mean(np.abs(nb - centre))
        if abs(x[j] - centre) > mad_mult * dev:
            drop[j] = True
    keep = kept_idx[~drop]
    report = FilterReport(
        removed_zero=removed_zero,
        removed_mad=int(drop.sum()),
        mad_indices=[int(i) for i in kept_idx[drop]],
        kept=int(keep.size),
    )
    return series.subset(keep), report


def format_float(x: float) -> str:
    """17 significant digits, enough for an exact float64 round trip."""
    return format(float(x), ".17g")


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=directory)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_series(path, series: VolSeries) -> None:
    """CSV with header ``date,value``; values in round-trip precision."""
    buf = io.StringIO()
    buf.write("date,value\n")
    dates = series.dates if series.dates is not None else [str(i + 1) for i in range(len(series))]
    for d, v in zip(dates, series.values):
        buf.write(f"{d},{format_float(v)}\n")
    _atomic_write(path, buf.getvalue())


def write_json(path, obj) -> None:
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=False) + "\n")


def write_fit(path, fit) -> None:
    write_json(path, fit.to_dict())


def annualized_volatility(daily_variance, days: int = TRADING_DAYS):
    """Display helper: ``sqrt(days * v)``."""
    return np.sqrt(days * np.asarray(daily_variance, dtype=float))
