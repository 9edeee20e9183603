"""Immutable dataset container and CSV ingestion.

A study consists of an ``n x d`` design matrix whose first column is an
all-ones intercept, an outcome vector that may be missing, and a 0/1
response indicator telling which outcomes were observed.  The design
matrix intercept is always synthesized by the constructors here; user
files and arrays carry covariates only.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DataFormatError

__all__ = ["Dataset", "add_intercept", "read_dataset_csv", "write_dataset_csv"]


def add_intercept(X: np.ndarray) -> np.ndarray:
    """Prepend an all-ones column to a covariate matrix."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"covariate matrix must be 2-D, got shape {X.shape}")
    return np.hstack([np.ones((X.shape[0], 1)), X])


@dataclass(frozen=True)
class Dataset:
    """Design matrix with intercept, outcomes, and response indicators.

    Attributes
    ----------
    x : ndarray of shape (n, d)
        Design matrix; column 0 is identically 1.  High-dimensional
        inputs (d > n) are allowed.
    y : ndarray of shape (n,)
        Outcome values; entries where ``delta == 0`` are stored as NaN.
    delta : ndarray of shape (n,)
        Response indicators in {0, 1}; ``delta[i] == 1`` means ``y[i]``
        was observed.

    The arrays are validated and made read-only on construction, so a
    ``Dataset`` can be shared freely across threads and processes.
    """

    x: np.ndarray
    y: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(np.asarray(self.x, dtype=float))
        y = np.asarray(self.y, dtype=float).copy()
        delta = np.asarray(self.delta)

        if x.ndim != 2:
            raise DataFormatError(f"x must be 2-D, got shape {x.shape}")
        n, d = x.shape
        if n < 1 or d < 1:
            raise DataFormatError(f"need n >= 1 and d >= 1, got shape {x.shape}")
        if y.shape != (n,) or delta.shape != (n,):
            raise DataFormatError(
                f"y and delta must have shape ({n},), got {y.shape} and {delta.shape}"
            )
        if not np.all(np.isfinite(x)):
            raise DataFormatError("x contains non-finite entries")
        if not np.all(x[:, 0] == 1.0):
            raise DataFormatError("column 0 of x must be identically 1 (intercept)")
        if not np.isin(delta, (0, 1)).all():
            raise DataFormatError("delta entries must be 0 or 1")
        delta = delta.astype(np.int8)
        observed = delta == 1
        if not np.all(np.isfinite(y[observed])):
            bad = int(np.flatnonzero(observed & ~np.isfinite(y))[0])
            raise DataFormatError("delta=1 but y is not finite", row=bad + 1)
        y[~observed] = np.nan

        for arr in (x, y, delta):
            arr.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "delta", delta)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def n_respondents(self) -> int:
        return int(self.delta.sum())

    @classmethod
    def from_arrays(cls, X: np.ndarray, y: np.ndarray, delta: np.ndarray | None = None) -> "Dataset":
        """Build a dataset from a covariate matrix (no intercept column).

        When ``delta`` is omitted it is inferred from ``y``: finite
        entries count as observed.
        """
        y = np.asarray(y, dtype=float)
        if delta is None:
            delta = np.isfinite(y).astype(np.int8)
        return cls(x=add_intercept(X), y=y, delta=delta)


def read_dataset_csv(path) -> tuple[Dataset, list[str]]:
    """Read a dataset from CSV: header ``y,delta,<covariates...>``.

    Missing outcomes are encoded as an empty ``y`` field and are required
    to be empty whenever ``delta == 0``.  The intercept column is
    synthesized, never read.  Returns the dataset and the covariate
    column names.

    Raises
    ------
    DataFormatError
        With a 1-based data row number for any contract violation.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError("empty file: missing header") from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0] != "y" or header[1] != "delta":
            raise DataFormatError(
                f"header must start with 'y,delta', got {header[:2]}"
            )
        covariates = header[2:]
        width = len(header)

        ys: list[float] = []
        deltas: list[int] = []
        rows: list[list[float]] = []
        for lineno, rec in enumerate(reader, start=1):
            if len(rec) != width:
                raise DataFormatError(
                    f"expected {width} fields, got {len(rec)}", row=lineno
                )
            y_field = rec[0].strip()
            d_field = rec[1].strip()
            if d_field not in ("0", "1"):
                raise DataFormatError(f"delta must be 0 or 1, got {d_field!r}", row=lineno)
            d = int(d_field)
            if d == 0:
                if y_field != "":
                    raise DataFormatError(
                        "y must be empty when delta=0", row=lineno
                    )
                y = math.nan
            else:
                if y_field == "":
                    raise DataFormatError("y must be present when delta=1", row=lineno)
                try:
                    y = float(y_field)
                except ValueError:
                    raise DataFormatError(f"bad y value {y_field!r}", row=lineno) from None
                if not math.isfinite(y):
                    raise DataFormatError(f"y must be finite, got {y_field!r}", row=lineno)
            try:
                x_row = [float(v) for v in rec[2:]]
            except ValueError:
                raise DataFormatError("bad covariate value", row=lineno) from None
            if not all(math.isfinite(v) for v in x_row):
                raise DataFormatError("covariates must be finite", row=lineno)
            ys.append(y)
            deltas.append(d)
            rows.append(x_row)

    if not rows:
        raise DataFormatError("no data rows")
    X = np.asarray(rows, dtype=float)
    data = Dataset.from_arrays(X, np.asarray(ys), np.asarray(deltas))
    return data, covariates


def write_dataset_csv(data: Dataset, path, names: list[str] | None = None) -> None:
    """Write a dataset in the ``y,delta,<covariates...>`` format."""
    p = data.d - 1
    if names is None:
        names = [f"x{j}" for j in range(1, p + 1)]
    if len(names) != p:
        raise ValueError(f"need {p} covariate names, got {len(names)}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y", "delta", *names])
        for i in range(data.n):
            y_field = "" if data.delta[i] == 0 else repr(float(data.y[i]))
            writer.writerow(
                [y_field, int(data.delta[i])]
                + [repr(float(v)) for v in data.x[i, 1:]]
            )
