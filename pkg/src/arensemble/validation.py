"""Input validation helpers used by the estimators and module functions."""

import numbers

import numpy as np

from .exceptions import PanelError


def check_forecasts(X, *, min_rows=1):
    """Return ``X`` as a finite 2-D float array of member forecasts.

    A 1-D input is read as a single time step with ``len(X)`` members.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise PanelError(f"member forecasts must be 2-D, got shape {X.shape}")
    if X.shape[0] < min_rows:
        raise PanelError(f"need at least {min_rows} rows, got {X.shape[0]}")
    if X.shape[1] < 1:
        raise PanelError("need at least one ensemble member")
    bad = ~np.isfinite(X).all(axis=1)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise PanelError(f"non-finite member forecast at row {row}", row=row)
    return X


def check_targets(y, n_rows=None):
    y = np.asarray(y, dtype=float)
    if y.ndim == 2 and y.shape[1] == 1:
        y = y[:, 0]
    if y.ndim != 1:
        raise PanelError(f"targets must be 1-D, got shape {y.shape}")
    if n_rows is not None and y.shape[0] != n_rows:
        raise PanelError(f"targets have {y.shape[0]} rows, forecasts have {n_rows}")
    bad = ~np.isfinite(y)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise PanelError(f"non-finite target at row {row}", row=row)
    return y


def check_series(series, n_rows):
    """Return per-row series labels, or ``None`` for a single series."""
    if series is None:
        return None
    series = np.asarray(series)
    if series.shape != (n_rows,):
        raise PanelError(f"series labels have shape {series.shape}, expected ({n_rows},)")
    return series


def series_starts(series, n_rows):
    """Boolean mask marking the first row of every contiguous series run."""
    starts = np.zeros(n_rows, dtype=bool)
    if n_rows == 0:
        return starts
    starts[0] = True
    if series is not None:
        starts[1:] = series[1:] != series[:-1]
    return starts


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_nonnegative(value, name):
    value = float(value)
    if not np.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be a finite non-negative number, got {value}")
    return value


def check_probability(value, name):
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value
