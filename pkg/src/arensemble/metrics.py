"""Point-forecast accuracy and tail-risk metrics."""

import json
from dataclasses import dataclass

import numpy as np

from .exceptions import MapeGuardError
from .validation import check_targets

MAPE_GUARD = 1e-8
REPORT_FIELDS = ("mae", "rmse", "mape_percent", "cvar05", "cvar15", "n_cases")


def _errors(y, y_hat):
    y = check_targets(y)
    y_hat = check_targets(y_hat)
    if y.shape != y_hat.shape:
        raise ValueError(f"length mismatch: {y.shape[0]} targets vs {y_hat.shape[0]} predictions")
    if y.size == 0:
        raise ValueError("metrics need at least one case")
    return y, y - y_hat


def mae(y, y_hat):
    _, e = _errors(y, y_hat)
    return float(np.mean(np.abs(e)))


def rmse(y, y_hat):
    _, e = _errors(y, y_hat)
    return float(np.sqrt(np.mean(e**2)))


def mape(y, y_hat, guard=MAPE_GUARD):
    """Mean absolute percentage error, in percent.

    Raises :class:`MapeGuardError` listing every index with ``|y| < guard``
    instead of silently dropping those cases.
    """
    y, e = _errors(y, y_hat)
    small = np.flatnonzero(np.abs(y) < guard)
    if small.size:
        raise MapeGuardError(
            f"MAPE undefined: {small.size} target(s) with |y| < {guard} at {small[:10].tolist()}",
            small,
        )
    return float(100.0 * np.mean(np.abs(e / y)))


def _check_alpha(alpha):
    alpha = float(alpha)
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    return alpha


def cvar(y, y_hat, alpha):
    """CVaR of absolute errors: average of the worst ``alpha`` fraction.

    With ``K = alpha * T`` this is ``(sum of the floor(K) largest errors +
    (K - floor(K)) * next largest) / K``, which equals the minimum over
    ``tau`` of ``tau + sum(max(0, |e| - tau)) / K``.
    """
    alpha = _check_alpha(alpha)
    _, e = _errors(y, y_hat)
    losses = np.sort(np.abs(e))[::-1]
    k = alpha * losses.size
    k_round = round(k)
    if abs(k - k_round) < 1e-9 * max(1.0, k):
        k = float(k_round)
    whole = int(np.floor(k))
    if whole == losses.size:
        # the tail is the whole sample: same arithmetic as mae, so cvar(1) == mae exactly
        return float(np.mean(np.abs(e)))
    total = losses[:whole].sum()
    if whole < losses.size:
        total += (k - whole) * losses[whole]
    return float(total / k)


def cvar_oracle(y, y_hat, alpha):
    """Direct minimization of the CVaR objective over its breakpoints.

    The objective is convex and piecewise linear in ``tau`` with kinks at the
    absolute errors, so its minimum is attained at one of them.  Test-only
    reference for :func:`cvar`.
    """
    alpha = _check_alpha(alpha)
    _, e = _errors(y, y_hat)
    losses = np.abs(e)
    taus = np.unique(losses)
    excess = np.maximum(0.0, losses[None, :] - taus[:, None]).sum(axis=1)
    return float(np.min(taus + excess / (alpha * losses.size)))


@dataclass(frozen=True)
class MetricsReport:
    """Test-window metrics for one method; MAPE is in percent."""

    mae: float
    rmse: float
    mape_percent: float
    cvar05: float
    cvar15: float
    n_cases: int

    def to_dict(self):
        return {k: getattr(self, k) for k in REPORT_FIELDS}

    def to_json(self):
        return json.dumps(self.to_dict())

    def csv_row(self):
        return [repr(getattr(self, k)) if k != "n_cases" else str(self.n_cases) for k in REPORT_FIELDS]


def evaluate(y, y_hat, mape_guard=MAPE_GUARD):
    """All five metrics at once.

    MAPE is reported as ``nan`` (not raised) when the guard fails, so a report
    can still be produced for series crossing zero; use :func:`mape` directly
    to get the explicit error.
    """
    y, e = _errors(y, y_hat)
    try:
        mape_value = mape(y, y_hat, guard=mape_guard)
    except MapeGuardError:
        mape_value = float("nan")
    return MetricsReport(
        mae=mae(y, y_hat),
        rmse=rmse(y, y_hat),
        mape_percent=mape_value,
        cvar05=cvar(y, y_hat, 0.05),
        cvar15=cvar(y, y_hat, 0.15),
        n_cases=int(y.size),
    )


METRIC_FUNCTIONS = {
    "mae": mae,
    "rmse": rmse,
    "mape": mape,
    "cvar05": lambda y, p: cvar(y, p, 0.05),
    "cvar15": lambda y, p: cvar(y, p, 0.15),
}


def get_metric(name):
    try:
        return METRIC_FUNCTIONS[name]
    except KeyError:
        raise ValueError(f"unknown metric {name!r}; choose from {sorted(METRIC_FUNCTIONS)}") from None
