"""Comparison ensemblers: hindsight selection, mean, Exp3, Passive-Aggressive, ridge.

The online methods (Exp3 and PA) consume targets through a
:class:`~arensemble.panel.TargetFeed`: the target of row ``s`` is used to
update the weights only once row ``s + lead_time`` is being predicted.  When a
new series starts they keep the weights reached at the end of the previous
series.
"""

import math
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import NumericalError
from .metrics import evaluate, mape
from .panel import as_feed
from .validation import (
    check_forecasts,
    check_nonnegative,
    check_positive_int,
    check_series,
    check_targets,
    series_starts,
)


@dataclass
class EnsembleWeights:
    """Per-row weight vectors produced by a combiner."""

    beta: np.ndarray
    method: str
    params: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# static combiners


def best_in_hindsight(X, y):
    """Member with the lowest MAPE on ``(X, y)``; ties go to the lowest index.

    Returns ``(index, MetricsReport)``.  This looks at the evaluation targets
    and is therefore a non-causal reference, not a forecaster.
    """
    X = check_forecasts(X)
    y = check_targets(y, X.shape[0])
    scores = [mape(y, X[:, j]) for j in range(X.shape[1])]
    best = int(np.argmin(scores))
    return best, evaluate(y, X[:, best])


def ensemble_mean(X_t):
    X_t = np.asarray(X_t, dtype=float)
    return X_t.mean(axis=-1)


def ridge_fit(X, y, lam):
    """Static weights ``(X^T X + lam I)^{-1} X^T y`` via a Cholesky solve."""
    X = check_forecasts(X)
    y = check_targets(y, X.shape[0])
    lam = check_nonnegative(lam, "lam")
    G = X.T @ X + lam * np.eye(X.shape[1])
    try:
        factor = scipy.linalg.cho_factor(G, lower=True)
    except np.linalg.LinAlgError:
        raise NumericalError(f"ridge system is singular (lam={lam})") from None
    if lam == 0 and np.linalg.cond(G) > 1e14:
        raise NumericalError("ridge system is numerically singular at lam=0")
    return scipy.linalg.cho_solve(factor, X.T @ y)


# ---------------------------------------------------------------------------
# online updates


def exp3_rate(m, window):
    return math.sqrt(8.0 * math.log(m) / window) if m > 1 else 0.0


def exp3_weights(regrets, eta):
    """Softmax of ``-eta * regrets``, shifted for numerical safety."""
    z = -eta * np.asarray(regrets, dtype=float)
    z -= z.max()
    w = np.exp(z)
    return w / w.sum()


@dataclass
class Exp3State:
    """Rolling window of revealed squared member errors plus current weights."""

    weights: np.ndarray
    window: int
    losses: deque = None
    steps: int = 0

    def __post_init__(self):
        if self.losses is None:
            self.losses = deque(maxlen=self.window)


def exp3_step(state, X_t, revealed=None):
    """One Exp3 round.

    ``revealed`` is an optional ``(X_s, y_s)`` pair whose target became known
    at this step; it enters the regret window before the prediction is made.
    Returns ``(prediction, state)``.
    """
    if revealed is not None:
        X_s, y_s = revealed
        state.losses.append((np.asarray(X_s, dtype=float) - y_s) ** 2)
        regrets = np.sum(state.losses, axis=0)
        state.weights = exp3_weights(regrets, exp3_rate(regrets.size, state.window))
    state.steps += 1
    return float(np.asarray(X_t, dtype=float) @ state.weights), state


def pa_step(beta, X_s, y_s, epsilon):
    """Passive-Aggressive regression update with margin ``epsilon``.

    Returns the new weights; unchanged when the residual is within the margin.
    """
    beta = np.asarray(beta, dtype=float)
    X_s = np.asarray(X_s, dtype=float)
    resid = y_s - X_s @ beta
    loss = max(0.0, abs(resid) - epsilon)
    if loss == 0.0:
        return beta
    norm_sq = float(X_s @ X_s)
    if norm_sq == 0.0:
        warnings.warn("PA update skipped: all member forecasts are zero", RuntimeWarning,
                      stacklevel=2)
        return beta
    return beta + math.copysign(1.0, resid) * (loss / norm_sq) * X_s


# ---------------------------------------------------------------------------
# estimators


class _Combiner(RegressorMixin, BaseEstimator):
    """Shared fit/predict plumbing.

    ``predict(X, y)`` walks forward through ``X``; ``y`` (array or feed) is
    only read through the lead-time gate.  Online state reached at the end of
    ``predict`` is discarded, so repeated calls give identical output.
    """

    def _check(self, X, series=None):
        X = check_forecasts(X)
        return X, check_series(series, X.shape[0])

    def score(self, X, y, sample_weight=None, series=None):
        from sklearn.metrics import r2_score

        return r2_score(y, self.predict(X, y, series=series), sample_weight=sample_weight)


class EnsembleMean(_Combiner):
    def fit(self, X, y=None, series=None):
        X, _ = self._check(X)
        self.n_features_in_ = X.shape[1]
        self.coef_ = np.full(X.shape[1], 1.0 / X.shape[1])
        return self

    def predict(self, X, y=None, series=None):
        check_is_fitted(self, "coef_")
        X, _ = self._check(X)
        return ensemble_mean(X)

    def coef_trace(self, X, y=None, series=None):
        X, _ = self._check(X)
        return np.tile(self.coef_, (X.shape[0], 1))


class RidgeEnsemble(_Combiner):
    """Static ridge combination without intercept."""

    def __init__(self, lam=0.0):
        self.lam = lam

    def fit(self, X, y, series=None):
        X, _ = self._check(X)
        self.coef_ = ridge_fit(X, y, self.lam)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X, y=None, series=None):
        check_is_fitted(self, "coef_")
        X, _ = self._check(X)
        return X @ self.coef_

    def coef_trace(self, X, y=None, series=None):
        X, _ = self._check(X)
        return np.tile(self.coef_, (X.shape[0], 1))


class BestInHindsight(_Combiner):
    """Selects the member with the lowest MAPE on the data passed to ``fit``.

    The pipeline fits it on the test window itself; it is an after-the-fact
    benchmark.
    """

    def fit(self, X, y, series=None):
        self.member_, self.report_ = best_in_hindsight(X, y)
        self.n_features_in_ = np.shape(X)[1]
        return self

    def predict(self, X, y=None, series=None):
        check_is_fitted(self, "member_")
        X, _ = self._check(X)
        return X[:, self.member_].copy()


class _OnlineCombiner(_Combiner):
    """Online learners: ``fit`` replays history, ``predict`` continues from it."""

    def _init_state(self, m):
        raise NotImplementedError

    def _weights(self, state):
        raise NotImplementedError

    def _update(self, state, X_s, y_s):
        raise NotImplementedError

    def _new_series(self, state):
        """Hook called at the first row of each new series."""

    def _run(self, X, feed, series, state):
        n = X.shape[0]
        k = feed.lead_time
        starts = series_starts(series, n)
        beta = np.empty_like(X)
        for t in range(n):
            if starts[t] and t > 0:
                self._new_series(state)
            s = t - k
            if s >= 0 and (series is None or series[s] == series[t]):
                self._update(state, X[s], feed.reveal(s, now=t))
            beta[t] = self._weights(state)
        # targets of the last k rows arrive after the data ends
        pending = [(X[s], s) for s in range(max(0, n - k), n)]
        return beta, state, pending, feed

    def fit(self, X, y, series=None):
        X, series = self._check(X, series)
        y = check_targets(y, X.shape[0])
        state = self._init_state(X.shape[1])
        feed = as_feed(y, self.lead_time)
        _, state, pending, feed = self._run(X, feed, series, state)
        # training history is fully known: absorb the trailing targets too
        for X_s, s in pending:
            if series is None or series[s] == series[-1]:
                self._update(state, X_s, y[s])
        self.state_ = state
        self.n_features_in_ = X.shape[1]
        self.last_series_ = None if series is None else series[-1]
        return self

    def _fresh_state(self):
        import copy

        return copy.deepcopy(self.state_)

    def coef_trace(self, X, y=None, series=None):
        check_is_fitted(self, "state_")
        X, series = self._check(X, series)
        state = self._fresh_state()
        if series is not None and self.last_series_ is not None and series[0] != self.last_series_:
            self._new_series(state)
        if y is None:
            return np.tile(self._weights(state), (X.shape[0], 1))
        beta, _, _, _ = self._run(X, as_feed(y, self.lead_time), series, state)
        return beta

    def predict(self, X, y=None, series=None):
        X = check_forecasts(X)
        return np.einsum("ij,ij->i", X, self.coef_trace(X, y, series))


class Exp3Ensemble(_OnlineCombiner):
    """Exponential weights over windowed squared-error regrets.

    Weights are ``softmax(-eta * R)`` where ``R_i`` sums member ``i``'s
    squared errors over the last ``window`` revealed rows and
    ``eta = sqrt(8 log(m) / window)``.
    """

    def __init__(self, window=10, lead_time=1):
        self.window = window
        self.lead_time = lead_time

    def _init_state(self, m):
        check_positive_int(self.window, "window")
        return Exp3State(weights=np.full(m, 1.0 / m), window=self.window)

    def _weights(self, state):
        return state.weights

    def _update(self, state, X_s, y_s):
        exp3_step(state, X_s, revealed=(X_s, y_s))

    def _new_series(self, state):
        # keep the last weights until the new series reveals its own errors
        state.losses.clear()


class PassiveAggressiveEnsemble(_OnlineCombiner):
    """Online PA regression on member forecasts, starting from uniform weights."""

    def __init__(self, epsilon=0.1, lead_time=1):
        self.epsilon = epsilon
        self.lead_time = lead_time

    def _init_state(self, m):
        check_nonnegative(self.epsilon, "epsilon")
        return {"beta": np.full(m, 1.0 / m), "steps": 0}

    def _weights(self, state):
        return state["beta"]

    def _update(self, state, X_s, y_s):
        state["beta"] = pa_step(state["beta"], X_s, y_s, self.epsilon)
        state["steps"] += 1
