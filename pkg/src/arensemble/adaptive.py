"""Adaptive ridge ensemble: time-varying weights from an affine error rule.

The combination weights at row ``t`` are

    beta_t = beta0 + V0 @ Z_t

where ``Z_t`` stacks the ``tau`` most recent member error vectors
``X_s - y_s`` that are already known when row ``t`` is predicted (with lead
time ``k`` these are rows ``t-k-tau+1 .. t-k``, oldest first).  Writing
``W_t = [1, Z_t]`` and ``B = [beta0 | V0]`` gives ``beta_t = B @ W_t``, so the
prediction ``X_t @ beta_t`` is linear in ``B``.

Fitting minimizes ``||y - A theta||_2 + lam * ||F theta||_2`` (norms not
squared), where ``A theta`` are the stacked predictions and ``F theta`` the
stacked weight vectors.  This norm-sum objective is the tractable form of the
worst case over Frobenius-bounded perturbations of the forecasts; see
:mod:`arensemble.robustcheck` for the numerical check of that identity.
"""

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConvergenceError, NumericalError, PanelError
from .panel import ScaledFeed, Standardizer, TargetFeed, as_feed
from .validation import check_forecasts, check_positive_int, check_series, check_targets

FORMAT_VERSION = 1
MODES = ("faithful", "squared")


# ---------------------------------------------------------------------------
# error contexts


@dataclass(frozen=True)
class ErrorContext:
    """Lagged-error vector for one row; ``padded`` marks missing history."""

    Z: np.ndarray
    tau: int
    lead_time: int
    padded: bool


def build_contexts(X, y, tau, lead_time=1, series=None, prior_errors=None, prior_series=None):
    """Lagged-error contexts ``Z_t`` for every row of ``X``.

    Parameters
    ----------
    X : array, shape (n, m)
    y : array, TargetFeed or None
        Targets aligned with ``X``.  They are read through a lead-time gate:
        the target of row ``s`` is consumed while predicting row ``s + k``.
        ``None`` means no feedback arrives, so only ``prior_errors`` are used.
    tau : int
        Number of lagged error vectors per context.
    lead_time : int
        Ignored when ``y`` is already a :class:`TargetFeed`.
    series : array, shape (n,), optional
        Series labels; windows never reach into a previous series.
    prior_errors : array, shape (h, m), optional
        Errors of the rows immediately preceding ``X`` (e.g. the tail of the
        training data).  Used only if the first row continues that series.
    prior_series : label, optional
        Series label of the rows behind ``prior_errors``.

    Returns
    -------
    Z : array, shape (n, m * tau)
        Zero where history is missing.
    padded : bool array, shape (n,)
        True where at least one window slot was zero-filled.
    """
    X = check_forecasts(X)
    n, m = X.shape
    tau = check_positive_int(tau, "tau")
    series = check_series(series, n)
    if y is None:
        k = check_positive_int(lead_time, "lead_time")
    else:
        feed = as_feed(y, lead_time)
        if len(feed) != n:
            raise PanelError(f"{len(feed)} targets for {n} forecast rows")
        k = feed.lead_time

    errors = np.zeros((n, m))
    known = np.zeros(n, dtype=bool)
    if y is not None:
        for t in range(k, n):
            s = t - k
            errors[s] = X[s] - feed.reveal(s, now=t)
            known[s] = True

    # rows before 0 come from prior_errors when the series continues
    lag = k + tau - 1
    n_prior = 0
    prior = np.zeros((lag, m))
    continues = series is None or (prior_series is not None and series[0] == prior_series)
    if prior_errors is not None and continues:
        pe = np.asarray(prior_errors, dtype=float).reshape(-1, m)
        n_prior = min(pe.shape[0], lag)
        prior[lag - n_prior:] = pe[pe.shape[0] - n_prior:]
    padded_errors = np.vstack([prior, errors])
    known = np.r_[np.arange(lag) >= lag - n_prior, known]

    # earliest usable source row for each t (relative to row 0)
    first = np.full(n, -n_prior, dtype=np.int64)
    if series is not None:
        starts = np.r_[True, series[1:] != series[:-1]]
        first = np.maximum.accumulate(np.where(starts, np.arange(n), 0))
        first[first == 0] = -n_prior

    src = np.arange(n)[:, None] - k - tau + 1 + np.arange(tau)[None, :]
    rows = src + lag
    valid = (src >= first[:, None]) & (rows >= 0)
    valid &= known[np.clip(rows, 0, None)]
    Z = padded_errors[np.clip(rows, 0, None)]
    Z[~valid] = 0.0
    return Z.reshape(n, m * tau), ~valid.all(axis=1)


def build_context(panel, t, tau, lead_time=None):
    """Context of a single row of ``panel`` (see :func:`build_contexts`)."""
    k = panel.lead_time if lead_time is None else lead_time
    sub = panel.rows(0, t + 1)
    Z, padded = build_contexts(sub.X, TargetFeed(sub.y, k), tau, series=sub.series)
    return ErrorContext(Z=Z[t], tau=tau, lead_time=k, padded=bool(padded[t]))


def realized_errors(X, y):
    return np.asarray(X, dtype=float) - np.asarray(y, dtype=float)[:, None]


# ---------------------------------------------------------------------------
# fit problem


def _lifted(X, W):
    """Rows ``kron(X_t, W_t)``: prediction is linear in row-major ``B``."""
    return (X[:, :, None] * W[:, None, :]).reshape(X.shape[0], -1)


class AdaptiveFitProblem:
    """Stacked least-squares design of the affine rule on a training panel.

    The public parameter vector is ``theta = [beta0 | V0.ravel()]`` (length
    ``m + m*m*tau``).  ``design`` is ``A`` (one row per time step) and
    ``regularizer_map`` is ``F`` (one ``m``-row block per time step), so
    ``A @ theta`` are the predictions and ``F @ theta`` the stacked weights.
    Both are assembled on demand; the solver works from ``X`` and ``W``.
    """

    def __init__(self, X, y, Z, tau, *, static=False, max_params_ratio=1.0,
                 allow_underdetermined=False):
        self.X = check_forecasts(X)
        self.y = check_targets(y, self.X.shape[0])
        self.tau = check_positive_int(tau, "tau")
        n, m = self.X.shape
        Z = np.asarray(Z, dtype=float)
        if Z.shape != (n, m * self.tau):
            raise PanelError(f"contexts have shape {Z.shape}, expected {(n, m * self.tau)}")
        self.Z = Z
        self.static = static
        self.W = np.ones((n, 1)) if static else np.hstack([np.ones((n, 1)), Z])
        if not allow_underdetermined and n < max_params_ratio * self.n_params:
            raise NumericalError(
                f"{n} training rows for {self.n_params} rule parameters (m={m}, tau={self.tau}); "
                "use a smaller tau, more data, or allow_underdetermined=True"
            )
        self._reduced = None
        self._spectrum = None

    @property
    def n_rows(self):
        return self.X.shape[0]

    @property
    def n_members(self):
        return self.X.shape[1]

    @property
    def n_params(self):
        m = self.n_members
        return m + m * m * self.tau

    @property
    def design(self):
        m = self.n_members
        coupling = (self.X[:, :, None] * self.Z[:, None, :]).reshape(self.n_rows, -1)
        if self.static:
            coupling = np.zeros((self.n_rows, m * m * self.tau))
        return np.hstack([self.X, coupling])

    @property
    def regularizer_map(self):
        """Dense ``F``; size ``(T*m, n_params)``, so meant for small problems."""
        n, m = self.n_rows, self.n_members
        F = np.zeros((n * m, self.n_params))
        Z = np.zeros_like(self.Z) if self.static else self.Z
        for t in range(n):
            block = F[t * m:(t + 1) * m]
            block[:, :m] = np.eye(m)
            block[:, m:] = np.kron(np.eye(m), Z[t][None, :])
        return F

    def gram_regularizer(self):
        """``F.T @ F`` from the context moments, without forming ``F``."""
        m = self.n_members
        Z = np.zeros_like(self.Z) if self.static else self.Z
        s1 = Z.sum(axis=0)
        s2 = Z.T @ Z
        eye = np.eye(m)
        top = np.hstack([self.n_rows * eye, np.kron(eye, s1[None, :])])
        bottom = np.hstack([np.kron(eye, s1[:, None]), np.kron(eye, s2)])
        return np.vstack([top, bottom])

    # theta layout helpers ---------------------------------------------------

    def split_theta(self, theta):
        m = self.n_members
        theta = np.asarray(theta, dtype=float)
        return theta[:m].copy(), theta[m:].reshape(m, m * self.tau).copy()

    def join_theta(self, beta0, V0):
        return np.concatenate([np.ravel(beta0), np.ravel(V0)])

    def weights(self, theta):
        """Per-row weight vectors ``beta_t``, shape ``(T, m)``."""
        beta0, V0 = self.split_theta(theta)
        Z = np.zeros_like(self.Z) if self.static else self.Z
        return beta0[None, :] + Z @ V0.T

    def objective(self, theta, lam):
        """``||y - A theta|| + lam * ||F theta||`` evaluated row by row."""
        betas = self.weights(theta)
        resid = self.y - np.einsum("ij,ij->i", self.X, betas)
        return float(np.linalg.norm(resid) + lam * np.linalg.norm(betas))

    def squared_objective(self, theta, mu):
        betas = self.weights(theta)
        resid = self.y - np.einsum("ij,ij->i", self.X, betas)
        return float(resid @ resid + mu * np.sum(betas * betas))

    # reduced coordinates ----------------------------------------------------

    def reduced(self):
        """Orthonormalized lift of the problem.

        With ``W = U S Q^T`` (thin SVD, numerically null directions dropped)
        the rule ``B`` maps to ``C = B Q S`` and ``||F theta|| = ||C||_F``.
        Directions in the null space of ``W`` change neither term of the
        objective, so they are fixed at zero.
        """
        if self._reduced is None:
            U, s, Qt = np.linalg.svd(self.W, full_matrices=False)
            keep = s > s[0] * max(self.W.shape) * np.finfo(float).eps
            U, s, Qt = U[:, keep], s[keep], Qt[keep]
            A = _lifted(self.X, U)
            self._reduced = (A, s, Qt)
        return self._reduced

    def spectrum(self):
        """Eigendecomposition of the reduced Gram matrix, for faithful mode."""
        if self._spectrum is None:
            A, _, _ = self.reduced()
            G = A.T @ A
            omega, V = scipy.linalg.eigh(G)
            omega = np.clip(omega, 0.0, None)
            c = V.T @ (A.T @ self.y)
            tol = omega[-1] * G.shape[0] * np.finfo(float).eps if omega.size else 0.0
            live = omega > tol
            c[~live] = 0.0  # orthogonal to range(A^T) up to rounding
            d = np.zeros_like(c)
            d[live] = c[live] / np.sqrt(omega[live])
            theta_ls = V[:, live] @ (c[live] / omega[live])
            r_perp = self.y - A @ theta_ls
            self._spectrum = dict(omega=omega, V=V, c=c, d=d, live=live,
                                  r_perp_sq=float(r_perp @ r_perp))
        return self._spectrum

    def to_theta(self, C):
        """Map reduced coefficients ``C`` (m x r) back to ``theta``."""
        _, s, Qt = self.reduced()
        B = (C / s[None, :]) @ Qt
        if self.static:
            B = np.hstack([B, np.zeros((self.n_members, self.n_members * self.tau))])
        return self.join_theta(B[:, 0], B[:, 1:])


def assemble_problem(train, tau, lead_time=None, *, allow_underdetermined=False,
                     static=False, prior_errors=None, prior_series=None):
    """Fit problem for a (standardized) training panel."""
    k = train.lead_time if lead_time is None else lead_time
    Z, _ = build_contexts(train.X, TargetFeed(train.y, k), tau, series=train.series,
                          prior_errors=prior_errors, prior_series=prior_series)
    return AdaptiveFitProblem(train.X, train.y, Z, tau, static=static,
                              allow_underdetermined=allow_underdetermined)


# ---------------------------------------------------------------------------
# solvers


def _cho_solve(G, b, mu):
    p = G.shape[0]
    M = G + mu * np.eye(p)
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(M, lower=True), b)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * max(1.0, float(np.trace(M)) / max(p, 1))
        try:
            return scipy.linalg.cho_solve(
                scipy.linalg.cho_factor(M + jitter * np.eye(p), lower=True), b
            )
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"normal equations are singular (mu={mu})") from exc


def solve_squared(problem, mu):
    """Solve ``(A^T A + mu F^T F) theta = A^T y`` and return ``theta``."""
    if mu < 0:
        raise ValueError("mu must be non-negative")
    A, _, _ = problem.reduced()
    C = _cho_solve(A.T @ A, A.T @ problem.y, mu)
    return problem.to_theta(C.reshape(problem.n_members, -1))


@dataclass
class _PathPoint:
    mu: float
    resid: float
    reg: float

    def objective(self, lam):
        return self.resid + lam * self.reg


def _path_point(spec, mu):
    """Residual and regularizer norms of the squared solution at ``mu``."""
    omega, c, d = spec["omega"], spec["c"], spec["d"]
    reg = math.sqrt(float(np.sum((c / (omega + mu)) ** 2)))
    shrink = mu / (omega + mu)
    resid = math.sqrt(spec["r_perp_sq"] + float(np.sum((d * shrink) ** 2)))
    return _PathPoint(mu, resid, reg)


def solve_faithful(problem, lam, *, max_iter=100, rtol=1e-9, mu0=None):
    """Minimize ``||y - A theta|| + lam ||F theta||`` exactly.

    Every minimizer with non-zero residual and weights solves the squared
    problem at ``mu = lam * ||r|| / ||F theta||``.  The map
    ``mu -> lam * ||r(mu)|| / ||F theta(mu)||`` is increasing along the
    squared regularization path, so plain fixed-point iteration moves ``mu``
    monotonically toward the optimum and never increases the objective.

    Along the path the derivative of the objective in ``mu`` has the sign of
    ``mu - g(mu)``, so the objective is unimodal with its minimum at the fixed
    point.  Each iteration also forms a secant step on ``log mu - log g(mu)``
    and keeps whichever of the two candidates has the lower objective.  The
    history therefore stays non-increasing while convergence near the root is
    superlinear, which matters when ``lam`` is close to the zero threshold and
    the plain iteration contracts slowly.

    Returns ``(theta, info)``; ``info`` holds the iteration history.
    """
    if not lam > 0:
        raise ValueError("faithful mode needs lam > 0")
    spec = problem.spectrum()
    A, _, _ = problem.reduced()
    y_norm = float(np.linalg.norm(problem.y))
    omega = spec["omega"]
    scale = float(omega[-1]) if omega.size and omega[-1] > 0 else 1.0
    mu_floor = scale * 1e-14
    info = {"lam": lam, "mu_history": [], "objective_history": [], "iterations": 0,
            "status": "converged", "cond_gram": float(scale / max(omega[0], 1e-300))}

    # zero is optimal iff the gradient of the residual term at zero is dominated
    dual = float(np.linalg.norm(spec["c"])) / y_norm if y_norm > 0 else 0.0
    info["zero_threshold"] = dual
    if dual <= lam:
        info.update(status="zero", mu=math.inf, objective=y_norm, stationarity=0.0)
        return np.zeros(problem.n_params), info

    # full row rank: the min-norm interpolant is optimal iff lam ||(A A^T)^-1 y|| <= ||theta||
    live = spec["live"]
    if int(live.sum()) >= problem.n_rows:
        d, w = spec["d"][live], omega[live]
        slope = lam * math.sqrt(float(np.sum(d * d / (w * w)))) / math.sqrt(float(np.sum(d * d / w)))
        info["interpolation_slope"] = slope
        if slope <= 1.0:
            theta_red = spec["V"][:, live] @ (spec["c"][live] / w)
            info.update(status="interpolating", mu=0.0, objective=lam * float(np.linalg.norm(theta_red)),
                        stationarity=0.0)
            info["mu_history"].append(0.0)
            info["objective_history"].append(info["objective"])
            return problem.to_theta(theta_red.reshape(problem.n_members, -1)), info

    def g(pt):
        return lam * pt.resid / max(pt.reg, 1e-300)

    def gap(pt):
        # log-scale residual of the fixed-point equation
        return math.log(pt.mu) - math.log(max(g(pt), 1e-300))

    mu = float(mu0) if mu0 is not None else lam * max(1.0, math.sqrt(scale) / max(y_norm, 1e-300))
    pt = _path_point(spec, mu)
    prev = None
    for it in range(1, max_iter + 1):
        info["mu_history"].append(pt.mu)
        info["objective_history"].append(pt.objective(lam))
        h = gap(pt)
        best = _path_point(spec, max(g(pt), mu_floor))
        if prev is not None and prev[1] != h:
            lm, lp = math.log(pt.mu), math.log(prev[0])
            step = lm - h * (lm - lp) / (h - prev[1])
            cand = math.exp(min(max(step, lm - 20.0), lm + 20.0))
            if cand > mu_floor:
                cpt = _path_point(spec, cand)
                if cpt.objective(lam) < best.objective(lam):
                    best = cpt
        prev = (pt.mu, h)
        info["iterations"] = it
        change = abs(best.mu - pt.mu) / max(pt.mu, 1e-300)
        pt = best
        if change < rtol or pt.mu <= mu_floor:
            break
    else:
        info["status"] = "max_iter"

    if pt.mu <= mu_floor:
        info["status"] = "interpolating"
    info["mu_history"].append(pt.mu)
    info["objective_history"].append(pt.objective(lam))
    V, c = spec["V"], spec["c"]
    theta_red = V @ (c / (omega + pt.mu))
    r = problem.y - A @ theta_red
    r_norm = float(np.linalg.norm(r))
    t_norm = float(np.linalg.norm(theta_red))
    grad_resid = A.T @ r / max(r_norm, 1e-300)
    grad = -grad_resid + lam * theta_red / max(t_norm, 1e-300)
    info.update(mu=pt.mu, objective=r_norm + lam * t_norm,
                stationarity=float(np.linalg.norm(grad) / (np.linalg.norm(grad_resid) + lam)))
    theta = problem.to_theta(theta_red.reshape(problem.n_members, -1))
    if info["status"] == "max_iter":
        raise ConvergenceError(
            f"faithful solver did not converge in {max_iter} iterations "
            f"(mu={pt.mu:.6g}, stationarity={info['stationarity']:.3g}, "
            f"cond={info['cond_gram']:.3g})",
            last_iterate=theta,
            diagnostics=info,
        )
    return theta, info


def solve_adaptive_ridge(problem, lam, mode="faithful", **kwargs):
    """Fit the affine rule; returns an :class:`AdaptiveRule`.

    ``mode="faithful"`` minimizes the norm-sum objective with weight ``lam``.
    ``mode="squared"`` solves the squared problem with ``mu = lam``.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "faithful":
        theta, info = solve_faithful(problem, lam, **kwargs)
    else:
        theta, info = solve_squared(problem, lam), {"mu": lam}
    beta0, V0 = problem.split_theta(theta)
    return AdaptiveRule(beta0=beta0, V0=V0, tau=problem.tau, lam=lam, mode=mode,
                        diagnostics=info)


# ---------------------------------------------------------------------------
# fitted rule


@dataclass
class AdaptiveRule:
    """Fitted affine decision rule ``beta_t = beta0 + V0 @ Z_t``."""

    beta0: np.ndarray
    V0: np.ndarray
    tau: int
    lam: float = 0.0
    mode: str = "faithful"
    lead_time: int = 1
    standardizer: Standardizer = None
    members: tuple = ()
    diagnostics: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.beta0 = np.asarray(self.beta0, dtype=float).ravel()
        m = self.beta0.size
        self.V0 = np.asarray(self.V0, dtype=float).reshape(m, m * self.tau)

    @property
    def n_members(self):
        return self.beta0.size

    def coefficients(self, Z):
        """Weights for one context (1-D) or a batch of contexts (2-D)."""
        Z = np.asarray(Z, dtype=float)
        if Z.shape[-1] != self.V0.shape[1]:
            raise PanelError(f"context length {Z.shape[-1]} != {self.V0.shape[1]}")
        return self.beta0 + Z @ self.V0.T

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "beta0": self.beta0.tolist(),
            "V0": self.V0.tolist(),
            "tau": self.tau,
            "lead_time": self.lead_time,
            "lam": self.lam,
            "mode": self.mode,
            "standardizer": None if self.standardizer is None else self.standardizer.to_dict(),
            "members": list(self.members),
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported rule format version {d.get('format_version')!r}")
        std = d.get("standardizer")
        return cls(
            beta0=np.array(d["beta0"]), V0=np.array(d["V0"]), tau=int(d["tau"]),
            lam=float(d["lam"]), mode=d["mode"], lead_time=int(d["lead_time"]),
            standardizer=None if std is None else Standardizer(**std),
            members=tuple(d.get("members", ())),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def predict(rule, X_t, Z_t):
    """``X_t @ (beta0 + V0 @ Z_t)`` for one row or row-wise for a batch.

    Inputs and outputs are on the scale the rule was fitted on.
    """
    X_t = np.asarray(X_t, dtype=float)
    if X_t.shape[-1] != rule.n_members:
        raise PanelError(f"{X_t.shape[-1]} member forecasts for a rule over {rule.n_members}")
    betas = rule.coefficients(Z_t)
    if X_t.ndim == 1:
        return float(X_t @ betas)
    return np.einsum("ij,ij->i", X_t, betas)


def weights_trace(rule, panel, prior_errors=None):
    """Per-row weights ``beta_t`` of ``rule`` over ``panel``, shape (T, m)."""
    X, feed = panel.X, panel.feed()
    if rule.standardizer is not None:
        X = rule.standardizer.transform(X)
        feed = TargetFeed(rule.standardizer.transform(panel.y), panel.lead_time)
    Z, _ = build_contexts(X, feed, rule.tau, series=panel.series, prior_errors=prior_errors)
    return rule.coefficients(Z)


# ---------------------------------------------------------------------------
# estimator


class AdaptiveRidgeEnsemble(RegressorMixin, BaseEstimator):
    """Ensemble combiner with weights adapting to recent member errors.

    Parameters
    ----------
    lam : float
        Regularization weight (faithful mode) or ``mu`` (squared mode).
    tau : int
        Number of lagged error vectors in the context.
    lead_time : int
        Forecast lead time in rows.
    mode : {"faithful", "squared"}
    standardize : bool
        Rescale by training-target mean and std before fitting.
    allow_underdetermined : bool
        Permit fewer training rows than rule parameters.
    max_iter, tol : int, float
        Fixed-point controls for faithful mode.

    Attributes
    ----------
    rule_ : AdaptiveRule
    fit_info_ : dict
        Solver diagnostics.

    Notes
    -----
    ``predict(X, y)`` takes the realized targets aligned with ``X`` but reads
    them only through a lead-time gate, as they would arrive in real time.
    The error tail of the fit data seeds the first contexts.
    """

    def __init__(self, lam=0.1, tau=5, lead_time=1, mode="faithful", standardize=False,
                 allow_underdetermined=False, max_iter=100, tol=1e-9):
        self.lam = lam
        self.tau = tau
        self.lead_time = lead_time
        self.mode = mode
        self.standardize = standardize
        self.allow_underdetermined = allow_underdetermined
        self.max_iter = max_iter
        self.tol = tol

    def _solve(self, problem):
        kwargs = {"max_iter": self.max_iter, "rtol": self.tol} if self.mode == "faithful" else {}
        return solve_adaptive_ridge(problem, self.lam, self.mode, **kwargs)

    def _prepare(self, X, y, series):
        X = check_forecasts(X)
        y = check_targets(y, X.shape[0])
        series = check_series(series, X.shape[0])
        std = Standardizer.fit(y) if self.standardize else None
        if std is not None:
            X, y = std.transform(X), std.transform(y)
        return X, y, series, std

    def make_problem(self, X, y, series=None):
        """Training problem for the current ``tau``; reusable across ``lam``."""
        X, y, series, std = self._prepare(X, y, series)
        Z, _ = build_contexts(X, TargetFeed(y, self.lead_time), self.tau, series=series)
        problem = AdaptiveFitProblem(X, y, Z, self.tau,
                                     allow_underdetermined=self.allow_underdetermined)
        problem.standardizer = std
        problem.series = series
        return problem

    def fit(self, X, y, series=None, problem=None):
        if problem is None:
            problem = self.make_problem(X, y, series)
        rule = self._solve(problem)
        rule.lead_time = self.lead_time
        rule.standardizer = problem.standardizer
        rule.members = tuple(f"m{j}" for j in range(problem.n_members))
        self.rule_ = rule
        self.fit_info_ = rule.diagnostics
        self.n_features_in_ = problem.n_members
        lag = self.lead_time + self.tau - 1
        self.tail_errors_ = realized_errors(problem.X, problem.y)[-lag:] if lag else None
        self.tail_series_ = None if problem.series is None else problem.series[-1]
        return self

    def _contexts(self, X, y, series):
        check_is_fitted(self, "rule_")
        X = check_forecasts(X)
        n = X.shape[0]
        series = check_series(series, n)
        std = self.rule_.standardizer
        feed = None
        if y is not None:
            feed = as_feed(y, self.lead_time)
            if std is not None:
                feed = ScaledFeed(feed, std)
        Xs = X if std is None else std.transform(X)
        Z, _ = build_contexts(Xs, feed, self.tau, self.lead_time, series=series,
                              prior_errors=self.tail_errors_, prior_series=self.tail_series_)
        return Xs, Z

    def coef_trace(self, X, y=None, series=None):
        """Weights ``beta_t`` used for each row of ``X``."""
        _, Z = self._contexts(X, y, series)
        return self.rule_.coefficients(Z)

    def predict(self, X, y=None, series=None):
        Xs, Z = self._contexts(X, y, series)
        pred = predict(self.rule_, Xs, Z)
        std = self.rule_.standardizer
        return pred if std is None else std.inverse(pred)

    def score(self, X, y, sample_weight=None, series=None):
        from sklearn.metrics import r2_score

        return r2_score(y, self.predict(X, y, series=series), sample_weight=sample_weight)


def fit_many(problem, lams, mode="faithful", **kwargs):
    """Rules for several regularization weights sharing one factorization.

    Failed fits are returned as the exception instance in place of a rule.
    """
    out = {}
    for lam in lams:
        try:
            out[lam] = solve_adaptive_ridge(problem, lam, mode, **kwargs)
        except (NumericalError, ValueError) as exc:
            warnings.warn(f"adaptive ridge fit failed for lam={lam}: {exc}", stacklevel=2)
            out[lam] = exc
    return out
