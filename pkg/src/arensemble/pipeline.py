"""Backtesting harness: grid search on validation, refit, one-shot test evaluation.

Each method goes through the same steps:

1. fit every hyperparameter candidate on the training rows;
2. predict the validation rows, revealing their targets through the
   lead-time gate;
3. keep the candidate with the lowest validation metric (ties go to the
   smaller ``lam``, then the smaller ``tau``);
4. refit it on train + validation;
5. predict the test rows the same way as in step 2;
6. score the test predictions.

Every target read goes through a :class:`~arensemble.panel.TargetFeed` tied
to an :class:`~arensemble.panel.AccessLog`, so :func:`audit_access` can check
afterwards that no step saw a target earlier than allowed.

Campaigns repeat the whole procedure over synthetic seeds and one varied
setting, and write ``raw.csv``, ``results.csv``, ``chosen_params.json`` and
``timing.csv``.
"""

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .adaptive import MODES, AdaptiveRidgeEnsemble
from .baselines import (
    BestInHindsight,
    EnsembleMean,
    Exp3Ensemble,
    PassiveAggressiveEnsemble,
    RidgeEnsemble,
)
from .exceptions import EnsembleError, LeakageError, PanelError
from .metrics import REPORT_FIELDS, METRIC_FUNCTIONS, evaluate, get_metric
from .panel import AccessLog, ScaledFeed, SplitSpec, Standardizer
from .synth import SynthConfig, generate

log = logging.getLogger(__name__)

METHODS = ("best", "mean", "exp3", "pa", "ridge", "adaptive")
METHOD_LABELS = {
    "best": "Best model in hindsight",
    "mean": "Ensemble mean",
    "exp3": "Exp3",
    "pa": "Passive-Aggressive",
    "ridge": "Ridge",
    "adaptive": "Adaptive ridge",
}
PHASES = ("select", "refit", "test", "evaluate")
SCHEMA_VERSION = 1

_DEFAULT_REG = (0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 2.0)
_SYNTH_REG = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)


def check_methods(methods):
    methods = tuple(methods)
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown method(s) {unknown}; choose from {list(METHODS)}")
    if not methods:
        raise ValueError("no methods given")
    return methods


@dataclass(frozen=True)
class GridSpec:
    """Hyperparameter candidates per method and the selection metric.

    ``lam`` serves both ridge variants; for faithful adaptive ridge the
    ``lam = 0`` point is skipped because that objective has no unique
    minimizer.
    """

    lam: tuple = _DEFAULT_REG
    tau: tuple = tuple(range(1, 11))
    exp3_window: tuple = (5, 10, 25, 50, 100)
    pa_epsilon: tuple = _DEFAULT_REG
    metric: str = "mae"
    mode: str = "faithful"
    standardize: bool = False
    allow_underdetermined: bool = False

    def __post_init__(self):
        for name in ("lam", "tau", "exp3_window", "pa_epsilon"):
            values = tuple(getattr(self, name))
            if not values:
                raise ValueError(f"grid {name!r} is empty")
            object.__setattr__(self, name, values)
        if any(v < 0 or not math.isfinite(v) for v in self.lam + self.pa_epsilon):
            raise ValueError("lam and pa_epsilon values must be finite and >= 0")
        if any(int(v) != v or v < 1 for v in self.tau + self.exp3_window):
            raise ValueError("tau and exp3_window values must be integers >= 1")
        if self.metric not in METRIC_FUNCTIONS:
            raise ValueError(f"unknown metric {self.metric!r}; choose from {sorted(METRIC_FUNCTIONS)}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    @classmethod
    def synthetic(cls, tau=5, **changes):
        """Grid of the synthetic experiments: five regularization values, fixed ``tau``."""
        taus = tuple(tau) if isinstance(tau, (tuple, list)) else (tau,)
        return cls(lam=_SYNTH_REG, tau=taus, pa_epsilon=_SYNTH_REG, **changes)

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def candidates(self, method):
        """Parameter dicts in tie-break order (smaller values first)."""
        if method in ("best", "mean"):
            return [{}]
        if method == "exp3":
            return [{"window": int(w)} for w in sorted(self.exp3_window)]
        if method == "pa":
            return [{"epsilon": float(e)} for e in sorted(self.pa_epsilon)]
        if method == "ridge":
            return [{"lam": float(v)} for v in sorted(self.lam)]
        if method == "adaptive":
            lams = [v for v in sorted(self.lam) if v > 0 or self.mode == "squared"]
            if not lams:
                raise ValueError("faithful adaptive ridge needs at least one lam > 0")
            return [{"lam": float(v), "tau": int(t)} for v in lams for t in sorted(self.tau)]
        raise ValueError(f"unknown method {method!r}")


def _tie_key(params):
    return (params.get("lam", 0.0), params.get("tau", 0), params.get("epsilon", 0.0),
            params.get("window", 0))


# ---------------------------------------------------------------------------
# splits


def split_bounds(n_rows, split=None, sizes=None):
    """Row indices ``(b1, b2)`` where validation and test begin.

    ``sizes=(n_train, n_val)`` overrides the fractional ``split``.
    """
    if sizes is not None:
        n_train, n_val = (int(s) for s in sizes)
        b1, b2 = n_train, n_train + n_val
    else:
        b1, b2 = (split or SplitSpec()).boundaries(n_rows)
    parts = (b1, b2 - b1, n_rows - b2)
    if min(parts) < 1:
        raise PanelError(f"split of {n_rows} rows leaves an empty part {parts}")
    return b1, b2


# ---------------------------------------------------------------------------
# one method


def build_estimator(method, params, grid, lead_time=1):
    if method == "mean":
        return EnsembleMean()
    if method == "best":
        return BestInHindsight()
    if method == "exp3":
        return Exp3Ensemble(window=params["window"], lead_time=lead_time)
    if method == "pa":
        return PassiveAggressiveEnsemble(epsilon=params["epsilon"], lead_time=lead_time)
    if method == "ridge":
        return RidgeEnsemble(lam=params["lam"])
    if method == "adaptive":
        return AdaptiveRidgeEnsemble(
            lam=params["lam"], tau=params["tau"], lead_time=lead_time, mode=grid.mode,
            allow_underdetermined=grid.allow_underdetermined,
        )
    raise ValueError(f"unknown method {method!r}")


class _Fitted:
    """A fitted estimator plus the scaling applied around it."""

    def __init__(self, model, std):
        self.model = model
        self.std = std

    def _inputs(self, X, feed):
        if self.std is None:
            return X, feed
        return self.std.transform(X), (None if feed is None else ScaledFeed(feed, self.std))

    def predict(self, X, feed, series):
        Xs, fs = self._inputs(X, feed)
        pred = self.model.predict(Xs, fs, series=series)
        return pred if self.std is None else self.std.inverse(pred)

    def coef_trace(self, X, feed, series):
        Xs, fs = self._inputs(X, feed)
        return self.model.coef_trace(Xs, fs, series=series)


def _fit(method, params, grid, X, y, series, lead_time, problems=None):
    std = Standardizer.fit(y) if grid.standardize else None
    if std is not None:
        X, y = std.transform(X), std.transform(y)
    model = build_estimator(method, params, grid, lead_time)
    if method == "adaptive" and problems is not None:
        tau = params["tau"]
        if tau not in problems:
            problems[tau] = model.make_problem(X, y, series)
        model.fit(X, y, series, problem=problems[tau])
    else:
        model.fit(X, y, series=series)
    return _Fitted(model, std)


@dataclass
class Algorithm1Result:
    """Outcome of one method; unpacks as ``(model, report, params)``."""

    method: str
    model: object
    report: object
    params: dict
    val_score: float = None
    predictions: np.ndarray = field(default=None, repr=False)
    candidates: list = field(default_factory=list, repr=False)
    weights: np.ndarray = field(default=None, repr=False)
    fit_seconds: float = 0.0

    def __iter__(self):
        return iter((self.model, self.report, self.params))


def _sub(a, start, stop):
    return None if a is None else a[start:stop]


def run_algorithm1(panel, grid=None, method="adaptive", *, split=None, sizes=None,
                   access_log=None, emit_weights=False):
    """Select, refit and evaluate one method on a panel.

    Parameters
    ----------
    panel : ForecastPanel
    grid : GridSpec, optional
    method : str
        One of :data:`METHODS`.
    split : SplitSpec, optional
        Fractional split (default 50/25/25).
    sizes : (int, int), optional
        Explicit training and validation row counts; the test set is the rest.
    access_log : AccessLog, optional
        Receives every target read, labelled ``"<method>/<phase>"``.
    emit_weights : bool
        Also return the per-row test weights.

    Returns
    -------
    Algorithm1Result
    """
    grid = grid or GridSpec()
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {list(METHODS)}")
    access_log = access_log if access_log is not None else AccessLog()
    n, k = panel.n_rows, panel.lead_time
    b1, b2 = split_bounds(n, split, sizes)
    feed = panel.feed(recorder=access_log)
    X, series = panel.X, panel.series
    X_test, s_test = X[b2:], _sub(series, b2, n)
    test_feed = feed.window(b2, n)

    def phase(name):
        access_log.phase = f"{method}/{name}"

    if method == "best":
        phase("evaluate")
        y_test = test_feed.hindsight()
        model = BestInHindsight().fit(X_test, y_test)
        pred = model.predict(X_test)
        params = {"member": model.member_}
        if panel.members:
            params["member_name"] = panel.members[model.member_]
        return Algorithm1Result(method, model, evaluate(y_test, pred), params,
                                predictions=pred)

    # select on validation
    phase("select")
    y_train = feed.window(0, b1).hindsight()
    val_feed = feed.window(b1, b2)
    X_train, s_train = X[:b1], _sub(series, 0, b1)
    X_val, s_val = X[b1:b2], _sub(series, b1, b2)
    metric = get_metric(grid.metric)
    problems = {}
    scored = []
    y_val = None
    for params in grid.candidates(method):
        try:
            fitted = _fit(method, params, grid, X_train, y_train, s_train, k, problems)
            pred = fitted.predict(X_val, val_feed, s_val)
            if y_val is None:
                y_val = val_feed.hindsight()
            score = float(metric(y_val, pred))
            if not math.isfinite(score):
                raise EnsembleError(f"non-finite validation {grid.metric}")
            scored.append({"params": params, "score": score, "error": None})
        except LeakageError:
            raise
        except (EnsembleError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            log.debug("%s %s failed: %s", method, params, exc)
            scored.append({"params": params, "score": None, "error": f"{type(exc).__name__}: {exc}"})
    problems.clear()
    ok = [c for c in scored if c["score"] is not None]
    if not ok:
        detail = "; ".join(f"{c['params']}: {c['error']}" for c in scored)
        raise EnsembleError(f"every {method} grid point failed: {detail}")
    chosen = min(ok, key=lambda c: (c["score"], _tie_key(c["params"])))

    # refit on train + validation
    phase("refit")
    y_fit = feed.window(0, b2).hindsight()
    t0 = time.perf_counter()
    fitted = _fit(method, chosen["params"], grid, X[:b2], y_fit, _sub(series, 0, b2), k)
    fit_seconds = time.perf_counter() - t0

    # test: targets arrive through the gate only
    phase("test")
    pred = fitted.predict(X_test, test_feed, s_test)
    weights = fitted.coef_trace(X_test, test_feed, s_test) if emit_weights else None

    phase("evaluate")
    report = evaluate(test_feed.hindsight(), pred)
    return Algorithm1Result(method, fitted.model, report, dict(chosen["params"]),
                            val_score=chosen["score"], predictions=pred, candidates=scored,
                            weights=weights, fit_seconds=fit_seconds)


def run_backtest(panel, methods=METHODS, grid=None, *, split=None, sizes=None,
                 access_log=None, emit_weights=False):
    """:func:`run_algorithm1` for several methods sharing one access log."""
    access_log = access_log if access_log is not None else AccessLog()
    return {
        m: run_algorithm1(panel, grid, m, split=split, sizes=sizes, access_log=access_log,
                          emit_weights=emit_weights)
        for m in check_methods(methods)
    }


def audit_access(access_log, lead_time, test_start):
    """Leakage violations in an access log; an empty list means clean.

    Rules: gated reads never look past ``now - lead_time``; selection and
    refitting never read test rows; whole-vector (ungated) reads of test rows
    happen only in the evaluation phase, after all test predictions of that
    method.
    """
    problems = []
    done_eval = set()
    for i, (label, index, now) in enumerate(access_log.entries):
        method, _, phase = label.rpartition("/")
        if now is not None and index > now - lead_time:
            problems.append(f"entry {i}: {label} read row {index} while predicting row {now}")
        if phase in ("select", "refit") and index >= test_start:
            problems.append(f"entry {i}: {label} read test row {index}")
        if now is None and index >= test_start and phase != "evaluate":
            problems.append(f"entry {i}: {label} read test row {index} outside evaluation")
        if phase == "evaluate":
            done_eval.add(method)
        elif method in done_eval:
            problems.append(f"entry {i}: {label} after {method} was already evaluated")
    return problems


# ---------------------------------------------------------------------------
# campaigns

VARY_KINDS = ("drift", "m", "tau", "train_size", "p_drift", "none")


@dataclass(frozen=True)
class ExperimentCampaign:
    """Seed-replicated synthetic experiment over one varied setting.

    ``vary`` selects what ``values`` change: ``drift`` sets ``sigma_drift``
    and ``s_drift`` together, ``m`` the member count, ``tau`` the adaptive
    window, ``p_drift`` the Bernoulli gate probability and ``train_size`` the
    number of train + validation rows immediately before the fixed test
    window (one third of them for validation).
    """

    template: SynthConfig = field(default_factory=lambda: SynthConfig(drift="gaussian"))
    vary: str = "drift"
    values: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    seeds: tuple = tuple(range(30))
    methods: tuple = METHODS
    grid: GridSpec = field(default_factory=GridSpec.synthetic)
    split: SplitSpec = field(default_factory=SplitSpec)

    def __post_init__(self):
        if self.vary not in VARY_KINDS:
            raise ValueError(f"vary must be one of {VARY_KINDS}, got {self.vary!r}")
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "methods", check_methods(self.methods))
        if not self.values or not self.seeds:
            raise ValueError("campaign needs at least one value and one seed")

    def cell(self, value, seed):
        """``(panel, grid, sizes)`` for one (value, seed) cell."""
        cfg, grid, sizes = self.template.replace(seed=seed), self.grid, None
        if self.vary == "drift":
            cfg = cfg.replace(sigma_drift=float(value), s_drift=float(value))
        elif self.vary == "m":
            cfg = cfg.replace(m=int(value))
        elif self.vary == "p_drift":
            cfg = cfg.replace(p_drift=float(value))
        elif self.vary == "tau":
            # large windows are meant to show the overfitting regime
            grid = grid.replace(tau=(int(value),), allow_underdetermined=True)
        panel = generate(cfg)
        if self.vary == "train_size":
            n_avail = int(value)
            _, test_start = self.split.boundaries(cfg.T)
            if not 2 <= n_avail <= test_start:
                raise ValueError(f"train_size {n_avail} outside [2, {test_start}]")
            panel = panel.rows(test_start - n_avail, cfg.T)
            n_val = int(math.floor(n_avail / 3 + 0.5))
            sizes = (n_avail - n_val, n_val)
            grid = grid.replace(allow_underdetermined=True)
        return panel, grid, sizes

    def to_dict(self):
        return {
            "template": self.template.to_dict(),
            "vary": self.vary,
            "values": list(self.values),
            "seeds": list(self.seeds),
            "methods": list(self.methods),
            "grid": self.grid.to_dict(),
            "split": asdict(self.split),
            "schema_version": SCHEMA_VERSION,
        }


# wall-clock times go to timing.csv only, so the other outputs are byte-reproducible
RAW_FIELDS = ("vary", "value", "seed", "method", "status") + REPORT_FIELDS + (
    "val_score", "params", "error")
AGG_FIELDS = ("vary", "value", "method", "n_ok", "n_failed") + tuple(
    f"{f}_{s}" for f in REPORT_FIELDS[:-1] for s in ("mean", "std"))


def run_cell(campaign, value, seed):
    """Raw result rows for one (value, seed); per-method failures are recorded."""
    rows = []
    try:
        panel, grid, sizes = campaign.cell(value, seed)
    except (EnsembleError, ValueError) as exc:
        return [_failed_row(campaign, value, seed, m, exc) for m in campaign.methods]
    for method in campaign.methods:
        try:
            res = run_algorithm1(panel, grid, method, split=campaign.split, sizes=sizes)
        except (EnsembleError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            rows.append(_failed_row(campaign, value, seed, method, exc))
            continue
        row = {"vary": campaign.vary, "value": value, "seed": seed, "method": method,
               "status": "ok", **res.report.to_dict(), "val_score": res.val_score,
               "fit_seconds": res.fit_seconds, "params": res.params, "error": ""}
        rows.append(row)
    return rows


def _failed_row(campaign, value, seed, method, exc):
    row = {f: math.nan for f in REPORT_FIELDS}
    row.update(vary=campaign.vary, value=value, seed=seed, method=method, status="failed",
               n_cases=0, val_score=None, fit_seconds=math.nan, params={},
               error=f"{type(exc).__name__}: {exc}")
    return row


def _run_cell_args(args):
    return run_cell(*args)


def aggregate(raw_rows, methods=METHODS):
    """Mean and standard deviation (ddof=1) per (method, value) over ok seeds."""
    order = {m: i for i, m in enumerate(methods)}
    groups = {}
    for r in raw_rows:
        groups.setdefault((r["value"], r["method"]), []).append(r)
    out = []
    for (value, method), rows in sorted(groups.items(), key=lambda kv: (kv[0][0], order.get(kv[0][1], 99))):
        ok = [r for r in rows if r["status"] == "ok"]
        agg = {"vary": rows[0]["vary"], "value": value, "method": method, "n_ok": len(ok),
               "n_failed": len(rows) - len(ok)}
        for f in REPORT_FIELDS[:-1]:
            vals = np.array([r[f] for r in ok], dtype=float)
            agg[f"{f}_mean"] = float(np.mean(vals)) if vals.size else math.nan
            agg[f"{f}_std"] = float(np.std(vals, ddof=1)) if vals.size > 1 else (0.0 if vals.size else math.nan)
        out.append(agg)
    return out


@dataclass
class CampaignResult:
    campaign: ExperimentCampaign
    raw: list
    results: list
    timing: list = field(default_factory=list)

    @property
    def n_failed(self):
        return sum(r["status"] != "ok" for r in self.raw)

    def table(self, metric="rmse"):
        """``{method: {value: mean}}`` for quick comparisons."""
        out = {}
        for r in self.results:
            out.setdefault(r["method"], {})[r["value"]] = r[f"{metric}_mean"]
        return out

    def per_seed(self, metric="rmse"):
        """``{(method, value): {seed: metric}}`` over successful rows."""
        out = {}
        for r in self.raw:
            if r["status"] == "ok":
                out.setdefault((r["method"], r["value"]), {})[r["seed"]] = r[metric]
        return out

    def write(self, outdir):
        """Write the four output files; returns their paths."""
        import os

        os.makedirs(outdir, exist_ok=True)
        paths = {name: os.path.join(outdir, name)
                 for name in ("raw.csv", "results.csv", "chosen_params.json", "timing.csv")}
        _write_csv(paths["raw.csv"], RAW_FIELDS,
                   [{**r, "params": json.dumps(r["params"], sort_keys=True)} for r in self.raw])
        _write_csv(paths["results.csv"], AGG_FIELDS, self.results)
        chosen = [{"value": r["value"], "seed": r["seed"], "method": r["method"],
                   "params": r["params"]} for r in self.raw if r["status"] == "ok"]
        with open(paths["chosen_params.json"], "w", encoding="utf-8") as fh:
            json.dump({"schema_version": SCHEMA_VERSION, "vary": self.campaign.vary,
                       "chosen": chosen}, fh, indent=1, sort_keys=True)
        timing = self.timing or [
            {"kind": "refit", "value": r["value"], "seed": r["seed"], "method": r["method"],
             "N": "", "m": "", "tau": "", "seconds": r["fit_seconds"]}
            for r in self.raw if r["status"] == "ok"
        ]
        _write_csv(paths["timing.csv"], TIMING_FIELDS, timing)
        return paths


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def _write_csv(path, fields, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(r.get(f)) for f in fields])


def run_campaign(campaign, *, n_jobs=1, progress=None):
    """Run every (value, seed) cell; output order does not depend on ``n_jobs``."""
    cells = [(campaign, v, s) for v in campaign.values for s in campaign.seeds]
    raw = []
    if n_jobs == 1:
        for i, args in enumerate(cells):
            raw.extend(_run_cell_args(args))
            if progress:
                progress(i + 1, len(cells))
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            for i, rows in enumerate(pool.map(_run_cell_args, cells)):
                raw.extend(rows)
                if progress:
                    progress(i + 1, len(cells))
    order = {m: i for i, m in enumerate(campaign.methods)}
    raw.sort(key=lambda r: (campaign.values.index(r["value"]), r["seed"], order[r["method"]]))
    return CampaignResult(campaign, raw, aggregate(raw, campaign.methods))


# ---------------------------------------------------------------------------
# timing

TIMING_FIELDS = ("kind", "value", "seed", "method", "N", "m", "tau", "seconds")


def timing_probe(N_values=(100, 3000), taus=(5,), ms=(10,), *, seed=0, repeats=3,
                 mode="squared", lam=0.1):
    """Median wall-clock seconds of one adaptive fit per (N, m, tau).

    The timed region covers context construction, problem assembly and the
    solve on the first ``N`` rows of a drift-0.5 synthetic panel.
    """
    rows = []
    for m in ms:
        cfg = SynthConfig(T=max(N_values) + 1, m=int(m), drift="gaussian", seed=seed)
        panel = generate(cfg)
        for N in N_values:
            X, y = panel.X[:N], panel.y[:N]
            for tau in taus:
                est = AdaptiveRidgeEnsemble(lam=lam, tau=int(tau), mode=mode,
                                            allow_underdetermined=True)
                times = []
                for _ in range(repeats):
                    t0 = time.perf_counter()
                    est.fit(X, y)
                    times.append(time.perf_counter() - t0)
                rows.append({"kind": "probe", "value": "", "seed": seed, "method": f"adaptive-{mode}",
                             "N": int(N), "m": int(m), "tau": int(tau),
                             "seconds": float(np.median(times))})
    return rows
