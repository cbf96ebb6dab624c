"""Synthetic forecast panels with controllable member bias, noise and drift.

Ground truth is a noisy sine of period 500.  Each member adds Gaussian error
with its own bias and spread, optionally followed by one of two drift
processes:

* ``"gaussian"``: a per-member Gaussian error term scaled by ``t / T``, so the
  drift grows linearly from nothing to full strength over the horizon;
* ``"bernoulli"``: the same kind of Gaussian term switched on at each step
  with probability ``p_drift``.

Every random draw comes from its own stream keyed by ``(seed, stage,
member)``, so appending members leaves the earlier members unchanged.
"""

from dataclasses import asdict, dataclass, replace

import numpy as np

from .panel import ForecastPanel
from .validation import check_nonnegative, check_positive_int, check_probability

DRIFT_KINDS = ("none", "gaussian", "bernoulli")

# stream identifiers
_TRUTH, _MEMBER_PARAMS, _MEMBER_NOISE, _DRIFT_PARAMS, _DRIFT_NOISE, _DRIFT_GATE = range(6)


@dataclass(frozen=True)
class SynthConfig:
    T: int = 4000
    m: int = 10
    period: float = 500.0
    noise_sd: float = 0.1
    bias_range: tuple = (-0.5, 0.5)
    sd_range: tuple = (-0.5, 0.5)
    drift: str = "none"
    sigma_drift: float = 0.5
    s_drift: float = 0.5
    p_drift: float = 0.5
    seed: int = 0

    def __post_init__(self):
        check_positive_int(self.T, "T")
        check_positive_int(self.m, "m")
        if not self.period > 0:
            raise ValueError("period must be positive")
        check_nonnegative(self.noise_sd, "noise_sd")
        for name in ("bias_range", "sd_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be ordered (lo <= hi), got {(lo, hi)}")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.drift not in DRIFT_KINDS:
            raise ValueError(f"drift must be one of {DRIFT_KINDS}, got {self.drift!r}")
        check_nonnegative(self.sigma_drift, "sigma_drift")
        check_nonnegative(self.s_drift, "s_drift")
        check_probability(self.p_drift, "p_drift")
        check_positive_int(self.seed, "seed", minimum=0)

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        d = asdict(self)
        d["bias_range"] = list(self.bias_range)
        d["sd_range"] = list(self.sd_range)
        return d


def _rng(cfg, stage, member=0):
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, stage, member]))


def time_index(cfg):
    return np.arange(1, cfg.T + 1, dtype=float)


def gen_ground_truth(cfg):
    t = time_index(cfg)
    noise = _rng(cfg, _TRUTH).normal(0.0, 1.0, cfg.T) * cfg.noise_sd
    return np.sin(2.0 * np.pi * t / cfg.period) + noise


def gen_members(cfg, y, return_params=False):
    """Member forecasts ``y + eps_k`` with ``eps_k ~ N(b_k, |s_k|)``.

    ``b_k`` and ``s_k`` are drawn once per member from ``bias_range`` and
    ``sd_range``.  The default spread range includes negative values, so the
    absolute value is used as the standard deviation.
    """
    y = np.asarray(y, dtype=float)
    X = np.empty((y.size, cfg.m))
    bias = np.empty(cfg.m)
    sd = np.empty(cfg.m)
    for k in range(cfg.m):
        params = _rng(cfg, _MEMBER_PARAMS, k)
        bias[k] = params.uniform(*cfg.bias_range)
        sd[k] = abs(params.uniform(*cfg.sd_range))
        X[:, k] = y + bias[k] + sd[k] * _rng(cfg, _MEMBER_NOISE, k).normal(0.0, 1.0, y.size)
    if return_params:
        return X, {"bias": bias, "sd": sd}
    return X


def _drift_terms(cfg, n_rows, mean_sd, spread_max):
    drift = np.empty((n_rows, cfg.m))
    bias = np.empty(cfg.m)
    sd = np.empty(cfg.m)
    for k in range(cfg.m):
        params = _rng(cfg, _DRIFT_PARAMS, k)
        bias[k] = params.normal(0.0, 1.0) * mean_sd
        sd[k] = params.uniform(0.0, 1.0) * spread_max
        drift[:, k] = bias[k] + sd[k] * _rng(cfg, _DRIFT_NOISE, k).normal(0.0, 1.0, n_rows)
    return drift, {"drift_bias": bias, "drift_sd": sd}


def drift_ramp(t, horizon):
    """Linear drift multiplier: 0 at ``t = 0``, 1 at ``t = horizon``."""
    return np.asarray(t, dtype=float) / float(horizon)


def add_gaussian_drift(cfg, X_base, return_params=False):
    """Add ``(t / T) * drift_k(t)``, ``drift_k ~ N(b'_k, s'_k)``.

    ``b'_k ~ N(0, sigma_drift)`` and ``s'_k ~ Uniform(0, s_drift)``.
    """
    X_base = np.asarray(X_base, dtype=float)
    drift, params = _drift_terms(cfg, X_base.shape[0], cfg.sigma_drift, cfg.s_drift)
    ramp = drift_ramp(time_index(cfg)[: X_base.shape[0]], cfg.T)
    X = X_base + ramp[:, None] * drift
    return (X, params) if return_params else X


def add_bernoulli_drift(cfg, X_base, return_params=False):
    """Add ``g_k(t) * drift_k(t)`` with gates ``g_k(t) ~ Bernoulli(p_drift)``.

    The drift law uses ``sigma_drift`` and ``s_drift`` exactly as the Gaussian
    variant; both default to 0.5.
    """
    X_base = np.asarray(X_base, dtype=float)
    n_rows = X_base.shape[0]
    drift, params = _drift_terms(cfg, n_rows, cfg.sigma_drift, cfg.s_drift)
    gates = np.empty((n_rows, cfg.m), dtype=bool)
    for k in range(cfg.m):
        gates[:, k] = _rng(cfg, _DRIFT_GATE, k).random(n_rows) < cfg.p_drift
    X = X_base + np.where(gates, drift, 0.0)
    params["gates"] = gates
    return (X, params) if return_params else X


def generate(cfg):
    """Full synthetic panel for one configuration and seed."""
    y = gen_ground_truth(cfg)
    X = gen_members(cfg, y)
    if cfg.drift == "gaussian":
        X = add_gaussian_drift(cfg, X)
    elif cfg.drift == "bernoulli":
        X = add_bernoulli_drift(cfg, X)
    return ForecastPanel(
        timestamps=np.arange(1, cfg.T + 1),
        X=X,
        y=y,
        members=tuple(f"member_{k + 1}" for k in range(cfg.m)),
    )
