"""Adaptive robust ensembles of forecasters.

Combines member forecasts with weights ``beta_t = beta0 + V0 @ Z_t`` that
react to the members' recent errors ``Z_t``, fitted by a norm-sum ridge
objective, and compares them with classic combiners in a leakage-audited
backtest harness.
"""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

from .adaptive import AdaptiveRidgeEnsemble, AdaptiveRule, build_contexts, solve_adaptive_ridge
from .baselines import (
    BestInHindsight,
    EnsembleMean,
    Exp3Ensemble,
    PassiveAggressiveEnsemble,
    RidgeEnsemble,
)
from .metrics import MetricsReport, cvar, evaluate, mae, mape, rmse
from .panel import ForecastPanel, SplitSpec, load_panel, split_chronological
from .synth import SynthConfig, generate

__all__ = [
    "AdaptiveRidgeEnsemble",
    "AdaptiveRule",
    "BestInHindsight",
    "EnsembleMean",
    "Exp3Ensemble",
    "ForecastPanel",
    "MetricsReport",
    "PassiveAggressiveEnsemble",
    "RidgeEnsemble",
    "SplitSpec",
    "SynthConfig",
    "build_contexts",
    "cvar",
    "evaluate",
    "generate",
    "load_panel",
    "mae",
    "mape",
    "rmse",
    "solve_adaptive_ridge",
    "split_chronological",
]
