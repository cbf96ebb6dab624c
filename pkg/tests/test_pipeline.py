import csv
import json
import math

import numpy as np
import pytest

from arensemble import pipeline as pl
from arensemble.exceptions import EnsembleError, PanelError
from arensemble.panel import AccessLog, ForecastPanel
from arensemble.synth import SynthConfig, generate


@pytest.fixture(scope="module")
def panel():
    return generate(SynthConfig(T=240, m=3, drift="gaussian", seed=3))


SMALL = pl.GridSpec(lam=(0.01, 0.1), tau=(1, 2), exp3_window=(5, 10), pa_epsilon=(0.0, 0.1))


class TestGrid:
    def test_defaults(self):
        g = pl.GridSpec()
        assert g.lam == (0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 2.0)
        assert g.tau == tuple(range(1, 11)) and g.metric == "mae"

    def test_faithful_skips_zero_lambda(self):
        cands = pl.GridSpec(lam=(0.0, 0.1), tau=(1,)).candidates("adaptive")
        assert cands == [{"lam": 0.1, "tau": 1}]
        sq = pl.GridSpec(lam=(0.0, 0.1), tau=(1,), mode="squared").candidates("adaptive")
        assert len(sq) == 2

    @pytest.mark.parametrize("bad", [dict(lam=()), dict(tau=(0,)), dict(metric="r2"),
                                     dict(lam=(-1.0,)), dict(mode="x")])
    def test_validation(self, bad):
        with pytest.raises(ValueError):
            pl.GridSpec(**bad)

    def test_synthetic_grid(self):
        g = pl.GridSpec.synthetic()
        assert g.tau == (5,) and 0.0 not in g.lam


class TestSplit:
    def test_fractions(self):
        assert pl.split_bounds(4000) == (2000, 3000)

    def test_sizes(self):
        assert pl.split_bounds(100, sizes=(40, 20)) == (40, 60)

    def test_empty_part(self):
        with pytest.raises(PanelError):
            pl.split_bounds(100, sizes=(60, 40))


class TestAlgorithm1:
    def test_argmin_selected(self, panel):
        res = pl.run_algorithm1(panel, SMALL, "ridge")
        ok = [c for c in res.candidates if c["score"] is not None]
        assert res.val_score == min(c["score"] for c in ok)
        assert res.params in [c["params"] for c in ok]

    def test_ties_prefer_smaller_values(self, panel, monkeypatch):
        # force identical validation scores: the smallest lam then tau must win
        monkeypatch.setattr(pl, "get_metric", lambda name: (lambda y, p: 1.0))
        res = pl.run_algorithm1(panel, SMALL, "adaptive")
        assert res.params == {"lam": 0.01, "tau": 1}

    def test_single_point_grid(self, panel):
        grid = pl.GridSpec(lam=(0.1,), tau=(2,))
        res = pl.run_algorithm1(panel, grid, "adaptive")
        assert res.params == {"lam": 0.1, "tau": 2}
        assert len(res.candidates) == 1

    def test_deterministic(self, panel):
        a = pl.run_algorithm1(panel, SMALL, "adaptive")
        b = pl.run_algorithm1(panel, SMALL, "adaptive")
        np.testing.assert_array_equal(a.predictions, b.predictions)
        assert a.report.to_dict() == b.report.to_dict()

    def test_unpacks_and_reports(self, panel):
        model, report, params = pl.run_algorithm1(panel, SMALL, "exp3")
        assert report.n_cases == 60
        assert params["window"] in (5, 10)

    def test_best_uses_test_mape(self, panel):
        res = pl.run_algorithm1(panel, SMALL, "best")
        test = panel.rows(180, 240)
        mapes = [np.mean(np.abs((test.X[:, j] - test.y) / test.y)) for j in range(3)]
        assert res.params["member"] == int(np.argmin(mapes))

    def test_emit_weights(self, panel):
        res = pl.run_algorithm1(panel, SMALL, "adaptive", emit_weights=True)
        test = panel.rows(180, 240)
        np.testing.assert_allclose(np.einsum("ij,ij->i", test.X, res.weights), res.predictions,
                                   atol=1e-12)

    def test_all_grid_points_failing(self, panel):
        grid = pl.GridSpec(lam=(0.1,), tau=(60,))  # too many parameters for 120 rows
        with pytest.raises(EnsembleError, match="every adaptive grid point failed"):
            pl.run_algorithm1(panel, grid, "adaptive")

    def test_standardize_option(self, panel):
        res = pl.run_algorithm1(panel, SMALL.replace(standardize=True), "adaptive")
        assert math.isfinite(res.report.rmse)

    def test_unknown_method(self, panel):
        with pytest.raises(ValueError):
            pl.run_algorithm1(panel, SMALL, "lasso")


class TestLeakage:
    def test_full_backtest_is_clean(self, panel):
        log = AccessLog()
        pl.run_backtest(panel, pl.METHODS, SMALL, access_log=log)
        assert pl.audit_access(log, panel.lead_time, 180) == []
        phases = {label.rpartition("/")[2] for label, _, _ in log.entries}
        assert phases == set(pl.PHASES)

    def test_lead_time_three(self):
        p = generate(SynthConfig(T=150, m=3, drift="gaussian", seed=1))
        p = ForecastPanel(timestamps=p.timestamps, X=p.X, y=p.y, lead_time=3)
        log = AccessLog()
        pl.run_backtest(p, ("exp3", "pa", "adaptive"), SMALL, access_log=log)
        assert pl.audit_access(log, 3, pl.split_bounds(150)[1]) == []

    def test_audit_flags_violations(self):
        log = AccessLog()
        log.phase = "x/select"
        log.record(90, None)
        log.phase = "x/test"
        log.record(95, 95)
        log.phase = "x/evaluate"
        log.record(91, None)
        log.phase = "x/test"
        log.record(80, 92)
        found = pl.audit_access(log, 1, 90)
        assert len(found) == 4


@pytest.fixture(scope="module")
def result():
    camp = pl.ExperimentCampaign(template=SynthConfig(T=200, m=3, drift="gaussian"),
                                 values=(0.0, 0.5), seeds=(0, 1, 2),
                                 methods=("mean", "ridge", "adaptive"),
                                 grid=pl.GridSpec.synthetic(tau=2))
    return pl.run_campaign(camp)


class TestCampaign:
    def test_counts(self, result):
        assert len(result.raw) == 2 * 3 * 3
        assert result.n_failed == 0
        assert len(result.results) == 2 * 3

    def test_aggregate_recomputed(self, result):
        for agg in result.results:
            vals = [r["rmse"] for r in result.raw
                    if r["value"] == agg["value"] and r["method"] == agg["method"]]
            assert agg["rmse_mean"] == pytest.approx(np.mean(vals), rel=1e-12)
            assert agg["rmse_std"] == pytest.approx(np.std(vals, ddof=1), rel=1e-12)

    def test_write(self, result, tmp_path):
        paths = result.write(tmp_path)
        with open(paths["raw.csv"]) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 18 and set(rows[0]) == set(pl.RAW_FIELDS)
        with open(paths["chosen_params.json"]) as fh:
            assert len(json.load(fh)["chosen"]) == 18

    def test_parallel_matches_serial(self, result):
        par = pl.run_campaign(result.campaign, n_jobs=2)
        key = lambda rows: [(r["value"], r["seed"], r["method"], r["rmse"]) for r in rows]
        assert key(par.raw) == key(result.raw)

    def test_failures_are_recorded(self):
        camp = pl.ExperimentCampaign(template=SynthConfig(T=120, m=3, drift="gaussian"),
                                     vary="train_size", values=(1,), seeds=(0,),
                                     methods=("mean",))
        res = pl.run_campaign(camp)
        assert res.n_failed == 1 and "train_size" in res.raw[0]["error"]
        assert res.results[0]["n_ok"] == 0

    def test_cells(self):
        camp = pl.ExperimentCampaign(template=SynthConfig(T=300, m=3, drift="gaussian"),
                                     vary="train_size", values=(90,), seeds=(0,))
        p, grid, sizes = camp.cell(90, 0)
        assert p.n_rows == 90 + 75 and sizes == (60, 30)
        assert grid.allow_underdetermined
        camp = pl.ExperimentCampaign(vary="m", values=(4,), seeds=(0,))
        assert camp.cell(4, 0)[0].n_members == 4

    def test_bad_vary(self):
        with pytest.raises(ValueError):
            pl.ExperimentCampaign(vary="noise")


def test_timing_probe_rows():
    rows = pl.timing_probe(N_values=(50, 100), taus=(1, 2), ms=(3,), repeats=1)
    assert len(rows) == 4
    assert all(r["seconds"] > 0 and set(r) == set(pl.TIMING_FIELDS) for r in rows)
