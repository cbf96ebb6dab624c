import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from arensemble.exceptions import LeakageError, PanelError
from arensemble.panel import (
    AccessLog,
    ForecastPanel,
    PanelSchema,
    SplitSpec,
    Standardizer,
    TargetFeed,
    concat_panels,
    fit_standardizer,
    load_panel,
    read_panel_text,
    split_chronological,
)


def make_panel(T=10, m=2, seed=0, series=None):
    rng = np.random.default_rng(seed)
    return ForecastPanel(timestamps=np.arange(T), X=rng.normal(size=(T, m)),
                         y=rng.normal(size=T), series=series)


class TestLoad:
    def test_well_formed(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("timestamp,a,b,target\n1,0.5,0.7,0.6\n2,1,1.5,1.2\n3,2,2,2\n4,3,3.5,3.1\n")
        p = load_panel(path)
        assert (p.n_rows, p.n_members) == (4, 2)
        assert p.members == ("a", "b")
        np.testing.assert_array_equal(p.y, [0.6, 1.2, 2.0, 3.1])

    def test_member_order_preserved(self):
        p = read_panel_text("target,z,timestamp,a\n1,2,1,3\n", PanelSchema())
        assert p.members == ("z", "a")
        np.testing.assert_array_equal(p.X, [[2.0, 3.0]])

    def test_duplicate_timestamp_names_row(self):
        with pytest.raises(PanelError) as err:
            read_panel_text("timestamp,a,target\n1,1,1\n2,1,1\n2,1,1\n")
        assert err.value.row == 2
        assert "row 2" in str(err.value)

    def test_nan_cell_rejected(self):
        with pytest.raises(PanelError) as err:
            read_panel_text("timestamp,a,target\n1,1,1\n2,nan,1\n")
        assert err.value.row == 1

    def test_empty_cell_rejected(self):
        with pytest.raises(PanelError) as err:
            read_panel_text("timestamp,a,target\n1,,1\n")
        assert err.value.row == 0

    def test_short_row_rejected(self):
        with pytest.raises(PanelError):
            read_panel_text("timestamp,a,target\n1,1\n")

    def test_two_series(self):
        rows = ["timestamp,storm,a,target"]
        rows += [f"{t},A,{t},{t}" for t in range(5)]
        rows += [f"{t},B,{t},{t}" for t in range(7)]
        p = read_panel_text("\n".join(rows), PanelSchema(series="storm"))
        assert p.n_rows == 12
        assert [b - a for a, b in p.segments] == [5, 7]
        assert [p.series[a] for a, _ in p.segments] == ["A", "B"]

    def test_timestamps_restart_across_series(self):
        p = read_panel_text("timestamp,s,a,target\n5,A,1,1\n1,B,1,1\n", PanelSchema(series="s"))
        assert p.n_rows == 2

    def test_noncontiguous_series_rejected(self):
        with pytest.raises(PanelError):
            read_panel_text("timestamp,s,a,target\n1,A,1,1\n1,B,1,1\n2,A,1,1\n",
                            PanelSchema(series="s"))

    def test_roundtrip_bytes(self, tmp_path):
        p = make_panel(T=6, m=3)
        text = p.to_csv()
        q = read_panel_text(text)
        np.testing.assert_array_equal(p.X, q.X)
        np.testing.assert_array_equal(p.y, q.y)
        assert q.to_csv() == text


class TestSplit:
    @pytest.mark.parametrize("T,fracs,sizes", [
        (4000, (0.5, 0.25), (2000, 1000, 1000)),
        (10, (0.5, 0.2), (5, 2, 3)),
    ])
    def test_sizes(self, T, fracs, sizes):
        parts = split_chronological(make_panel(T), SplitSpec(*fracs))
        assert tuple(p.n_rows for p in parts) == sizes

    def test_empty_part_is_error(self):
        with pytest.raises(PanelError):
            split_chronological(make_panel(3), SplitSpec(0.5, 0.4))

    @given(st.integers(3, 300), st.floats(0.05, 0.6), st.floats(0.05, 0.35))
    def test_concatenation_reproduces_panel(self, T, tf, vf):
        spec = SplitSpec(tf, vf)
        p = make_panel(T)
        try:
            parts = split_chronological(p, spec)
        except PanelError:
            return
        joined = concat_panels(*parts)
        np.testing.assert_array_equal(joined.X, p.X)
        np.testing.assert_array_equal(joined.y, p.y)
        np.testing.assert_array_equal(joined.timestamps, p.timestamps)


class TestStandardizer:
    def test_sample_std_convention(self):
        # denominator T - 1: the two-point sample [1, 3] has sigma sqrt(2)
        s = Standardizer.fit([1.0, 3.0])
        assert s.mu == 2.0
        assert s.sigma == pytest.approx(np.sqrt(2.0), abs=1e-15)
        np.testing.assert_allclose(s.transform([1.0, 3.0]), [-1 / np.sqrt(2), 1 / np.sqrt(2)])

    def test_constant_rejected(self):
        with pytest.raises(PanelError):
            Standardizer.fit([2.0, 2.0, 2.0])

    def test_train_moments(self):
        p = make_panel(50, seed=3)
        s = fit_standardizer(p)
        z = s.apply(p).y
        assert abs(z.mean()) < 1e-10
        assert abs(z.std(ddof=1) - 1) < 1e-10

    @given(arrays(float, (8, 3), elements=st.floats(-1e3, 1e3)),
           arrays(float, 8, elements=st.floats(-1e3, 1e3)))
    def test_roundtrip(self, X, y):
        if np.ptp(y) < 1e-3:
            return
        p = ForecastPanel(timestamps=np.arange(8), X=X, y=y)
        s = fit_standardizer(p)
        back = s.invert(s.apply(p))
        scale = max(1.0, np.abs(X).max(), np.abs(y).max())
        assert np.abs(back.X - X).max() <= 1e-12 * scale
        assert np.abs(back.y - y).max() <= 1e-12 * scale


class TestFeed:
    def test_gate(self):
        feed = TargetFeed(np.arange(5.0), lead_time=2)
        assert feed.reveal(1, now=3) == 1.0
        with pytest.raises(LeakageError):
            feed.reveal(2, now=3)

    def test_window_offsets_and_log(self):
        log = AccessLog(phase="x")
        feed = TargetFeed(np.arange(10.0), 1, recorder=log).window(4, 8)
        assert feed.reveal(0, now=1) == 4.0
        feed.hindsight()
        assert log.entries[0] == ("x", 4, 5)
        assert log.indices() == [4, 4, 5, 6, 7]

    def test_panel_arrays_read_only(self):
        p = make_panel()
        with pytest.raises(ValueError):
            p.X[0, 0] = 1.0
