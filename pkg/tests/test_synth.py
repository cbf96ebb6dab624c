import numpy as np
import pytest

from arensemble import synth
from arensemble.synth import SynthConfig


def test_noiseless_sine_values():
    y = synth.gen_ground_truth(SynthConfig(noise_sd=0.0))
    # y[t - 1] holds time step t
    assert abs(y[249]) < 1e-12
    assert y[124] == pytest.approx(1.0, abs=1e-15)


def test_ground_truth_deterministic():
    a = synth.gen_ground_truth(SynthConfig(seed=7))
    b = synth.gen_ground_truth(SynthConfig(seed=7))
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, synth.gen_ground_truth(SynthConfig(seed=8)))


def test_degenerate_member_distribution():
    cfg = SynthConfig(bias_range=(0.3, 0.3), sd_range=(0.0, 0.0), m=3)
    y = synth.gen_ground_truth(cfg)
    X = synth.gen_members(cfg, y)
    np.testing.assert_allclose(X, np.repeat(y[:, None] + 0.3, 3, axis=1), rtol=0, atol=1e-15)


def test_member_bias_within_clt_bound():
    cfg = SynthConfig(m=10, seed=3)
    y = synth.gen_ground_truth(cfg)
    X, params = synth.gen_members(cfg, y, return_params=True)
    err = X - y[:, None]
    bound = 3 * params["sd"] / np.sqrt(cfg.T)
    assert np.all(np.abs(err.mean(axis=0) - params["bias"]) <= bound + 1e-12)
    assert np.all(params["sd"] >= 0)


def test_member_streams_independent_of_m():
    y = synth.gen_ground_truth(SynthConfig())
    X3 = synth.gen_members(SynthConfig(m=3), y)
    X5 = synth.gen_members(SynthConfig(m=5), y)
    np.testing.assert_array_equal(X3, X5[:, :3])


def test_zero_gaussian_drift_is_identity():
    cfg = SynthConfig(drift="gaussian", sigma_drift=0.0, s_drift=0.0)
    Xt = synth.gen_members(cfg, synth.gen_ground_truth(cfg))
    np.testing.assert_array_equal(synth.add_gaussian_drift(cfg, Xt), Xt)


def test_ramp_endpoints():
    assert synth.drift_ramp(4000, 4000) == 1.0
    assert synth.drift_ramp(0, 4000) == 0.0


def test_gaussian_drift_slope():
    # the drift part is (t / T) * (b'_k + s'_k * noise), so d * T / t has mean b'_k
    cfg = SynthConfig(drift="gaussian", sigma_drift=0.5, s_drift=0.5, seed=11)
    Xt = synth.gen_members(cfg, synth.gen_ground_truth(cfg))
    X, params = synth.add_gaussian_drift(cfg, Xt, return_params=True)
    t = synth.time_index(cfg)
    slope = ((X - Xt) * cfg.T / t[:, None]).mean(axis=0) / cfg.T
    bound = 4 * params["drift_sd"] / np.sqrt(cfg.T) / cfg.T
    assert np.all(np.abs(slope - params["drift_bias"] / cfg.T) <= bound + 1e-15)


@pytest.mark.parametrize("p", [0.0, 1.0])
def test_bernoulli_extremes(p):
    cfg = SynthConfig(drift="bernoulli", p_drift=p, seed=2)
    Xt = synth.gen_members(cfg, synth.gen_ground_truth(cfg))
    X, params = synth.add_bernoulli_drift(cfg, Xt, return_params=True)
    if p == 0.0:
        np.testing.assert_array_equal(X, Xt)
    else:
        assert params["gates"].all()
        assert np.all(X != Xt)


def test_bernoulli_gate_frequency():
    cfg = SynthConfig(drift="bernoulli", p_drift=0.5, seed=4)
    Xt = synth.gen_members(cfg, synth.gen_ground_truth(cfg))
    _, params = synth.add_bernoulli_drift(cfg, Xt, return_params=True)
    frac = params["gates"].mean(axis=0)
    assert np.all(np.abs(frac - 0.5) <= 0.03)


def test_all_zero_noise_members_equal_truth():
    cfg = SynthConfig(noise_sd=0.0, bias_range=(0, 0), sd_range=(0, 0), drift="gaussian",
                      sigma_drift=0.0, s_drift=0.0)
    p = synth.generate(cfg)
    np.testing.assert_array_equal(p.X, np.repeat(p.y[:, None], cfg.m, axis=1))


def test_generate_shape_and_determinism():
    cfg = SynthConfig(T=300, m=4, drift="gaussian", seed=5)
    a, b = synth.generate(cfg), synth.generate(cfg)
    assert a.X.shape == (300, 4)
    assert a.to_csv() == b.to_csv()
    np.testing.assert_array_equal(a.timestamps, np.arange(1, 301))


@pytest.mark.parametrize("bad", [
    dict(T=0), dict(bias_range=(1, 0)), dict(drift="linear"), dict(p_drift=1.5),
    dict(sigma_drift=-1.0), dict(seed=-1),
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        SynthConfig(**bad)
