import numpy as np
import pytest

from hrisopt import model
from hrisopt.channel import substream
from hrisopt.model import (
    AntennaSelection, HrisConfig, SystemParams, epsilon_b, mse_analytic,
    mse_relaxed, phase_noise_expectation, simulate_empirical_mse,
)
from conftest import make_instance, random_discrete_design


def test_epsilon_b_values():
    assert epsilon_b(1) == pytest.approx(2.0 / np.pi, abs=1e-12)
    assert epsilon_b(2) == pytest.approx(0.900316, abs=1e-6)
    assert 1.0 - epsilon_b(20) < 1e-11
    with pytest.raises(ValueError):
        epsilon_b(0)


def test_system_params_collects_problems():
    with pytest.raises(ValueError) as err:
        SystemParams(n_r=4, l=5, p=-1.0)
    msg = str(err.value)
    assert "l must satisfy" in msg and "p must be positive" in msg


def test_system_params_derived_quantities():
    p = SystemParams(k_t=0.1, k_r=0.2, sigma_b2=1e-10, p=0.5)
    assert p.p_tilde == pytest.approx(0.5 * 1.01)
    assert p.sigma_b2_tilde == pytest.approx(1e-10 * 1.04)
    assert p.n_phases == 4
    assert SystemParams(assume_exact_phases=True).eps_b == 1.0
    assert SystemParams(n=0).n == 0  # passive-free degenerate size is legal


def test_hris_config_properties():
    cfg = HrisConfig(phase_idx=[0, 1, 2, 3], gamma=[1, 0, 0, 1], mu=2.0, b_bits=2)
    np.testing.assert_allclose(cfg.theta, np.exp(2j * np.pi * np.arange(4) / 4))
    np.testing.assert_allclose(cfg.omega, [2.0, 1.0, 1.0, 2.0])
    np.testing.assert_allclose(cfg.omega_tilde, [2.0, 0.0, 0.0, 2.0])
    assert cfg.n_active == 2


def test_hris_config_validation():
    with pytest.raises(ValueError):
        HrisConfig(phase_idx=[0, 4], gamma=[0, 0], mu=1.0, b_bits=2)
    with pytest.raises(ValueError):
        HrisConfig(phase_idx=[0, 1], gamma=[0, 2], mu=1.0, b_bits=2)
    with pytest.raises(ValueError):
        HrisConfig(phase_idx=[0, 1], gamma=[0, 1], mu=0.5, b_bits=2)


def test_antenna_selection_matrix():
    sel = AntennaSelection([2, 0])
    mat = sel.matrix(4)
    np.testing.assert_array_equal(mat, [[0, 0, 1, 0], [1, 0, 0, 0]])
    with pytest.raises(ValueError):
        AntennaSelection([1, 1])
    with pytest.raises(ValueError):
        AntennaSelection([0, 5]).matrix(4)


def test_relaxed_mse_matches_exact_on_binary_points():
    params, channels = make_instance(seed=1)
    rng = np.random.default_rng(0)
    for _ in range(5):
        sol = random_discrete_design(params, channels, rng)
        exact = mse_analytic(sol.w, sol.antenna, channels, sol.hris, params)
        relaxed = mse_relaxed(
            sol.w, sol.antenna.matrix(params.n_r), channels,
            sol.hris.gamma.astype(float), sol.hris.mu, sol.hris.theta, params,
        )
        assert relaxed == pytest.approx(exact, rel=1e-12)


def test_hris_power_relaxed_matches_discrete():
    params, channels = make_instance(seed=2)
    rng = np.random.default_rng(1)
    sol = random_discrete_design(params, channels, rng)
    relaxed = model.hris_power_relaxed(
        sol.hris.gamma.astype(float), sol.hris.mu, channels, params
    )
    assert relaxed == pytest.approx(sol.hris_power, rel=1e-12)


def test_effective_channel_consistent_with_covariance_builder():
    params, channels = make_instance(seed=3)
    rng = np.random.default_rng(2)
    sol = random_discrete_design(params, channels, rng)
    _, h = model.omega_and_h(
        channels, sol.hris.gamma.astype(float), sol.hris.mu, sol.hris.theta,
        params,
    )
    np.testing.assert_allclose(
        h, model.effective_channel(channels, sol.hris, params), atol=1e-14
    )


def test_mse_positive_and_below_one_for_mmse_receiver():
    # with the optimal receiver the estimator can always fall back to zero
    params, channels = make_instance(seed=4)
    rng = np.random.default_rng(3)
    for _ in range(5):
        sol = random_discrete_design(params, channels, rng)
        assert 0.0 < sol.mse < 1.0


def test_empirical_mse_tracks_analytic():
    params, channels = make_instance(seed=5)
    sol = random_discrete_design(params, channels, np.random.default_rng(4))
    est = simulate_empirical_mse(
        sol, channels, params, 200_000, substream(5, "signal")
    )
    assert est == pytest.approx(sol.mse, rel=0.02)


def test_phase_noise_expectation_agrees_at_moderate_draws():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
    emp, ana = phase_noise_expectation(a, 2, 200_000, rng)
    assert emp.shape == ana.shape == (6, 6)
    np.testing.assert_allclose(emp, ana, rtol=0.02, atol=1e-3)
    with pytest.raises(ValueError):
        phase_noise_expectation(np.ones((2, 3)), 2, 10, rng)
