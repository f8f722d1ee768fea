"""End-to-end behaviour of the penalty descent loop and its recovery."""

import numpy as np
import pytest

from hrisopt import subsolvers as sub
from hrisopt.model import Solution
from hrisopt.pebcd import (
    BlockFreeze, ConvergenceError, PebcdOptions, PebcdResult, resolve_freeze,
    run, run_multistart,
)

from conftest import make_instance


def test_resolve_freeze_pins_passive_below_threshold():
    params, channels = make_instance(seed=0)
    p_min = sub.p_min(channels, params)
    starved, _ = make_instance(seed=0, p_hris=0.5 * p_min)
    fz = resolve_freeze(starved, channels)
    np.testing.assert_array_equal(fz.gamma, np.zeros(params.n))
    # with head room the mode block stays free
    assert resolve_freeze(params, channels).gamma is None


def test_resolve_freeze_rejects_bad_patterns():
    params, channels = make_instance(seed=1)
    with pytest.raises(ValueError, match="binary"):
        resolve_freeze(params, channels, BlockFreeze(gamma=np.full(params.n, 0.5)))
    with pytest.raises(ValueError, match="binary"):
        resolve_freeze(params, channels, BlockFreeze(gamma=np.ones(params.n + 1)))
    with pytest.raises(ValueError, match="length l"):
        resolve_freeze(params, channels, BlockFreeze(antenna=np.array([0])))
    with pytest.raises(ValueError):
        resolve_freeze(params, channels, BlockFreeze(antenna=np.array([0, 0])))
    p_min = sub.p_min(channels, params)
    starved, _ = make_instance(seed=1, p_hris=0.5 * p_min)
    with pytest.raises(ValueError, match="infeasible"):
        resolve_freeze(starved, channels, BlockFreeze(gamma=np.ones(params.n)))


def test_run_returns_feasible_binary_design():
    params, channels = make_instance(seed=2)
    res = run(params, channels)
    assert isinstance(res, PebcdResult)
    assert res.converged
    assert res.iterations == len(res.trace)
    sol = res.solution
    assert 0.0 < sol.mse < 1.0
    assert set(np.unique(sol.hris.gamma)) <= {0.0, 1.0}
    assert sol.hris_power <= params.p_hris * (1 + 1e-9)
    assert np.unique(sol.antenna.selected).size == params.l
    assert np.all(sol.hris.phase_idx < params.n_phases)
    row = res.trace[-1]
    for key in ("iter", "rho", "f_mse", "j_rho", "lagrangian", "binary_gap",
                "mu", "n_active"):
        assert key in row


@pytest.mark.parametrize("seed", [3, 4, 5])
def test_penalty_epochs_descend(seed):
    params, channels = make_instance(seed=seed)
    res = run(params, channels)
    prev_rho, prev_lag = None, None
    for row in res.trace:
        if prev_rho is not None and row["rho"] == prev_rho:
            assert row["lagrangian"] <= prev_lag + 1e-6 * max(1.0, abs(prev_lag))
        prev_rho, prev_lag = row["rho"], row["lagrangian"]


def test_frozen_blocks_survive_to_the_solution():
    params, channels = make_instance(seed=6)
    gamma = np.zeros(params.n)
    gamma[::2] = 1.0
    antenna = np.array([1, 4])
    res = run(params, channels, freeze=BlockFreeze(gamma=gamma, antenna=antenna))
    np.testing.assert_array_equal(res.solution.hris.gamma, gamma)
    np.testing.assert_array_equal(np.sort(res.solution.antenna.selected),
                                  np.sort(antenna))


def test_starved_budget_forces_all_passive():
    params, channels = make_instance(seed=7)
    starved, _ = make_instance(seed=7, p_hris=0.5 * sub.p_min(channels, params))
    res = run(starved, channels)
    assert res.solution.hris.n_active == 0
    assert res.solution.hris_power == 0.0


def test_early_stop_raises_with_recovered_design():
    params, channels = make_instance(seed=8)
    with pytest.raises(ConvergenceError) as err:
        run(params, channels, PebcdOptions(max_outer=1))
    sol = err.value.solution
    assert isinstance(sol, Solution)
    assert set(np.unique(sol.hris.gamma)) <= {0.0, 1.0}
    assert sol.hris_power <= params.p_hris * (1 + 1e-9)
    assert len(err.value.trace) == 1


def test_polish_never_hurts():
    params, channels = make_instance(seed=9)
    rough = run(params, channels, PebcdOptions(polish_rounds=0))
    polished = run(params, channels, PebcdOptions(polish_rounds=64))
    assert polished.solution.mse <= rough.solution.mse + 1e-12


def test_multistart_dominates_plain_and_restricted_runs():
    params, channels = make_instance(seed=10)
    best = run_multistart(params, channels)
    plain = run(params, channels)
    assert best.solution.mse <= plain.solution.mse + 1e-12

    frozen = run(params, channels,
                 freeze=BlockFreeze(antenna=np.arange(params.l)))
    assert best.solution.mse <= frozen.solution.mse + 1e-12

    again = run_multistart(params, channels)
    assert again.solution.mse == best.solution.mse
    np.testing.assert_array_equal(again.solution.hris.phase_idx,
                                  best.solution.hris.phase_idx)
    np.testing.assert_array_equal(again.solution.antenna.selected,
                                  best.solution.antenna.selected)


def test_multistart_respects_freeze():
    params, channels = make_instance(seed=11)
    gamma = np.ones(params.n)
    res = run_multistart(params, channels, freeze=BlockFreeze(gamma=gamma))
    np.testing.assert_array_equal(res.solution.hris.gamma, gamma)
