"""Shared instance builders for the test suite."""

import numpy as np

from hrisopt.channel import FadingParams, Geometry, gen_channel_set
from hrisopt.model import AntennaSelection, HrisConfig, SystemParams


def small_params(**overrides):
    base = dict(n_r=6, l=2, n=5, b_bits=2, p=0.01, k_t=0.08, k_r=0.08,
                sigma_a2=1e-11, sigma_b2=1e-11, p_hris=0.01)
    base.update(overrides)
    return SystemParams(**base)


def make_instance(seed=0, **overrides):
    """A small random system: (params, channels)."""
    params = small_params(**overrides)
    channels = gen_channel_set(Geometry(), FadingParams(), params, seed)
    return params, channels


def random_discrete_design(params, channels, rng):
    """A random feasible discrete configuration with an MMSE receiver."""
    from hrisopt import model
    from hrisopt import subsolvers as sub

    weights = params.p_tilde * np.abs(channels.h_r) ** 2 + params.sigma_a2
    gamma = (rng.random(params.n) < 0.5).astype(int)
    while gamma.sum() and params.mu_min ** 2 * gamma @ weights > params.p_hris:
        active = np.flatnonzero(gamma)
        gamma[rng.choice(active)] = 0
    if gamma.sum():
        mu_ref = float(np.sqrt(params.p_hris / (gamma @ weights)))
        mu = float(rng.uniform(params.mu_min, mu_ref))
    else:
        mu = params.mu_min
    hris = HrisConfig(
        phase_idx=rng.integers(0, params.n_phases, params.n),
        gamma=gamma, mu=mu, b_bits=params.b_bits,
    )
    sel = np.sort(rng.permutation(params.n_r)[:params.l])
    antenna = AntennaSelection(sel)
    omega_mat, h = model.omega_and_h(
        channels, gamma.astype(float), mu, hris.theta, params
    )
    w = sub.mmse_receiver(antenna, omega_mat, h, params)
    return model.Solution(
        antenna=antenna, hris=hris, w=w,
        mse=model.mse_analytic(w, antenna, channels, hris, params),
        hris_power=model.hris_power(hris, channels, params),
    )
