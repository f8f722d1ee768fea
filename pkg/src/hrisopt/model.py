r"""Uplink model: hybrid active/passive RIS, antenna selection, impairments.

A single-antenna user transmits to a BS with n_r antennas of which only l
(one per RF chain) are connected at a time. The RIS has n elements; element
i applies the discrete phase shift theta_i and is either passive (unit gain)
or active (shared amplification factor mu, at the cost of injected noise and
a power draw charged against the RIS budget p_hris). Transceiver hardware
distortion enters as multiplicative noise with relative powers k_t^2 / k_r^2,
and the applied phases wobble uniformly within one quantization bin, which
attenuates the coherent combining gain by the factor eps_b < 1.

The central quantity is the symbol-estimate MSE of a linear receiver w,

    f(w) = w^H Q w - 2 sqrt(p) Re{w^H A h} + 1,

where h is the phase-noise-averaged effective channel, Q collects the
received covariance plus distortion and thermal terms, and A selects rows.
`mse_analytic` evaluates it exactly; `simulate_empirical_mse` estimates the
same quantity from per-symbol draws and is the reference the analytic path
is validated against.

All optimizer-facing functions also accept continuous selection variables
(fractional gamma, complex sub-unit-modulus phases, fractional antenna
weights); on binary/unimodular inputs they coincide with the exact model.
"""

from dataclasses import dataclass, field

import numpy as np


def epsilon_b(b_bits):
    r"""Phase-noise attenuation factor sinc(pi / 2^b) = sin(x)/x, x = pi/2^b."""
    if b_bits < 1:
        raise ValueError("b_bits must be >= 1")
    x = np.pi / 2.0 ** b_bits
    return float(np.sin(x) / x)


@dataclass
class SystemParams:
    """Static system parameters. Powers are linear (watts), never dB."""

    n_r: int = 32            # BS antennas
    l: int = 8               # RF chains (selected antennas)
    n: int = 64              # RIS elements
    b_bits: int = 2          # phase resolution bits
    p: float = 0.01          # user transmit power
    k_t: float = 0.08        # transmit distortion factor
    k_r: float = 0.08        # receive distortion factor
    sigma_a2: float = 1e-11  # active-element noise power
    sigma_b2: float = 1e-11  # BS thermal noise power
    p_hris: float = 0.01     # RIS amplification power budget
    mu_min: float = 1.0      # minimum amplification of an active element
    # design-model switch: treat quantized phases as applied exactly
    # (no phase-noise averaging). Used by the non-robust baseline only.
    assume_exact_phases: bool = False

    def __post_init__(self):
        problems = []
        if self.n_r < 1:
            problems.append("n_r must be >= 1")
        if not 1 <= self.l <= self.n_r:
            problems.append("l must satisfy 1 <= l <= n_r")
        if self.n < 0:
            problems.append("n must be >= 0")
        if self.b_bits < 1:
            problems.append("b_bits must be >= 1")
        if self.p <= 0:
            problems.append("p must be positive")
        if self.k_t < 0 or self.k_r < 0:
            problems.append("k_t and k_r must be nonnegative")
        if self.sigma_a2 <= 0 or self.sigma_b2 <= 0:
            problems.append("noise powers must be positive")
        if self.p_hris < 0:
            problems.append("p_hris must be nonnegative")
        if self.mu_min < 1:
            problems.append("mu_min must be >= 1")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def p_tilde(self):
        """Transmit power inflated by the distortion term, p (1 + k_t^2)."""
        return self.p * (1.0 + self.k_t ** 2)

    @property
    def sigma_b2_tilde(self):
        """BS noise power inflated by receive distortion, sigma_b^2 (1 + k_r^2)."""
        return self.sigma_b2 * (1.0 + self.k_r ** 2)

    @property
    def eps_b(self):
        if self.assume_exact_phases:
            return 1.0
        return epsilon_b(self.b_bits)

    @property
    def n_phases(self):
        return 2 ** self.b_bits


@dataclass
class HrisConfig:
    """Discrete RIS configuration: phase indices, active-element mask, gain."""

    phase_idx: np.ndarray    # (n,) ints in [0, 2^b_bits)
    gamma: np.ndarray        # (n,) 0/1, 1 marks an active element
    mu: float                # shared amplification factor of active elements
    b_bits: int

    def __post_init__(self):
        self.phase_idx = np.asarray(self.phase_idx, dtype=int)
        self.gamma = np.asarray(self.gamma, dtype=int)
        if self.phase_idx.shape != self.gamma.shape:
            raise ValueError("phase_idx and gamma must have the same length")
        if self.phase_idx.min(initial=0) < 0 or (
            self.phase_idx.max(initial=0) >= 2 ** self.b_bits
        ):
            raise ValueError("phase_idx entries outside [0, 2^b_bits)")
        if not np.all((self.gamma == 0) | (self.gamma == 1)):
            raise ValueError("gamma entries must be 0 or 1")
        if self.mu < 1.0:
            raise ValueError("mu must be >= 1")

    @property
    def theta(self):
        """Unit-modulus applied phases e^{j 2 pi phase_idx / 2^b}."""
        return np.exp(2j * np.pi * self.phase_idx / 2.0 ** self.b_bits)

    @property
    def omega(self):
        """Per-element reflection gain: mu on active elements, 1 on passive."""
        return (self.mu - 1.0) * self.gamma + 1.0

    @property
    def omega_tilde(self):
        """Per-element amplified-path gain: mu on active elements, 0 elsewhere."""
        return self.mu * self.gamma.astype(float)

    @property
    def n_active(self):
        return int(self.gamma.sum())


@dataclass
class AntennaSelection:
    """Indices of the n_r antennas routed to the l RF chains (distinct)."""

    selected: np.ndarray

    def __post_init__(self):
        self.selected = np.asarray(self.selected, dtype=int)
        if self.selected.ndim != 1:
            raise ValueError("selected must be a 1-D index array")
        if len(np.unique(self.selected)) != self.selected.size:
            raise ValueError("selected antennas must be distinct")
        if self.selected.size and self.selected.min() < 0:
            raise ValueError("antenna indices must be nonnegative")

    def matrix(self, n_r):
        """Binary selection matrix with one-hot rows, shape (l, n_r)."""
        if self.selected.size and self.selected.max() >= n_r:
            raise ValueError("antenna index out of range")
        a = np.zeros((self.selected.size, n_r))
        a[np.arange(self.selected.size), self.selected] = 1.0
        return a


@dataclass
class Solution:
    """A complete design point together with its objective value."""

    antenna: AntennaSelection
    hris: HrisConfig
    w: np.ndarray
    mse: float
    hris_power: float


def omega_and_h(channels, gamma, mu, theta, params):
    """Received-signal covariance core and averaged effective channel.

    gamma may be fractional and theta any complex vector (the continuous
    relaxation); with binary gamma and unit-modulus theta this is the exact
    model. Returns (omega_mat, h) with omega_mat of shape (n_r, n_r) such
    that E[y y^H] = A omega_mat A^H + sigma_b^2 I for the selection A.
    """
    gamma = np.asarray(gamma, dtype=float)
    theta = np.asarray(theta, dtype=complex)
    omega_vec = (mu - 1.0) * gamma + 1.0
    amp_vec = mu * gamma                      # diag of B Lambda
    eps = params.eps_b

    gh = channels.g.conj().T                  # (n_r, n)
    h = channels.h_d + eps * gh @ (omega_vec * theta * channels.h_r)

    d_mid = omega_vec ** 2 * np.abs(theta) ** 2 * np.abs(channels.h_r) ** 2
    d_act = amp_vec ** 2
    omega_mat = params.p_tilde * (
        np.outer(h, h.conj()) + (1.0 - eps ** 2) * (gh * d_mid) @ gh.conj().T
    ) + params.sigma_a2 * (gh * d_act) @ gh.conj().T
    return omega_mat, h


def effective_channel(channels, hris, params):
    """Phase-noise-averaged effective channel h_d + eps_b G^H diag(omega) Phi h_r."""
    gh = channels.g.conj().T
    return channels.h_d + params.eps_b * gh @ (
        hris.omega * hris.theta * channels.h_r
    )


def build_omega(channels, hris, params):
    """Covariance core of the exact model for a discrete configuration."""
    return omega_and_h(
        channels, hris.gamma.astype(float), hris.mu, hris.theta, params
    )[0]


def _q_matrix(omega_sel, params):
    q = omega_sel + params.k_r ** 2 * np.diag(np.diag(omega_sel))
    q[np.diag_indices_from(q)] += params.sigma_b2_tilde
    return q


def mse_analytic(w, antenna, channels, hris, params):
    """Exact symbol MSE of receiver w for a discrete configuration."""
    omega_mat, h = omega_and_h(
        channels, hris.gamma.astype(float), hris.mu, hris.theta, params
    )
    sel = antenna.selected
    q = _q_matrix(omega_mat[np.ix_(sel, sel)], params)
    val = np.real(w.conj() @ q @ w) - 2.0 * np.sqrt(params.p) * np.real(
        w.conj() @ h[sel]
    ) + 1.0
    return float(val)


def mse_relaxed(w, a_mat, channels, gamma, mu, theta, params):
    """MSE of the continuous extension: fractional selections allowed.

    a_mat is the (l, n_r) row-weight matrix; with one-hot rows, binary gamma
    and unit-modulus theta this equals mse_analytic.
    """
    omega_mat, h = omega_and_h(channels, gamma, mu, theta, params)
    aoa = a_mat @ omega_mat @ a_mat.T
    q = _q_matrix(aoa, params)
    val = np.real(w.conj() @ q @ w) - 2.0 * np.sqrt(params.p) * np.real(
        w.conj() @ (a_mat @ h)
    ) + 1.0
    return float(val)


def hris_power(hris, channels, params):
    """Power drawn by the active elements: amplified signal plus own noise."""
    amp = hris.omega_tilde
    return float(
        np.sum(amp ** 2 * (params.p_tilde * np.abs(channels.h_r) ** 2
                           + params.sigma_a2))
    )


def hris_power_relaxed(gamma, mu, channels, params):
    gamma = np.asarray(gamma, dtype=float)
    weights = params.p_tilde * np.abs(channels.h_r) ** 2 + params.sigma_a2
    return float(mu ** 2 * np.sum(gamma ** 2 * weights))


_SIM_BLOCK = 1 << 14


def simulate_empirical_mse(solution, channels, params, n_samples, rng):
    """Estimate the MSE by straight per-symbol simulation.

    Draws symbols, transmit/receive distortion noise, per-element phase
    noise, active-element noise and thermal noise; applies the solution's
    receiver; returns mean |shat - s|^2. The receive-distortion variance is
    set from the analytic average received power, matching the model.
    """
    sel = solution.antenna.selected
    hris = solution.hris
    w = solution.w
    l = sel.size

    omega_mat, _ = omega_and_h(
        channels, hris.gamma.astype(float), hris.mu, hris.theta, params
    )
    # per-branch variance of the receive-distortion noise
    kr_var = params.k_r ** 2 * (
        np.real(np.diag(omega_mat[np.ix_(sel, sel)])) + params.sigma_b2
    )

    c_sig = hris.omega * hris.theta * channels.h_r
    c_act = hris.omega_tilde * hris.theta
    g_sel = channels.g[:, sel].conj()         # (n, l); x @ g_sel = (G^H x)[sel]
    h_d_sel = channels.h_d[sel]
    w_conj = w.conj()
    half_bin = np.pi / 2.0 ** params.b_bits
    sqrt_p = np.sqrt(params.p)

    def cn(shape, var):
        return np.sqrt(var / 2.0) * (
            rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        )

    err_acc = 0.0
    done = 0
    while done < n_samples:
        m = min(_SIM_BLOCK, n_samples - done)
        s = cn(m, 1.0)
        kappa_t = cn(m, params.k_t ** 2 * params.p)
        s_tilde = sqrt_p * s + kappa_t
        phase = rng.uniform(-half_bin, half_bin, size=(m, hris.gamma.size))
        e = np.exp(1j * phase)
        n_a = cn((m, hris.gamma.size), params.sigma_a2)
        n_b = cn((m, l), params.sigma_b2)
        kappa_r = cn((m, l), 1.0) * np.sqrt(kr_var)

        h_inst = h_d_sel + (e * c_sig) @ g_sel
        y = (
            h_inst * s_tilde[:, None]
            + (e * c_act * n_a) @ g_sel
            + n_b
            + kappa_r
        )
        s_hat = y @ w_conj
        err_acc += float(np.sum(np.abs(s_hat - s) ** 2))
        done += m
    return err_acc / n_samples


def phase_noise_expectation(a_mat, b_bits, n_draws, rng):
    """Monte-Carlo and analytic E[Phi_bar A Phi_bar^H] for phase noise
    uniform on one quantization bin. Returns (empirical, analytic)."""
    a_mat = np.asarray(a_mat, dtype=complex)
    n = a_mat.shape[0]
    if a_mat.shape != (n, n):
        raise ValueError("a_mat must be square")
    half_bin = np.pi / 2.0 ** b_bits

    c_sum = np.zeros((n, n), dtype=complex)
    done = 0
    while done < n_draws:
        m = min(1 << 16, n_draws - done)
        e = np.exp(1j * rng.uniform(-half_bin, half_bin, size=(m, n)))
        c_sum += e.T @ e.conj()
        done += m
    empirical = a_mat * (c_sum / n_draws)

    eps2 = epsilon_b(b_bits) ** 2
    analytic = eps2 * a_mat + (1.0 - eps2) * np.diag(np.diag(a_mat))
    return empirical, analytic
