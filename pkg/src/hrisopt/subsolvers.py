r"""Per-block closed forms and QP coefficient builders.

Every helper here restricts the (relaxed) MSE objective to one variable
block. The restrictions are exact: plugging a block value into the emitted
quadratic form reproduces the full objective up to a block-independent
constant, which is what the decomposition tests pin down.

Conventions:
  * antenna arguments accept either an AntennaSelection or a dense (l, n_r)
    row-weight matrix (the relaxed iterate);
  * theta is the applied per-element phase vector (hris.theta for discrete
    configurations, Z theta_s for the lifted relaxation);
  * emitted quadratics are Hermitian PSD; the QP layer consumes their real
    parts for real decision vectors.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .linalg import hermitian_solve, kron, vec
from .model import AntennaSelection


def _as_matrix(antenna, n_r):
    if isinstance(antenna, AntennaSelection):
        return antenna.matrix(n_r)
    a_mat = np.asarray(antenna, dtype=float)
    if a_mat.ndim != 2 or a_mat.shape[1] != n_r:
        raise ValueError(f"antenna matrix shape {a_mat.shape} inconsistent")
    return a_mat


def mmse_receiver(antenna, omega_mat, h, params):
    """Objective-minimizing receiver w = sqrt(p) Q^{-1} A h."""
    if isinstance(antenna, AntennaSelection):
        sel = antenna.selected
        q_core = omega_mat[np.ix_(sel, sel)]
        rhs = h[sel]
    else:
        a_mat = _as_matrix(antenna, omega_mat.shape[0])
        q_core = a_mat @ omega_mat @ a_mat.T
        rhs = a_mat @ h
    q = q_core + params.k_r ** 2 * np.diag(np.diag(q_core))
    q[np.diag_indices_from(q)] += params.sigma_b2_tilde
    return np.sqrt(params.p) * hermitian_solve(q, rhs)


def build_x(w, antenna, k_r, n_r):
    """Receiver-side weight matrix X = A^H (w w^H + k_r^2 diag|w|^2) A."""
    a_mat = _as_matrix(antenna, n_r)
    core = np.outer(w, w.conj())
    core[np.diag_indices_from(core)] += k_r ** 2 * np.abs(w) ** 2
    return a_mat.T @ core @ a_mat


def _hr_factor(channels, params):
    """Hadamard factor shared by the mode and phase couplings.

    This is the transpose of (p_tilde eps^2 h_r h_r^H) plus the diagonal
    phase-noise leakage term; the transpose is what makes
    diag(d)^H M diag(d) = M (hadamard) factor identities hold.
    """
    h_r = channels.h_r
    eps = params.eps_b
    return params.p_tilde * (
        eps ** 2 * np.outer(h_r.conj(), h_r)
        + (1.0 - eps ** 2) * np.diag(np.abs(h_r) ** 2)
    )


@dataclass
class IterationCores:
    """Intermediate products shared by the mode/amplification/phase builders
    for a fixed receiver and antenna block."""

    x_mat: np.ndarray     # (n_r, n_r)
    gx: np.ndarray        # (n, n) G X G^H
    gxh: np.ndarray       # (n,)  G X h_d
    gaw: np.ndarray       # (n,)  G A^H w

    @property
    def d_gxg(self):
        return np.real(np.diag(self.gx))


def iteration_cores(channels, params, w, antenna):
    a_mat = _as_matrix(antenna, channels.h_d.size)
    x_mat = build_x(w, a_mat, params.k_r, channels.h_d.size)
    g = channels.g
    return IterationCores(
        x_mat=x_mat,
        gx=g @ x_mat @ g.conj().T,
        gxh=g @ (x_mat @ channels.h_d),
        gaw=g @ (a_mat.T @ w),
    )


def _gain_coupling(weights, cores, channels, params):
    """Hadamard-form quadratic (k_mat-like) and linear (k_vec-like)
    coefficients for per-element gains `weights` applied to the RIS path."""
    k_mat = (weights.conj()[:, None] * cores.gx * weights[None, :]) * (
        _hr_factor(channels, params)
    )
    k_vec = params.eps_b * weights.conj() * channels.h_r.conj() * (
        params.p_tilde * cores.gxh - np.sqrt(params.p) * cores.gaw
    )
    return k_mat, k_vec


def build_K_k(channels, theta, params, w, antenna):
    """Quadratic/linear coefficients of the reflection-gain restriction.

    For omega = (mu-1) gamma + 1 and omega_tilde = mu gamma the full MSE is
        omega_tilde^H diag(sigma_a^2 diag(GXG^H)) omega_tilde
        + omega^H K omega + 2 Re{omega^H k} + const(w, A).
    """
    theta = np.asarray(theta, dtype=complex)
    cores = iteration_cores(channels, params, w, antenna)
    return _gain_coupling(theta, cores, channels, params)


def amp_coeffs(gamma, k_mat, k_vec, d_gxg, channels, params):
    """Scalar quadratic a mu^2 + 2 b mu (+ const) of the amplification
    restriction, plus the power-feasibility cap mu_ref.

    d_gxg is the real diagonal of G X G^H. gamma may be fractional.
    gamma = 0 is degenerate (no amplified path): mu_ref comes back inf.
    """
    gamma = np.asarray(gamma, dtype=float)
    quad_k = float(np.real(gamma @ k_mat @ gamma))
    a_quad = params.sigma_a2 * float(gamma ** 2 @ d_gxg) + quad_k
    b_lin = float(gamma @ np.real(k_mat.sum(axis=1) + k_vec)) - quad_k
    weights = params.p_tilde * np.abs(channels.h_r) ** 2 + params.sigma_a2
    consumed = float(gamma ** 2 @ weights)
    if consumed > 0.0:
        mu_ref = float(np.sqrt(params.p_hris / consumed))
    else:
        mu_ref = np.inf
    return a_quad, b_lin, mu_ref


def optimal_mu(a_quad, b_lin, mu_min, mu_ref):
    """Minimizer of a mu^2 + 2 b mu over [mu_min, mu_ref].

    Requires mu_ref >= mu_min (callers maintain joint feasibility of the
    mode vector and the current amplification).
    """
    if mu_ref < mu_min:
        # tolerate round-off from a boundary-tight mode vector
        if mu_ref < mu_min * (1.0 - 1e-9):
            raise ValueError(
                f"infeasible window: mu_ref {mu_ref} < mu_min {mu_min}"
            )
        mu_ref = mu_min
    if a_quad < 0:
        raise ValueError("quadratic coefficient must be nonnegative")
    if a_quad == 0.0:
        # linear objective: pick the cheaper endpoint
        return mu_min if b_lin >= 0 else min(mu_ref, np.finfo(float).max)
    mu_hat = -b_lin / a_quad
    return float(min(max(mu_hat, mu_min), mu_ref))


def p_min(channels, params):
    """Smallest budget at which activating any single element is feasible."""
    w_min = params.p_tilde * np.min(np.abs(channels.h_r) ** 2) + params.sigma_a2
    return float(params.mu_min ** 2 * w_min)


def aux_update(x, cap=None, prev=None):
    """Closed-form maximizer of (2x-1)^T (2u-1) over ||2u-1||^2 <= cap.

    cap defaults to len(x) (the penalty ball used by every block). For
    x = 0.5 the direction is undefined; the previous auxiliary (or the ball
    center) is kept instead.
    """
    x = np.asarray(x, dtype=float)
    if cap is None:
        cap = x.size
    xt = 2.0 * x - 1.0
    nrm = float(np.linalg.norm(xt))
    if nrm < 1e-12:
        return np.array(prev, dtype=float) if prev is not None else x.copy()
    return 0.5 + np.sqrt(cap) * (x - 0.5) / nrm


def build_mode_qp(channels, mu, k_mat, k_vec, d_gxg, params):
    """Coefficients of the mode-selection restriction at fixed mu.

    Returns (e1, e_lin, e2_diag): the MSE part is gamma^T e1 gamma +
    gamma^T e_lin + const, and the power constraint is
    gamma^T diag(e2_diag) gamma <= p_hris.
    """
    e1 = (mu - 1.0) ** 2 * k_mat + np.diag(
        mu ** 2 * params.sigma_a2 * np.asarray(d_gxg, dtype=float)
    )
    e_lin = 2.0 * (mu - 1.0) * np.real(k_mat.sum(axis=1) + k_vec)
    e2_diag = mu ** 2 * (
        params.p_tilde * np.abs(channels.h_r) ** 2 + params.sigma_a2
    )
    return e1, e_lin, e2_diag


def build_antenna_qp(w, omega_mat, h, params):
    """Coefficients of the antenna-selection restriction.

    With a = [row_1; ...; row_l] the stacked rows of the selection matrix,
    the MSE is a^T m_mat a - 2 Re{a^T m_vec} + sigma_b2_tilde ||w||^2 + 1.
    """
    core_t = np.outer(w.conj(), w)
    core_t[np.diag_indices_from(core_t)] += params.k_r ** 2 * np.abs(w) ** 2
    m_mat = kron(core_t, omega_mat)
    m_vec = np.sqrt(params.p) * vec(np.outer(h, w.conj()))
    return m_mat, m_vec


def phase_alphabet(b_bits):
    """The 2^b discrete phase values as unit-modulus complex numbers."""
    return np.exp(2j * np.pi * np.arange(2 ** b_bits) / 2.0 ** b_bits)


def lift_phase_qp(n_mat, n_vec, b_bits):
    """One-hot lifting of the phase restriction onto selector blocks.

    With theta = Z theta_s and z = vec(Z^T), theta^H n_mat theta +
    2 Re{theta^H n_vec} becomes z^T n_lift z + 2 Re{z^T n_lift_vec}.
    """
    theta_s = phase_alphabet(b_bits)
    n_lift = kron(n_mat.T, np.outer(theta_s, theta_s.conj()))
    n_lift_vec = vec(np.outer(theta_s, n_vec.conj()))
    return n_lift, n_lift_vec


def build_phase_qp(channels, omega_vec, params, w, antenna, lift=True):
    """Coefficients of the phase restriction.

    In the applied phases theta the MSE is theta^H n_mat theta +
    2 Re{theta^H n_vec} + const. The lifted selector-space pair is included
    when lift=True (dense; the matrix-free path uses the unlifted pair).
    """
    omega_vec = np.asarray(omega_vec, dtype=float)
    cores = iteration_cores(channels, params, w, antenna)
    n_mat, n_vec = _gain_coupling(
        omega_vec.astype(complex), cores, channels, params
    )
    n_mat = np.ascontiguousarray(n_mat)
    if not lift:
        return n_mat, n_vec, None, None
    n_lift, n_lift_vec = lift_phase_qp(n_mat, n_vec, params.b_bits)
    return n_mat, n_vec, n_lift, n_lift_vec


@dataclass
class SubproblemCoeffs:
    """Coefficients assembled during one outer iteration (for inspection)."""

    x_mat: Optional[np.ndarray] = None
    k_mat: Optional[np.ndarray] = None
    k_vec: Optional[np.ndarray] = None
    d_gxg: Optional[np.ndarray] = None
    a_quad: Optional[float] = None
    b_lin: Optional[float] = None
    mu_ref: Optional[float] = None
    e1: Optional[np.ndarray] = None
    e_lin: Optional[np.ndarray] = None
    e2_diag: Optional[np.ndarray] = None
    m_mat: Optional[np.ndarray] = None
    m_vec: Optional[np.ndarray] = None
    n_mat: Optional[np.ndarray] = None
    n_vec: Optional[np.ndarray] = None
