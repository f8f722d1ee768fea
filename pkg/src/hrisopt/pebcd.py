r"""Penalty-based exact block coordinate descent over the relaxed design.

The discrete design (active/passive mode vector, antenna selection, phase
selectors) is relaxed onto its convex hull, and binariness is promoted by a
growing penalty -rho (2x-1)^T (2y-1) against auxiliary vectors y living on
balls that touch the hypercube only at its vertices. Each outer iteration
updates, in order: the receiver (closed form), the shared amplification
(closed form on its feasible window), the auxiliaries (closed form), then
the three selection blocks by convex QP, each warm-started from the current
iterate so the penalized objective can only go down within a penalty epoch.

Once the iterate is (numerically) binary and the objective stalls, the
state is rounded and the amplification/receiver pair is refit to the
discrete configuration.
"""

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import model
from . import subsolvers as sub
from .linalg import SingularMatrixError, kron, vec
from .model import AntennaSelection, HrisConfig, Solution
from .qp import (
    AssignmentPolytope,
    BlockSimplex,
    BoxBall,
    QpProblem,
    solve_qp,
)


@dataclass
class PebcdOptions:
    rho0: Optional[float] = None   # None: 1e-4 x the initial objective value
    rho_growth: float = 5.0
    t_penalty: int = 10            # iterations between penalty increases
    rho_max: float = 1e10          # growth cap; beyond this float64 suffers
    snap_block_tol: float = 1e-3   # antenna/phase gap arming the vertex snap
    mu_hold_iters: int = 10        # amplification held while blocks adapt
    eps_outer: float = 1e-5        # relative objective stall tolerance
    max_outer: int = 500
    binary_tol: float = 1e-4       # gap required to declare convergence
    qp_tol: float = 1e-7
    qp_max_iter: int = 100
    dense_lift_limit: int = 4096   # phase QP goes matrix-free above this
    polish_rounds: int = 64        # single-move improvement cap in recovery
    seed: int = 0
    solver: Callable = solve_qp    # seam for cross-checking against others


@dataclass
class BlockFreeze:
    """Blocks pinned by a benchmark scheme (None means optimized)."""

    gamma: Optional[np.ndarray] = None     # binary mode pattern
    antenna: Optional[np.ndarray] = None   # selected antenna indices


@dataclass
class RelaxedState:
    w: np.ndarray          # (l,) receiver
    mu: float
    gamma: np.ndarray      # (n,) in [0, 1]
    a: np.ndarray          # (l * n_r,) stacked selection-matrix rows
    z: np.ndarray          # (n * 2^b,) stacked phase selectors
    u: np.ndarray          # auxiliaries, same shapes as gamma / a / z
    v: np.ndarray
    q: np.ndarray
    rho: float


@dataclass
class PebcdResult:
    solution: Solution
    trace: list
    iterations: int
    converged: bool


class ConvergenceError(RuntimeError):
    """Outer loop hit max_outer far from a binary point. Carries the
    best-effort rounded solution and the full trace."""

    def __init__(self, message, solution, trace):
        super().__init__(message)
        self.solution = solution
        self.trace = trace


class _LiftedPhaseOp:
    """Matvec for Re(n_mat^T kron theta_s theta_s^H) without forming it."""

    def __init__(self, n_mat, theta_s):
        self.n_mat = n_mat
        self.theta_s = theta_s

    def matvec(self, x):
        blocks = x.reshape(self.n_mat.shape[0], self.theta_s.size)
        coef = blocks @ self.theta_s.conj()
        mixed = self.n_mat.T @ coef
        return np.real(np.outer(mixed, self.theta_s)).reshape(-1)

    def lipschitz_bound(self):
        lam = float(np.linalg.eigvalsh(self.n_mat).max())
        return max(lam, 0.0) * self.theta_s.size


def _theta_of(z, n, theta_s):
    return z.reshape(n, theta_s.size) @ theta_s


def _power_weights(channels, params):
    return params.p_tilde * np.abs(channels.h_r) ** 2 + params.sigma_a2


def resolve_freeze(params, channels, freeze=None):
    """Apply the passive-only decision rule and validate frozen patterns.

    Budgets below the single-element activation threshold pin the mode
    vector to all-passive up front; a frozen pattern whose mu_min power
    already exceeds the budget is rejected.
    """
    freeze = freeze or BlockFreeze()
    gamma = freeze.gamma
    if gamma is None:
        if params.n and params.p_hris < sub.p_min(channels, params):
            gamma = np.zeros(params.n)
    else:
        gamma = np.asarray(gamma, dtype=float)
        if gamma.size != params.n or not np.all((gamma == 0) | (gamma == 1)):
            raise ValueError("frozen gamma must be a binary vector of size n")
        used = params.mu_min ** 2 * float(
            gamma @ _power_weights(channels, params)
        )
        if gamma.sum() and used > params.p_hris:
            raise ValueError(
                "frozen active pattern infeasible: needs "
                f"{used:.3e} W at mu_min, budget {params.p_hris:.3e} W"
            )
    antenna = freeze.antenna
    if antenna is not None:
        antenna = np.asarray(antenna, dtype=int)
        AntennaSelection(antenna).matrix(params.n_r)  # validates
        if antenna.size != params.l:
            raise ValueError("frozen antenna pattern must have length l")
    return BlockFreeze(gamma=gamma, antenna=antenna)


def _alignment_start(params, channels):
    """Grid phases cophasing the reflected path with the strongest direct
    antenna, plus an antenna ranking under the resulting passive channel."""
    width = params.n_phases
    m_star = int(np.argmax(np.abs(channels.h_d)))
    ref = channels.h_d[m_star]
    if abs(ref) == 0.0:
        ref = 1.0
    prod = channels.g[:, m_star].conj() * channels.h_r
    desired = np.angle(ref) - np.angle(prod)
    phase_idx = np.mod(
        np.rint(desired * width / (2.0 * np.pi)).astype(int), width
    )
    theta0 = np.exp(2j * np.pi * phase_idx / width)
    h_pass = channels.h_d + params.eps_b * (
        channels.g.conj().T @ (theta0 * channels.h_r)
    )
    order = np.argsort(-np.abs(h_pass), kind="stable")
    return phase_idx, order


def init_state(params, channels, options=None, freeze=None):
    """Deterministic warm start honoring any frozen blocks.

    Uniform relaxed selectors are useless here: the phase blocks average
    to a zero reflection coefficient (no gradient into the active mode)
    and identical antenna rows sit on a permutation-symmetric saddle the
    penalty cannot break. Instead the phases start half-committed to a
    cophasing pattern and the antenna rows half-committed to the strongest
    antennas under it.
    """
    options = options or PebcdOptions()
    freeze = freeze or BlockFreeze()
    n, l, n_r = params.n, params.l, params.n_r
    width = params.n_phases
    phase_idx, order = _alignment_start(params, channels)

    if freeze.gamma is not None:
        gamma = np.asarray(freeze.gamma, dtype=float)
    else:
        gamma = np.full(n, 0.5)
        used = params.mu_min ** 2 * float(
            gamma ** 2 @ _power_weights(channels, params)
        )
        if used > params.p_hris:
            gamma *= np.sqrt(params.p_hris / used) * (1.0 - 1e-9)
    u = sub.aux_update(gamma)

    if freeze.antenna is not None:
        a = AntennaSelection(freeze.antenna).matrix(n_r).reshape(-1)
    else:
        a_mat0 = np.full((l, n_r), 0.5 / n_r)
        a_mat0[np.arange(l), order[:l]] += 0.5
        a = a_mat0.reshape(-1)
    v = sub.aux_update(a)

    z_mat0 = np.full((n, width), 0.5 / width)
    z_mat0[np.arange(n), phase_idx] += 0.5
    z = z_mat0.reshape(-1)
    q = sub.aux_update(z)

    theta_s = sub.phase_alphabet(params.b_bits)
    theta = _theta_of(z, n, theta_s)
    # start at a mid-range gain: judging amplification at mu_min before the
    # other blocks have adapted writes off the active mode instantly, and
    # an emptied mode vector never comes back
    mu = params.mu_min
    if freeze.gamma is None and np.any(gamma > 0.0):
        mass = float(gamma ** 2 @ _power_weights(channels, params))
        mu = max(params.mu_min, 0.5 * np.sqrt(params.p_hris / mass))
    omega_mat, h = model.omega_and_h(channels, gamma, mu, theta, params)
    w = sub.mmse_receiver(a.reshape(l, n_r), omega_mat, h, params)

    if options.rho0 is not None:
        rho = float(options.rho0)
    else:
        f0 = model.mse_relaxed(
            w, a.reshape(l, n_r), channels, gamma, mu, theta, params
        )
        rho = 1e-4 * max(f0, 1e-12)
    return RelaxedState(w=w, mu=mu, gamma=gamma, a=a, z=z, u=u, v=v, q=q,
                        rho=rho)


def objective_parts(state, channels, params):
    """(lagrangian, mse part, penalty part) at the current relaxed state."""
    n, l, n_r = params.n, params.l, params.n_r
    theta_s = sub.phase_alphabet(params.b_bits)
    theta = _theta_of(state.z, n, theta_s)
    f_val = model.mse_relaxed(
        state.w, state.a.reshape(l, n_r), channels,
        state.gamma, state.mu, theta, params,
    )

    def deficit(x, y):
        return x.size - float((2.0 * x - 1.0) @ (2.0 * y - 1.0))

    j_val = state.rho * (
        deficit(state.gamma, state.u)
        + deficit(state.a, state.v)
        + deficit(state.z, state.q)
    )
    return f_val + j_val, f_val, j_val


def lagrangian(state, channels, params):
    """Penalized objective at the current relaxed state."""
    return objective_parts(state, channels, params)[0]


def block_gaps(state):
    """Per-block largest distance of a selection entry from {0, 1}."""
    return tuple(
        float(np.max(np.minimum(x, 1.0 - x), initial=0.0))
        for x in (state.gamma, state.a, state.z)
    )


def binary_gap(state):
    """Largest distance of any selection entry from {0, 1}."""
    return max(block_gaps(state))


def pebcd_iteration(state, channels, params, options, freeze=None,
                    hold_mu=False):
    """One outer pass: receiver, amplification, auxiliaries, three QPs.

    With hold_mu the amplification keeps its current value (all other
    blocks still update); descent is unaffected since skipping one block's
    minimization never increases the objective.
    """
    freeze = freeze or BlockFreeze()
    n, l, n_r = params.n, params.l, params.n_r
    theta_s = sub.phase_alphabet(params.b_bits)
    rho = state.rho
    coeffs = sub.SubproblemCoeffs()

    gamma = state.gamma
    mu = state.mu
    a_flat = state.a
    z = state.z
    a_mat = a_flat.reshape(l, n_r)
    theta = _theta_of(z, n, theta_s)
    gamma_frozen = freeze.gamma is not None
    antenna_frozen = freeze.antenna is not None

    # receiver
    omega_mat, h = model.omega_and_h(channels, gamma, mu, theta, params)
    w = sub.mmse_receiver(a_mat, omega_mat, h, params)

    cores = sub.iteration_cores(channels, params, w, a_mat)
    k_mat, k_vec = sub._gain_coupling(theta, cores, channels, params)
    coeffs.x_mat, coeffs.k_mat, coeffs.k_vec = cores.x_mat, k_mat, k_vec
    coeffs.d_gxg = cores.d_gxg

    # shared amplification on its feasible window
    if np.any(gamma > 0.0) and not hold_mu:
        a_q, b_l, mu_ref = sub.amp_coeffs(
            gamma, k_mat, k_vec, cores.d_gxg, channels, params
        )
        # vanishing relaxed mode mass sends mu_ref sky-high; the objective
        # only depends on mu*gamma there, so capping keeps e2 finite without
        # breaking descent (the mu-quadratic is convex)
        mu = min(sub.optimal_mu(a_q, b_l, params.mu_min, mu_ref), 1e8)
        coeffs.a_quad, coeffs.b_lin, coeffs.mu_ref = a_q, b_l, mu_ref

    # auxiliaries track the selection blocks
    u = state.u if gamma_frozen else sub.aux_update(gamma, prev=state.u)
    v = state.v if antenna_frozen else sub.aux_update(a_flat, prev=state.v)
    q = sub.aux_update(z, prev=state.q)

    # mode selection
    if not gamma_frozen:
        e1, e_lin, e2_diag = sub.build_mode_qp(
            channels, mu, k_mat, k_vec, cores.d_gxg, params
        )
        coeffs.e1, coeffs.e_lin, coeffs.e2_diag = e1, e_lin, e2_diag
        prob = QpProblem(
            hessian=np.ascontiguousarray(np.real(e1)),
            linear=e_lin - 2.0 * rho * (2.0 * u - 1.0),
            constraint=BoxBall(e2_diag, params.p_hris),
        )
        gamma = options.solver(
            prob, gamma, tol=options.qp_tol, max_iter=options.qp_max_iter
        ).x

    # antenna selection
    if not antenna_frozen:
        omega_mat, h = model.omega_and_h(channels, gamma, mu, theta, params)
        m_mat, m_vec = sub.build_antenna_qp(w, omega_mat, h, params)
        coeffs.m_mat, coeffs.m_vec = m_mat, m_vec
        prob = QpProblem(
            hessian=np.ascontiguousarray(np.real(m_mat)),
            linear=-2.0 * np.real(m_vec) - 2.0 * rho * (2.0 * v - 1.0),
            constraint=AssignmentPolytope(l, n_r),
        )
        a_flat = options.solver(
            prob, a_flat, tol=options.qp_tol, max_iter=options.qp_max_iter
        ).x
        a_mat = a_flat.reshape(l, n_r)
        cores = sub.iteration_cores(channels, params, w, a_mat)

    # phase selection
    omega_vec = (mu - 1.0) * gamma + 1.0
    n_mat, n_vec = sub._gain_coupling(
        omega_vec.astype(complex), cores, channels, params
    )
    n_mat = np.ascontiguousarray(n_mat)
    coeffs.n_mat, coeffs.n_vec = n_mat, n_vec
    if z.size <= options.dense_lift_limit:
        n_lift, n_lift_vec = sub.lift_phase_qp(n_mat, n_vec, params.b_bits)
        hess = np.ascontiguousarray(np.real(n_lift))
    else:
        hess = _LiftedPhaseOp(n_mat, theta_s)
        n_lift_vec = vec(np.outer(theta_s, n_vec.conj()))
    prob = QpProblem(
        hessian=hess,
        linear=2.0 * np.real(n_lift_vec) - 2.0 * rho * (2.0 * q - 1.0),
        constraint=BlockSimplex(n, theta_s.size),
    )
    z = options.solver(
        prob, z, tol=options.qp_tol, max_iter=options.qp_max_iter
    ).x

    new_state = RelaxedState(
        w=w, mu=mu, gamma=gamma, a=a_flat, z=z, u=u, v=v, q=q, rho=rho
    )
    return new_state, coeffs


def _round_blocks(state, channels, params, freeze):
    """Nearest discrete design: phase argmax per element, mode threshold
    at 0.5 (power-repaired by dropping the least-committed actives),
    antennas by maximum relaxed assignment mass over distinct selections,
    then the amplification refit to the rounded pattern."""
    n, l, n_r = params.n, params.l, params.n_r
    width = params.n_phases

    phase_idx = np.argmax(state.z.reshape(n, width), axis=1)
    theta_bin = np.exp(2j * np.pi * phase_idx / width)

    if freeze.antenna is not None:
        sel = np.asarray(freeze.antenna, dtype=int)
    else:
        rows, cols = linear_sum_assignment(-state.a.reshape(l, n_r))
        sel = cols[np.argsort(rows)]

    if freeze.gamma is not None:
        gamma_bin = np.asarray(freeze.gamma, dtype=int)
    else:
        gamma_bin = (state.gamma >= 0.5).astype(int)
    weights = _power_weights(channels, params)
    while gamma_bin.sum():
        mu_ref = np.sqrt(params.p_hris / float(gamma_bin @ weights))
        if mu_ref >= params.mu_min * (1.0 - 1e-12):
            break
        active = np.flatnonzero(gamma_bin)
        gamma_bin[active[np.argmin(state.gamma[active])]] = 0

    if gamma_bin.sum() == 0:
        mu = 1.0
    else:
        a_mat = AntennaSelection(sel).matrix(n_r)
        cores = sub.iteration_cores(channels, params, state.w, a_mat)
        k_mat, k_vec = sub._gain_coupling(theta_bin, cores, channels, params)
        a_q, b_l, mu_ref = sub.amp_coeffs(
            gamma_bin.astype(float), k_mat, k_vec, cores.d_gxg,
            channels, params,
        )
        mu = sub.optimal_mu(a_q, b_l, params.mu_min, mu_ref)
    return gamma_bin, sel, phase_idx, theta_bin, mu


def _fit_design(channels, params, antenna, gamma, theta, mu0, iters=30):
    """Alternate exact receiver and gain refits on one discrete design.

    Returns (mse, mu, w). gamma must be power-feasible at mu_min; mu0 only
    seeds the alternation.
    """
    gamma = np.asarray(gamma, dtype=float)
    a_mat = antenna.matrix(params.n_r)
    mass = float(gamma @ _power_weights(channels, params))
    if mass > 0.0:
        mu_ref = float(np.sqrt(params.p_hris / mass))
        mu = min(max(mu0, params.mu_min), max(mu_ref, params.mu_min))
    else:
        mu = 1.0
    f_prev = None
    w = None
    for _ in range(iters):
        omega_mat, h = model.omega_and_h(channels, gamma, mu, theta, params)
        w = sub.mmse_receiver(antenna, omega_mat, h, params)
        if mass > 0.0:
            cores = sub.iteration_cores(channels, params, w, antenna)
            k_mat, k_vec = sub._gain_coupling(theta, cores, channels, params)
            a_q, b_l, mu_ref = sub.amp_coeffs(
                gamma, k_mat, k_vec, cores.d_gxg, channels, params
            )
            mu = sub.optimal_mu(a_q, b_l, params.mu_min, mu_ref)
        f = model.mse_relaxed(w, a_mat, channels, gamma, mu, theta, params)
        if f_prev is not None and f_prev - f <= 1e-12 * max(1.0, abs(f)):
            f_prev = min(f_prev, f)
            break
        f_prev = f
        if mass <= 0.0:
            break                   # no gain to refit; w is already optimal
    return float(f_prev), float(mu), w


def _phase_shortlist(c_i, width):
    """Grid indices worth trying for one element's phase, given the rest.

    With the others fixed, f(theta_i) = 2 Re{conj(theta_i) c_i} + const, so
    the continuous optimum points opposite c_i; its bracketing grid values
    cover the discrete candidates without scanning the whole alphabet.
    """
    if abs(c_i) == 0.0:
        return []
    base = (np.angle(c_i) + np.pi) * width / (2.0 * np.pi)
    lo = int(np.floor(base))
    return list({lo % width, (lo + 1) % width, (lo + 2) % width})


def _neighborhood_polish(gamma_bin, sel, phase_idx, mu, channels, params,
                         freeze, rounds):
    """Local search over single discrete moves, driven by exact deltas.

    Moves: toggle one element's mode (with the shared gain re-optimized
    inside the prediction), retune one element's phase, swap one selected
    antenna for a spare, rotate all phases by a common grid step, and jump
    to the all-active / all-passive mode patterns. Each round prices the
    whole neighborhood at the current receiver in closed form, then
    verifies the most promising few with exact gain/receiver refits and
    takes the first verified improvement, so the walk is monotone in the
    true objective.

    The pass exists because the relaxation's reflection gain is linear in
    the mode weight while its power cost is quadratic, which routinely
    parks the rounded design several moves short of the discrete optimum
    (typically with too few active elements at too high a gain). The two
    non-local move families cover traps single moves cannot leave: a phase
    profile coherently rotated against the direct link, and mode patterns
    a cluster of flips away.
    """
    n, l, n_r = params.n, params.l, params.n_r
    width = params.n_phases
    theta_s = sub.phase_alphabet(params.b_bits)
    weights = _power_weights(channels, params)
    mu_min = params.mu_min

    def refit(g, s, p, mu_seed):
        try:
            return _fit_design(channels, params, AntennaSelection(s),
                               g.astype(float), theta_s[p], mu_seed)
        except (SingularMatrixError, np.linalg.LinAlgError, ValueError):
            return np.inf, mu_seed, None

    f_cur, mu_cur, w_cur = refit(gamma_bin, sel, phase_idx, mu)
    if w_cur is None:
        return gamma_bin, sel, phase_idx, mu_cur

    for _ in range(rounds):
        antenna = AntennaSelection(sel)
        theta = theta_s[phase_idx]
        gamma_f = gamma_bin.astype(float)
        cand = []

        if freeze.gamma is None and n:
            # mode flips: for fixed receiver the objective is a quadratic
            # in mu whose coefficients move by one row of the coupling
            # matrix per flip, so each flip is priced with its own optimal
            # gain in O(1)
            cores = sub.iteration_cores(channels, params, w_cur, antenna)
            k_mat, k_vec = sub._gain_coupling(theta, cores, channels, params)
            kr = np.real(k_mat)
            r1k = np.real(k_mat.sum(axis=1) + k_vec)
            base_c = float(np.sum(kr)) + 2.0 * float(np.sum(np.real(k_vec)))
            kg = kr @ gamma_f
            d = cores.d_gxg
            qkk = float(gamma_f @ kg)
            lin = float(gamma_f @ r1k)
            a0 = params.sigma_a2 * float(gamma_f @ d) + qkk
            b0 = lin - qkk
            c0 = base_c - 2.0 * lin + qkk
            c_off = f_cur - (a0 * mu_cur ** 2 + 2.0 * b0 * mu_cur + c0)
            sgn = 1.0 - 2.0 * gamma_f
            qkk_f = qkk + 2.0 * sgn * kg + np.diag(kr)
            lin_f = lin + sgn * r1k
            dm_f = float(gamma_f @ d) + sgn * d
            mass_f = float(gamma_f @ weights) + sgn * weights
            a_f = np.maximum(params.sigma_a2 * dm_f + qkk_f, 0.0)
            b_f = lin_f - qkk_f
            c_f = base_c - 2.0 * lin_f + qkk_f
            with np.errstate(divide="ignore", invalid="ignore"):
                mu_ref_f = np.where(
                    mass_f > 0.0,
                    np.sqrt(params.p_hris / np.where(mass_f > 0, mass_f, 1.0)),
                    mu_min,
                )
                mu_hat = np.where(
                    a_f > 0.0,
                    -b_f / np.where(a_f > 0.0, a_f, 1.0),
                    np.where(b_f >= 0.0, mu_min, mu_ref_f),
                )
            mu_f = np.clip(mu_hat, mu_min, np.maximum(mu_ref_f, mu_min))
            mu_f = np.where(mass_f > 0.0, mu_f, 1.0)
            f_f = a_f * mu_f ** 2 + 2.0 * b_f * mu_f + c_f + c_off
            feasible = (mass_f * mu_min ** 2
                        <= params.p_hris * (1.0 + 1e-9)) | (mass_f <= 0.0)
            for i in range(n):
                if feasible[i]:
                    cand.append((float(f_f[i]), "mode", (i, float(mu_f[i]))))

            # whole-pattern jumps, priced with the same quadratic-in-mu form
            for val, qkk_t, lin_t, dm_t, mass_t in (
                (0, 0.0, 0.0, 0.0, 0.0),
                (1, float(np.sum(kr)), float(np.sum(r1k)),
                 float(np.sum(d)), float(np.sum(weights))),
            ):
                if np.all(gamma_bin == val):
                    continue
                if mass_t > 0.0 and mass_t * mu_min ** 2 > params.p_hris * (
                    1.0 + 1e-9
                ):
                    continue
                a_t = max(params.sigma_a2 * dm_t + qkk_t, 0.0)
                b_t = lin_t - qkk_t
                c_t = base_c - 2.0 * lin_t + qkk_t
                if mass_t <= 0.0:
                    mu_t = 1.0
                else:
                    mu_ref_t = np.sqrt(params.p_hris / mass_t)
                    if a_t > 0.0:
                        mu_hat_t = -b_t / a_t
                    else:
                        mu_hat_t = mu_min if b_t >= 0.0 else mu_ref_t
                    mu_t = float(np.clip(mu_hat_t, mu_min,
                                         max(mu_ref_t, mu_min)))
                f_t = a_t * mu_t ** 2 + 2.0 * b_t * mu_t + c_t + c_off
                cand.append((float(f_t), "modeset", (val, mu_t)))

        if n:
            # phase moves: exact delta at fixed receiver and gain
            omega_vec = (mu_cur - 1.0) * gamma_f + 1.0
            n_mat, n_vec, _, _ = sub.build_phase_qp(
                channels, omega_vec, params, w_cur, antenna, lift=False
            )
            c_vec = n_mat @ theta - np.diag(n_mat) * theta + n_vec
            for i in range(n):
                if width <= 4:
                    vals = range(width)
                else:
                    vals = _phase_shortlist(c_vec[i], width)
                for v in vals:
                    if v == phase_idx[i]:
                        continue
                    delta = 2.0 * float(
                        np.real(np.conj(theta_s[v] - theta[i]) * c_vec[i])
                    )
                    cand.append((f_cur + delta, "phase", (i, int(v))))

            # common rotation of every phase: the quadratic term is
            # invariant, only the coupling to the direct link moves
            t_lin = complex(theta.conj() @ n_vec)
            if width <= 4:
                rots = range(1, width)
            else:
                rots = [r for r in _phase_shortlist(t_lin, width) if r]
            for r in rots:
                delta = 2.0 * float(np.real(
                    (np.conj(theta_s[r]) - 1.0) * t_lin
                ))
                cand.append((f_cur + delta, "rotate", (int(r),)))

        if freeze.antenna is None and l < n_r:
            # antenna swaps: exact delta at fixed receiver, one selected
            # row re-pointed to a spare antenna
            omega_mat, h_eff = model.omega_and_h(
                channels, gamma_f, mu_cur, theta, params
            )
            t_vec = omega_mat[:, sel] @ w_cur
            diag_o = np.real(np.diag(omega_mat))
            spare = np.setdiff1d(np.arange(n_r), sel)
            sqrt_p = np.sqrt(params.p)
            for j in range(l):
                s_j = int(sel[j])
                w_j = w_cur[j]
                own = t_vec[s_j] - omega_mat[s_j, s_j] * w_j
                for r in spare:
                    cross = t_vec[r] - omega_mat[r, s_j] * w_j
                    delta = (1.0 + params.k_r ** 2) * abs(w_j) ** 2 * (
                        diag_o[r] - diag_o[s_j]
                    )
                    delta += 2.0 * np.real(np.conj(w_j) * (cross - own))
                    delta -= 2.0 * sqrt_p * np.real(
                        np.conj(w_j) * (h_eff[r] - h_eff[s_j])
                    )
                    cand.append((f_cur + float(delta), "antenna",
                                 (j, int(r))))

        cand.sort(key=lambda c: c[0])
        # verify everything on small neighborhoods; on large ones the top
        # few suffice (predictions are exact at the frozen receiver, and a
        # refit only improves on them)
        probe_limit = len(cand) if len(cand) <= 32 else 12
        took = False
        for f_pred, kind, payload in cand[:probe_limit]:
            g2, s2, p2 = gamma_bin, sel, phase_idx
            mu_seed = mu_cur
            if kind == "mode":
                i, mu_seed = payload
                g2 = gamma_bin.copy()
                g2[i] = 1 - g2[i]
            elif kind == "modeset":
                val, mu_seed = payload
                g2 = np.full_like(gamma_bin, val)
            elif kind == "phase":
                i, v = payload
                p2 = phase_idx.copy()
                p2[i] = v
            elif kind == "rotate":
                (r,) = payload
                p2 = (phase_idx + r) % width
            else:
                j, r = payload
                s2 = sel.copy()
                s2[j] = r
            f2, mu2, w2 = refit(g2, s2, p2, mu_seed)
            if f2 < f_cur - 1e-12 * max(1.0, abs(f_cur)):
                gamma_bin, sel, phase_idx = g2, s2, p2
                f_cur, mu_cur, w_cur = f2, mu2, w2
                took = True
                break
        if not took:
            break
    return gamma_bin, sel, phase_idx, mu_cur


def _try_snap(state, channels, params, freeze, current_lag):
    """Accept-only jump to the nearest discrete vertex.

    The penalty steers each relaxed block toward its closest vertex, but a
    mode entry pinned on the power ball can sit fractional forever (the
    budget blocks the last step and the amplification refuses to yield).
    Evaluating the rounded design with a refit amplification and receiver,
    and taking it whenever the penalized objective does not increase,
    escapes that trap without ever breaking descent: the deficit term at a
    pinned point scales with rho while the rounding cost stays fixed.
    """
    n, l, n_r = params.n, params.l, params.n_r
    width = params.n_phases
    try:
        gamma_bin, sel, phase_idx, theta_bin, mu = _round_blocks(
            state, channels, params, freeze
        )
        gamma_f = gamma_bin.astype(float)
        a_mat = AntennaSelection(sel).matrix(n_r)
        omega_mat, h = model.omega_and_h(
            channels, gamma_f, mu, theta_bin, params
        )
        w = sub.mmse_receiver(a_mat, omega_mat, h, params)
        f_cand = model.mse_relaxed(
            w, a_mat, channels, gamma_f, mu, theta_bin, params
        )
    except np.linalg.LinAlgError:
        return None
    if not np.isfinite(f_cand) or f_cand > current_lag:
        return None
    z_bin = np.zeros((n, width))
    z_bin[np.arange(n), phase_idx] = 1.0
    a_flat = a_mat.reshape(-1).astype(float)
    # binary blocks with matched auxiliaries carry zero penalty
    return RelaxedState(
        w=w, mu=mu, gamma=gamma_f, a=a_flat, z=z_bin.reshape(-1),
        u=gamma_f.copy(), v=a_flat.copy(), q=z_bin.reshape(-1).copy(),
        rho=state.rho,
    ), f_cand


def round_and_recover(state, channels, params, freeze=None, polish_rounds=0):
    """Project the relaxed state onto a discrete design and refit mu, w.

    Phases take the per-element selector argmax; elements with mode weight
    >= 0.5 become active (ties activate); antennas maximize the relaxed
    assignment mass over distinct selections. If the rounded active set
    cannot afford mu_min, the least-committed actives are dropped until it
    can. The amplification is then re-optimized for the rounded pattern and
    the receiver refit. polish_rounds > 0 follows up with up to that many
    verified single-move improvements on the discrete design.
    """
    freeze = freeze or BlockFreeze()
    gamma_bin, sel, phase_idx, _, mu = _round_blocks(
        state, channels, params, freeze
    )
    if polish_rounds > 0:
        gamma_bin, sel, phase_idx, mu = _neighborhood_polish(
            gamma_bin, sel, phase_idx, mu, channels, params, freeze,
            polish_rounds,
        )
    return _assemble(gamma_bin, sel, phase_idx, mu, channels, params)


def _assemble(gamma_bin, sel, phase_idx, mu, channels, params):
    """Solution for a discrete design, with its MMSE receiver attached."""
    antenna = AntennaSelection(sel)
    hris = HrisConfig(
        phase_idx=phase_idx, gamma=gamma_bin, mu=mu, b_bits=params.b_bits
    )
    omega_mat, h = model.omega_and_h(
        channels, hris.gamma.astype(float), mu, hris.theta, params
    )
    w = sub.mmse_receiver(antenna, omega_mat, h, params)
    mse = model.mse_analytic(w, antenna, channels, hris, params)
    power = model.hris_power(hris, channels, params)
    return Solution(antenna=antenna, hris=hris, w=w, mse=mse,
                    hris_power=power)


def run(params, channels, options=None, freeze=None):
    """Full optimization: relaxed descent, penalty escalation, recovery."""
    options = options or PebcdOptions()
    freeze = resolve_freeze(params, channels, freeze)
    state = init_state(params, channels, options, freeze)

    trace = []
    l_prev = None
    gap = np.inf
    converged = False
    for it in range(1, options.max_outer + 1):
        hold = freeze.gamma is None and it <= options.mu_hold_iters
        state, _ = pebcd_iteration(
            state, channels, params, options, freeze, hold_mu=hold
        )
        lag, f_val, j_val = objective_parts(state, channels, params)
        gap_g, gap_a, gap_z = block_gaps(state)
        gap = max(gap_g, gap_a, gap_z)
        # endgame only: once the antenna and phase blocks have committed,
        # any remaining fractional mode entries are power-ball pinned and
        # no amount of penalty growth will finish them off. Snapping
        # mid-exploration instead would lock in a half-formed design.
        armed = (
            max(gap_a, gap_z) <= options.snap_block_tol
            or state.rho >= options.rho_max
        )
        if armed and gap > 0.0:
            snapped = _try_snap(state, channels, params, freeze, lag)
            if snapped is not None:
                state, f_val = snapped
                lag, j_val = f_val, 0.0
                gap = 0.0
        trace.append({
            "iter": it,
            "rho": state.rho,
            "f_mse": f_val,
            "j_rho": j_val,
            "lagrangian": lag,
            "binary_gap": gap,
            "mu": state.mu,
            "n_active": int(np.sum(state.gamma >= 0.5)),
        })
        if (
            l_prev is not None
            and abs(lag - l_prev) <= options.eps_outer * max(1.0, abs(lag))
            and gap <= options.binary_tol
        ):
            converged = True
            break
        l_prev = lag
        if it % options.t_penalty == 0:
            state.rho = min(state.rho * options.rho_growth, options.rho_max)

    solution = round_and_recover(
        state, channels, params, freeze, options.polish_rounds
    )
    if not converged and gap > 1e-2:
        raise ConvergenceError(
            f"not binary after {options.max_outer} iterations "
            f"(gap {gap:.3e})",
            solution=solution,
            trace=trace,
        )
    return PebcdResult(
        solution=solution,
        trace=trace,
        iterations=len(trace),
        converged=converged,
    )


def run_multistart(params, channels, options=None, freeze=None):
    """run() from the plain start plus restriction warm starts.

    The relaxation is nonconvex, and the joint scheme occasionally settles
    in a basin one of its own restrictions avoids, e.g. a phase profile
    coherently rotated against the direct link, reachable from the good
    basin only by changing phases and antennas together. Each extra start
    solves a natural restriction (every element active, RF chains on the
    first antennas), then lifts the restriction and polishes the design in
    the full space. Since polishing never accepts a worse design, the best
    start is guaranteed not to lose to those restrictions run alone with
    the same options.

    Fully deterministic. Returns the best design across starts; if it came
    from a run that failed to binarize, the ConvergenceError of that run is
    re-raised carrying the (polished) design.
    """
    options = options or PebcdOptions()
    base = resolve_freeze(params, channels, freeze)

    starts = [base]
    if base.gamma is None and params.n:
        ones = np.ones(params.n)
        mass = float(ones @ _power_weights(channels, params))
        if params.mu_min ** 2 * mass <= params.p_hris:
            starts.append(BlockFreeze(gamma=ones, antenna=base.antenna))
    if base.antenna is None and params.l < params.n_r:
        starts.append(
            BlockFreeze(gamma=base.gamma, antenna=np.arange(params.l))
        )

    best = None
    for k, fz in enumerate(starts):
        try:
            res = run(params, channels, options, fz)
            sol, err = res.solution, None
        except ConvergenceError as caught:
            res, sol, err = None, caught.solution, caught
        if k > 0 and options.polish_rounds > 0:
            gamma_bin, sel, phase_idx, mu = _neighborhood_polish(
                sol.hris.gamma.copy(), sol.antenna.selected.copy(),
                sol.hris.phase_idx.copy(), sol.hris.mu,
                channels, params, base, options.polish_rounds,
            )
            sol = _assemble(gamma_bin, sel, phase_idx, mu, channels, params)
        if best is None or sol.mse < best[0]:
            best = (sol.mse, sol, res, err)

    _, sol, res, err = best
    if res is None:
        raise ConvergenceError(str(err), solution=sol, trace=err.trace)
    if sol is not res.solution:
        res = PebcdResult(solution=sol, trace=res.trace,
                          iterations=res.iterations, converged=res.converged)
    return res
