r"""Projected-gradient QP solver and the three feasible-set projections.

Solves min_x x^T H x + c^T x over one of the convex sets used by the block
updates (per-element box intersected with a weighted power ball, stacked
probability simplices, or the relaxed assignment polytope). H is real
symmetric PSD, given either densely or as a matvec operator.

The solver is FISTA with a monotone safeguard: the best feasible iterate
seen (including the warm start) is what gets returned, so a warm-started
solve can never increase the objective. That property is what makes the
outer block-descent loop monotone regardless of solve accuracy.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np


# ---------------------------------------------------------------------------
# projections


def project_simplex(v, radius=1.0):
    """Euclidean projection of each row of v onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    single = v.ndim == 1
    vv = v[None, :] if single else v
    u = np.sort(vv, axis=1)[:, ::-1]
    css = np.cumsum(u, axis=1) - radius
    idx = np.arange(1, vv.shape[1] + 1)
    cond = u - css / idx > 0
    rho = cond.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    tau = css[np.arange(vv.shape[0]), rho] / (rho + 1)
    out = np.maximum(vv - tau[:, None], 0.0)
    return out[0] if single else out


def project_box_ball(v, weights, budget, max_iter=200, tol=1e-13):
    """Projection onto {0 <= x <= 1, sum_i weights_i x_i^2 <= budget}.

    Solved through the scalar dual of the ball constraint: for multiplier
    lam the box part has the closed form clip(v / (1 + 2 lam w), 0, 1), and
    lam is located by a safeguarded Newton iteration on the power residual.
    """
    v = np.asarray(v, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0):
        raise ValueError("ball weights must be nonnegative")
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    x = np.clip(v, 0.0, 1.0)
    used = float(weights @ x ** 2)
    if used <= budget * (1.0 + 1e-12) + 1e-300:
        return x
    if budget == 0.0:
        out = np.clip(v, 0.0, 1.0)
        out[weights > 0] = 0.0
        return out

    def eval_x(lam):
        return np.clip(v / (1.0 + 2.0 * lam * weights), 0.0, 1.0)

    lo, hi = 0.0, 1.0
    for _ in range(200):
        if float(weights @ eval_x(hi) ** 2) < budget:
            break
        hi *= 8.0
    lam = 0.5 * hi
    for _ in range(max_iter):
        x = eval_x(lam)
        g = float(weights @ x ** 2) - budget
        if abs(g) <= tol * max(budget, 1e-300):
            break
        if g > 0:
            lo = lam
        else:
            hi = lam
        # Newton step on the smooth (interior) part, bisection fallback
        raw = v / (1.0 + 2.0 * lam * weights)
        interior = (raw > 0.0) & (raw < 1.0)
        dg = float(
            np.sum(
                -4.0 * weights[interior] ** 2 * x[interior] ** 2
                / (1.0 + 2.0 * lam * weights[interior])
            )
        )
        lam_new = lam - g / dg if dg < 0 else 0.5 * (lo + hi)
        if not lo < lam_new < hi:
            lam_new = 0.5 * (lo + hi)
        if hi - lo <= 1e-16 * max(1.0, hi):
            lam = lam_new
            break
        lam = lam_new
    return eval_x(lam)


def _project_capped_columns(y):
    """Per column: projection onto {t >= 0, sum t <= 1} (cap may be slack)."""
    t = np.maximum(y, 0.0)
    over = t.sum(axis=0) > 1.0
    if np.any(over):
        t[:, over] = project_simplex(y[:, over].T).T
    return t


def project_assignment(v, l, n_r, max_sweeps=500, tol=1e-8):
    """Dykstra projection onto the relaxed assignment polytope.

    The set is the intersection of per-row simplices (each RF chain picks a
    convex antenna combination) and per-column caps (each antenna serves at
    most one chain in total). Alternates exact projections onto the two
    sets with Dykstra corrections until the iterate change is below tol.
    """
    x = np.asarray(v, dtype=float).reshape(l, n_r)
    rows_only = project_simplex(x)
    if float(rows_only.sum(axis=0).max(initial=0.0)) <= 1.0 + 1e-12:
        # column caps slack at the row projection: that already is the
        # exact projection onto the intersection, no sweeps needed
        return rows_only.reshape(-1)
    p_corr = np.zeros_like(x)
    q_corr = np.zeros_like(x)
    z = x
    for _ in range(max_sweeps):
        y = project_simplex(z + p_corr)
        p_corr = z + p_corr - y
        z_new = _project_capped_columns(y + q_corr)
        q_corr = y + q_corr - z_new
        delta = float(np.max(np.abs(z_new - z)))
        z = z_new
        if delta <= tol:
            break
    return z.reshape(-1)


# ---------------------------------------------------------------------------
# constraint sets


class BoxBall:
    """{0 <= x <= 1} intersected with a weighted power ball."""

    def __init__(self, weights, budget):
        self.weights = np.asarray(weights, dtype=float)
        self.budget = float(budget)

    def project(self, v):
        return project_box_ball(v, self.weights, self.budget)

    def feasibility_gap(self, x):
        box = max(float(np.max(-x, initial=0.0)),
                  float(np.max(x - 1.0, initial=0.0)))
        ball = float(self.weights @ x ** 2) - self.budget
        scale = max(self.budget, 1e-300)
        return max(box, ball / scale)


class BlockSimplex:
    """n_blocks stacked probability simplices of equal width."""

    def __init__(self, n_blocks, width):
        self.n_blocks = int(n_blocks)
        self.width = int(width)

    def project(self, v):
        return project_simplex(
            np.asarray(v, dtype=float).reshape(self.n_blocks, self.width)
        ).reshape(-1)

    def feasibility_gap(self, x):
        blocks = x.reshape(self.n_blocks, self.width)
        neg = float(np.max(-blocks, initial=0.0))
        sums = np.abs(blocks.sum(axis=1) - 1.0)
        return max(neg, float(sums.max()))


class AssignmentPolytope:
    """Row simplices with column sums capped at one."""

    def __init__(self, l, n_r):
        self.l = int(l)
        self.n_r = int(n_r)

    def project(self, v):
        return project_assignment(v, self.l, self.n_r)

    def feasibility_gap(self, x):
        a = x.reshape(self.l, self.n_r)
        neg = float(np.max(-a, initial=0.0))
        rows = float(np.max(np.abs(a.sum(axis=1) - 1.0)))
        cols = float(np.max(a.sum(axis=0) - 1.0, initial=0.0))
        return max(neg, rows, cols)


# ---------------------------------------------------------------------------
# solver


@dataclass
class QpProblem:
    hessian: object              # (d, d) real symmetric PSD array, or matvec op
    linear: np.ndarray           # (d,) real
    constraint: object           # one of the sets above

    def matvec(self, x):
        h = self.hessian
        if isinstance(h, np.ndarray):
            return h @ x
        return h.matvec(x)


@dataclass
class QpSolution:
    x: np.ndarray
    value: float
    iterations: int
    kkt_residual: float
    converged: bool


def _lipschitz(problem, dim, n_iter=30):
    """2 * lambda_max(H) estimate by power iteration (deterministic start)."""
    h = problem.hessian
    if not isinstance(h, np.ndarray) and hasattr(h, "lipschitz_bound"):
        return 2.0 * float(h.lipschitz_bound())
    v = 1.0 + 0.01 * (np.arange(dim) % 7)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(n_iter):
        hv = problem.matvec(v)
        nrm = float(np.linalg.norm(hv))
        if nrm == 0.0:
            return 0.0
        lam = nrm
        v = hv / nrm
    return 2.0 * lam


def solve_qp(problem, x0, tol=1e-7, max_iter=400):
    """Minimize x^T H x + c^T x over the problem's constraint set.

    FISTA with a monotone safeguard, warm-started at x0 (projected onto the
    set first). Terminates when the step-scaled fixed-point residual drops
    below tol relative to the gradient scale, or when the objective has made
    no measurable progress for a stretch of iterations (inexact projections
    like Dykstra put a floor under the residual that tol can sit below).
    Returns the best iterate.
    """
    c = np.asarray(problem.linear, dtype=float)
    dim = c.size

    def objective(x):
        return float(x @ problem.matvec(x) + c @ x)

    lip = _lipschitz(problem, dim)
    c_scale = float(np.linalg.norm(c))
    if lip <= 1e-30 * max(c_scale, 1.0):
        # essentially linear objective; one far step lands on the boundary
        step = (1.0 + float(np.linalg.norm(x0))) / max(c_scale, 1e-300) * 1e3
        lip = 1.0 / step
    step = (1.0 / lip) / 1.05

    x = problem.constraint.project(np.asarray(x0, dtype=float))
    best_x = x
    best_f = objective(x)
    y = x
    t = 1.0
    kkt = np.inf
    converged = False
    it = 0

    def residual(xc, gc):
        moved = problem.constraint.project(xc - step * gc)
        return float(np.linalg.norm(xc - moved)) / step

    grad_x = 2.0 * problem.matvec(x) + c
    g_scale = max(float(np.linalg.norm(grad_x)), c_scale, 1e-300)
    if residual(x, grad_x) <= tol * g_scale:
        kkt = float(
            np.linalg.norm(x - problem.constraint.project(x - grad_x))
        )
        return QpSolution(x, best_f, 0, kkt, True)

    f_start = best_f
    f_window = best_f
    for it in range(1, max_iter + 1):
        grad_y = 2.0 * problem.matvec(y) + c
        x_new = problem.constraint.project(y - step * grad_y)
        f_new = objective(x_new)
        if f_new <= best_f:
            best_f = f_new
            best_x = x_new
        if it % 25 == 0:
            # diminishing returns: once a whole window moves the objective
            # by a sliver of the total improvement, further polishing is
            # cheaper to leave to the next warm-started solve
            total = f_start - best_f
            if f_window - best_f <= 1e-3 * total + 1e-14 * (1.0 + abs(best_f)):
                break
            f_window = best_f
        if f_new > best_f + 1e-12 * (1.0 + abs(best_f)):
            # momentum overshoot: restart from the best point
            y = best_x
            x = best_x
            t = 1.0
            continue
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x = x_new
        t = t_new
        if it % 4 == 0 or it == max_iter:
            grad_x = 2.0 * problem.matvec(x) + c
            g_scale = max(float(np.linalg.norm(grad_x)), c_scale, 1e-300)
            if residual(x, grad_x) <= tol * g_scale:
                converged = True
                break

    gx = 2.0 * problem.matvec(best_x) + c
    kkt = float(
        np.linalg.norm(best_x - problem.constraint.project(best_x - gx))
    )
    return QpSolution(best_x, best_f, it, kkt, converged)
