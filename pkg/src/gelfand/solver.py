"""Newton solves, natural continuation of the minimal branch, and fold estimates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .discretization import Grid, WeightedOperator, assemble, build_grid, weighted_integral
from .errors import LadderTooShort, NoConvergence
from .stability import smallest_eigenvalue

MAX_NEWTON = 50
MAX_HALVINGS = 30
DEFAULT_LADDER = (1 / 32, 1 / 64, 1 / 128)
EIG_TOL = 1e-8
MONOTONE_TOL = 1e-8


@dataclass
class SolutionField:
    grid: Grid
    lam: float
    values: np.ndarray
    residual_norm: float
    iterations: int = 0

    def array(self):
        return self.grid.to_array(self.values)


@dataclass
class BranchPoint:
    lam: float
    solution: SolutionField
    mu1: float
    u0: float
    sup_norm: float
    l1_norm: float


@dataclass
class Branch:
    points: list
    last_step: float
    step0: float
    step_min: float
    f: object = None
    operator: object = field(default=None, repr=False)
    failures: list = field(default_factory=list)

    @property
    def lambdas(self):
        return np.array([p.lam for p in self.points])

    @property
    def mu1(self):
        return np.array([p.mu1 for p in self.points])

    @property
    def interval(self):
        lam = self.points[-1].lam
        return (lam, lam + self.last_step)


def _residual(op: WeightedOperator, f, lam, u):
    return op.K @ u - lam * op.M * f.eval(u)


def _wnorm(op, r):
    """Weighted L2 norm of A u - lambda f(u) given r = K u - lambda M f(u)."""
    with np.errstate(over="ignore", invalid="ignore"):
        return math.sqrt(float(np.dot(r, r / op.M)))


def default_tol(op, f, lam, u):
    with np.errstate(over="ignore"):
        fu = lam * np.asarray(f.eval(u), dtype=float)
    scale = math.sqrt(float(np.dot(fu * op.M, fu))) if np.all(np.isfinite(fu)) else math.inf
    return 1e-10 * max(1.0, scale)


def solve_fixed(grid: Grid, operator: WeightedOperator, f, lam, initial=None, tol=None,
                max_iter=MAX_NEWTON):
    """Damped Newton for A u = lambda f(u) with zero Dirichlet data.

    At least one Newton step is taken.  The step is halved while the weighted residual
    fails to decrease; ``tol`` defaults to 1e-10 times max(1, ||lambda f(u)||_w).
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    op = operator
    u = np.zeros(grid.size) if initial is None else np.array(grid.to_vector(initial), dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("initial guess must be finite")
    r = _residual(op, f, lam, u)
    res = _wnorm(op, r)
    for it in range(1, max_iter + 1):
        J = (op.K - sp.diags(lam * op.M * f.deriv(u))).tocsc()
        try:
            du = -splu(J).solve(r)
        except RuntimeError as exc:
            raise NoConvergence(f"singular Jacobian at lambda={lam:.6g}: {exc}", res, it, u) from exc
        if not np.all(np.isfinite(du)):
            raise NoConvergence(f"non-finite Newton step at lambda={lam:.6g}", res, it, u)
        step = 1.0
        for _ in range(MAX_HALVINGS):
            trial = u + step * du
            with np.errstate(over="ignore", invalid="ignore"):
                rt = _residual(op, f, lam, trial)
            rn = _wnorm(op, rt) if np.all(np.isfinite(rt)) else math.inf
            if rn < res or (rn == 0.0 and res == 0.0):
                break
            step *= 0.5
        else:
            # no decrease is possible only at roundoff level; otherwise Newton has failed
            if res <= (tol if tol is not None else default_tol(op, f, lam, u)):
                return SolutionField(grid, lam, u, res, it)
            raise NoConvergence(f"line search failed at lambda={lam:.6g}", res, it, u)
        u, r, res = trial, rt, rn
        target = tol if tol is not None else default_tol(op, f, lam, u)
        if res <= target:
            return SolutionField(grid, lam, u, res, it)
    raise NoConvergence(f"Newton did not converge at lambda={lam:.6g}", res, max_iter, u)


def _branch_point(grid, op, f, sol, compute_mu1=True):
    u = sol.values
    mu1 = float("nan")
    if compute_mu1:
        pot = sol.lam * np.asarray(f.deriv(u), dtype=float)
        mu1 = smallest_eigenvalue(grid, op, pot).mu1
    io, jo = grid.origin_index
    u0 = float(grid.to_array(u)[io, jo])
    return BranchPoint(lam=sol.lam, solution=sol, mu1=mu1, u0=u0,
                       sup_norm=float(np.max(np.abs(u))) if u.size else 0.0,
                       l1_norm=weighted_integral(grid, np.abs(u)))


def default_step(grid, op, f):
    """0.1 times the first eigenvalue of A divided by f'(0)."""
    lam1 = smallest_eigenvalue(grid, op).mu1
    return 0.1 * lam1 / float(f.deriv(np.zeros(1))[0])


def continue_branch(grid: Grid, operator: WeightedOperator, f, lambda_step0=None, step_min=None,
                    compute_mu1=True, max_points=10_000):
    """Natural continuation from (0, 0) with step halving until the step drops below step_min.

    A converged solve is accepted only if it stays on the minimal branch: pointwise
    nondecreasing relative to the previous point and with mu1 > -EIG_TOL.  Anything
    else counts as a failure and halves the step.
    """
    op = operator
    step = default_step(grid, op, f) if lambda_step0 is None else float(lambda_step0)
    step_min = 1e-6 * step if step_min is None else float(step_min)
    if not (step > 0 and step_min > 0 and step >= step_min):
        raise ValueError("need lambda_step0 >= step_min > 0")
    step0 = step
    zero = SolutionField(grid, 0.0, np.zeros(grid.size), 0.0, 0)
    points = [_branch_point(grid, op, f, zero, compute_mu1)]
    failures = []
    last_step = step
    while step >= step_min and len(points) < max_points:
        prev = points[-1]
        lam = prev.lam + step
        try:
            sol = solve_fixed(grid, op, f, lam, initial=prev.solution.values)
            bp = _branch_point(grid, op, f, sol, compute_mu1)
            if np.any(sol.values < prev.solution.values - MONOTONE_TOL):
                raise NoConvergence(f"left the minimal branch at lambda={lam:.6g} (not monotone)",
                                    sol.residual_norm, sol.iterations)
            if compute_mu1 and bp.mu1 <= -EIG_TOL:
                raise NoConvergence(f"left the minimal branch at lambda={lam:.6g} (mu1={bp.mu1:.3g})",
                                    sol.residual_norm, sol.iterations)
        except NoConvergence as exc:
            failures.append((lam, str(exc)))
            last_step = step
            step *= 0.5
            continue
        points.append(bp)
    return Branch(points=points, last_step=last_step, step0=step0, step_min=step_min, f=f,
                  operator=op, failures=failures)


def fold_from_mu1(branch: Branch, npts=5):
    """lambda at mu1 = 0 from the last ``npts`` accepted points.

    Near a fold mu1 vanishes like sqrt(lambda* - lambda), so lambda is smooth and even
    to leading order in mu1: the fit is lambda = lambda* + c2 mu1^2 + c3 mu1^3 (a plain
    line in mu1^2 when only two points are available).
    """
    pts = [p for p in branch.points[1:] if np.isfinite(p.mu1)][-npts:]
    if len(pts) < 2:
        return float("nan")
    lam = np.array([p.lam for p in pts])
    mu = np.array([p.mu1 for p in pts])
    cols = [np.ones_like(mu), mu**2] + ([mu**3] if len(pts) >= 4 else [])
    coef, *_ = np.linalg.lstsq(np.column_stack(cols), lam, rcond=None)
    return float(coef[0])


def fold_from_mu1_linear(branch: Branch, npts=5):
    """Zero of a straight-line fit of mu1 itself (kept for comparison)."""
    pts = [p for p in branch.points[1:] if np.isfinite(p.mu1)][-npts:]
    if len(pts) < 2:
        return float("nan")
    lam = np.array([p.lam for p in pts])
    slope, icpt = np.polyfit(lam, np.array([p.mu1 for p in pts]), 1)
    return float(-icpt / slope) if slope < 0 else float("nan")


@dataclass
class LambdaStarEstimate:
    hs: list
    intervals: list
    mu1_estimates: list
    point_estimates: list
    extrapolated: float
    order: float
    branches: list = field(default_factory=list, repr=False)


def richardson(hs, values):
    """Extrapolate the last value using the observed order of the last three (p = 2 fallback)."""
    hs = np.asarray(hs, dtype=float)
    v = np.asarray(values, dtype=float)
    ratio = hs[-2] / hs[-1]
    p = 2.0
    if len(v) >= 3:
        d1, d2 = v[-2] - v[-3], v[-1] - v[-2]
        r31 = hs[-3] / hs[-2]
        if d1 != 0 and d2 != 0 and d1 * d2 > 0 and abs(ratio - r31) < 1e-12:
            q = math.log(abs(d1 / d2)) / math.log(ratio)
            if 0.5 <= q <= 4.0:
                p = q
    return float(v[-1] + (v[-1] - v[-2]) / (ratio**p - 1.0)), p


def lambda_star(spec, f, ladder=DEFAULT_LADDER, branches=None, lambda_step0=None, step_min=None):
    """Fold estimates per grid and a Richardson-extrapolated lambda*.

    The per-grid point estimate is the mu1-based fold when it falls inside the
    continuation interval and the interval midpoint otherwise.
    """
    ladder = list(ladder)
    if len(ladder) < 2:
        raise LadderTooShort("lambda* extrapolation needs at least 2 grid spacings")
    if branches is None:
        branches = []
        for h in ladder:
            g = build_grid(spec, h)
            op = assemble(g)
            branches.append(continue_branch(g, op, f, lambda_step0, step_min))
    intervals, mus, pts = [], [], []
    for br in branches:
        lo, hi = br.interval
        est = fold_from_mu1(br)
        intervals.append((lo, hi))
        mus.append(est)
        pts.append(est if np.isfinite(est) and lo <= est <= hi else 0.5 * (lo + hi))
    order_h = [br.points[0].solution.grid.h for br in branches]
    extrap, p = richardson(order_h, pts)
    return LambdaStarEstimate(hs=order_h, intervals=intervals, mu1_estimates=mus, point_estimates=pts,
                              extrapolated=extrap, order=p, branches=branches)


def extremal_approximation(branch: Branch, fraction=0.99, lam_star=None):
    """Re-solve at fraction * lambda* starting from the nearest stored branch solution below it."""
    if not 0 <= fraction <= 1:
        raise ValueError("fraction must lie in [0, 1]")
    lam_star = branch.interval[0] if lam_star is None else float(lam_star)
    target = fraction * lam_star
    grid = branch.points[0].solution.grid
    below = [p for p in branch.points if p.lam <= target]
    start = below[-1] if below else branch.points[0]
    if target == 0:
        return SolutionField(grid, 0.0, np.zeros(grid.size), 0.0, 0)
    return solve_fixed(grid, branch.operator, branch.f, target, initial=start.solution.values)


BRANCH_COLUMNS = ("lambda", "mu1", "u0", "sup_norm", "l1_norm")


def branch_rows(branch: Branch):
    return [(p.lam, p.mu1, p.u0, p.sup_norm, p.l1_norm) for p in branch.points]
