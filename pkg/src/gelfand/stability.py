"""Linearized stability: smallest eigenvalue, second variation, and the
weighted-gradient inequality obtained by testing stability with c = u_s, u_t.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .discretization import Grid, WeightedOperator, _cell_average, c_mk, gradient_fields, weighted_integral
from .errors import IterationStalled

RQ_TOL = 1e-10
RESIDUAL_TOL = 1e-8
MAX_ITER = 500


@dataclass
class StabilityReport:
    mu1: float
    eigenfield: np.ndarray
    rayleigh_history: list = field(default_factory=list)
    residual: float = float("nan")


def _gershgorin_lower(op: WeightedOperator, pot):
    A = sp.diags(1.0 / op.M) @ op.K
    A = A.tocsr()
    diag = A.diagonal()
    off = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(diag)
    return float(np.min(diag - off - pot))


def _factor_with_inertia(mat):
    """LU of a symmetric matrix without row pivoting, plus its count of negative pivots.

    With a symmetric ordering and no pivoting U = D L^T, so by Sylvester's law the
    signs of diag(U) give the inertia.  Returns -1 for the count if SuperLU pivoted.
    """
    lu = splu(mat.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
              options={"SymmetricMode": True})
    if not np.array_equal(lu.perm_r, lu.perm_c):
        return lu, -1
    return lu, int(np.sum(lu.U.diagonal() < 0))


def smallest_eigenvalue(grid: Grid, operator: WeightedOperator, potential=None, *, max_iter=MAX_ITER):
    """Smallest eigenpair of A - potential in the weighted inner product.

    Inverse iteration starts from the constant field with a shift below the
    Gershgorin bound.  The shift is then raised toward (Rayleigh quotient - residual),
    but only to values certified to lie below the spectrum by the inertia of the
    shifted factorization, so the iteration cannot lock onto a higher eigenvalue.
    """
    K, M = operator.K, operator.M
    n = grid.size
    pot = np.zeros(n) if potential is None else grid.to_vector(potential)
    if not np.all(np.isfinite(pot)):
        raise ValueError("potential must be finite")
    B = (K - sp.diags(M * pot)).tocsc()
    Mdiag = sp.diags(M)

    sigma = _gershgorin_lower(operator, pot) - 1.0
    lu = splu((B - sigma * Mdiag).tocsc())
    x = np.ones(n)
    x /= math.sqrt(np.dot(x * M, x))
    history = []
    best = (math.inf, x, math.inf)
    prev = math.inf
    for _ in range(max_iter):
        y = lu.solve(M * x)
        x = y / math.sqrt(np.dot(y * M, y))
        Bx = B @ x
        rho = float(np.dot(x, Bx))
        r = Bx / M - rho * x
        res = math.sqrt(float(np.dot(r * M, r)))
        history.append(rho)
        if res < best[2]:
            best = (rho, x.copy(), res)
        scale = max(1.0, abs(rho))
        if abs(rho - prev) < RQ_TOL * scale and res <= RESIDUAL_TOL * scale:
            break
        prev = rho
        # try to raise the shift; accept only certified lower bounds
        cand = rho - max(res, 1e-6 * scale)
        for _try in range(2):
            if cand <= sigma + 1e-12 * scale:
                break
            lu_c, neg = _factor_with_inertia(B - cand * Mdiag)
            if neg == 0:
                sigma, lu = cand, lu_c
                break
            cand = 0.5 * (sigma + cand)
    else:
        raise IterationStalled(f"inverse iteration did not converge in {max_iter} iterations "
                               f"(best mu1={best[0]:.6g}, residual={best[2]:.2e})", best=best)
    if x.sum() < 0:
        x = -x
    return StabilityReport(mu1=rho, eigenfield=x, rayleigh_history=history, residual=res)


def quadratic_form(grid: Grid, operator: WeightedOperator, u, f, lam, xi):
    """Discrete second variation <A xi, xi>_w - int lambda f'(u) xi^2 dx.

    The potential term uses the same inner product as the gradient term, so the
    eigenfield of :func:`smallest_eigenvalue` returns exactly its eigenvalue.
    """
    xi = grid.to_vector(xi)
    uv = grid.to_vector(u)
    pot = lam * np.asarray(f.deriv(uv), dtype=float)
    return float(np.dot(xi, operator.K @ xi) - np.dot(operator.M * pot, xi * xi))


def smoothstep_cutoff(d, delta):
    """0 where d <= delta/3, 1 where d >= delta/2, C^1 smoothstep in between."""
    x = np.clip((np.asarray(d, dtype=float) - delta / 3.0) / (delta / 6.0), 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x), np.where((x > 0) & (x < 1), 6.0 * x * (1.0 - x) / (delta / 6.0), 0.0)


def _distance_gradient(grid: Grid, s, t):
    gen = grid.spec.generator
    e = 0.25 * grid.h
    ds = (gen.signed_distance(s + e, t) - gen.signed_distance(np.maximum(s - e, 0.0), t)) / (s + e - np.maximum(s - e, 0.0))
    dt = (gen.signed_distance(s, t + e) - gen.signed_distance(s, np.maximum(t - e, 0.0))) / (t + e - np.maximum(t - e, 0.0))
    return ds, dt


@dataclass
class LemmaReport:
    alpha: float
    beta: float
    h: float
    lhs_s: float
    rhs_s: float
    lhs_t: float
    rhs_t: float

    @property
    def lhs(self):
        return self.lhs_s + self.lhs_t

    @property
    def rhs(self):
        return self.rhs_s + self.rhs_t

    @property
    def margin(self):
        return self.rhs - self.lhs


def lemma_inequality_check(grid: Grid, u, alpha, beta, delta=None):
    """Both sides of (m-1) int u_s^2 eta^2 / s^2 <= int u_s^2 |grad eta|^2 and the t-analogue.

    eta = s^-alpha rho for s > h and h^-alpha rho for s <= h, with rho a smoothstep in
    the distance to the Dirichlet boundary (0 within delta/3, 1 beyond delta/2).
    """
    gen = grid.spec.generator
    delta = 0.2 * gen.inradius if delta is None else float(delta)
    h = grid.h
    unk = grid.unknown
    s, t = grid.s[unk], grid.t[unk]
    d = gen.signed_distance(s, t)
    rho, drho = smoothstep_cutoff(d, delta)
    gs, gt = _distance_gradient(grid, s, t)
    rho_s, rho_t = drho * gs, drho * gt
    us, ut = gradient_fields(grid, u)
    us, ut = us[unk], ut[unk]

    def side(var, exponent, mult, c, partial_var, partial_other):
        far = var > h
        with np.errstate(divide="ignore"):
            pw = np.where(far, var, h) ** (-exponent)
        eta = pw * rho
        # derivative of the power factor only exists beyond the regularization radius
        dpow = np.where(far, -exponent * np.where(far, var, 1.0) ** (-exponent - 1.0), 0.0)
        d_var = dpow * rho + pw * partial_var
        d_other = pw * partial_other
        grad2 = d_var**2 + d_other**2
        with np.errstate(divide="ignore", invalid="ignore"):
            lhs_field = np.where(var > 0, c**2 * eta**2 / np.where(var > 0, var, 1.0) ** 2, 0.0)
        lhs = mult * weighted_integral(grid, lhs_field)
        rhs = weighted_integral(grid, c**2 * grad2)
        return lhs, rhs

    m, k = grid.m, grid.k
    lhs_s, rhs_s = side(s, alpha, m - 1, us, rho_s, rho_t)
    lhs_t, rhs_t = side(t, beta, k - 1, ut, rho_t, rho_s)
    return LemmaReport(alpha=float(alpha), beta=float(beta), h=h, lhs_s=lhs_s, rhs_s=rhs_s, lhs_t=lhs_t, rhs_t=rhs_t)


def weighted_energy(grid: Grid, u, alpha, beta):
    """int (u_s^2 s^(-2 alpha - 2) + u_t^2 t^(-2 beta - 2)) dx.

    u_s vanishes linearly on s = 0, so the integrand is (u_s/s)^2 times the singular
    weight s^(m-1-2 alpha) t^(k-1).  The smooth factor (u_s/s)^2 is sampled at nodes and
    the weight is integrated exactly over each control volume, which keeps the
    quadrature second order despite the integrable singularity on the axis.
    """
    m, k, h = grid.m, grid.k, grid.h
    if not (m - 2 * alpha > 0 and k - 2 * beta > 0):
        raise ValueError("need 2*alpha < m and 2*beta < k for a finite weighted energy")
    U = grid.to_array(u)
    us, ut = gradient_fields(grid, U)
    ii = np.rint(grid.s / h)
    jj = np.rint(grid.t / h)
    total = 0.0
    for D, var, idx, jdx, p_sing, p_plain, axis in (
        (us, grid.s, ii, jj, m - 2 * alpha, k, 0),
        (ut, grid.t, jj, ii, k - 2 * beta, m, 1),
    ):
        ratio = _axis_ratio(grid, U, D, var, axis)
        wsing = _cell_average(p_sing, idx, h)
        wplain = _cell_average(p_plain, jdx, h)
        total += float(np.sum((ratio**2 * wsing * wplain)[grid.unknown])) * h**2
    return c_mk(m, k) * total


def _axis_ratio(grid: Grid, U, D, var, axis):
    """Nodal u_s / s (or u_t / t), continued to the axis by the second derivative."""
    out = np.zeros_like(U)
    pos = grid.unknown & (var > 0)
    out[pos] = D[pos] / var[pos]
    on_axis = grid.unknown & (var == 0)
    if not on_axis.any():
        return out
    # on the axis u_s/s -> u_ss; the symmetric reflection gives u_ss = 2 (u_1 - u_0) / h^2
    ii, jj = np.nonzero(on_axis)
    h = grid.h
    if axis == 0:
        nb_ok = grid.unknown[np.minimum(ii + 1, grid.shape[0] - 1), jj] & (ii + 1 < grid.shape[0])
        u1 = U[np.minimum(ii + 1, grid.shape[0] - 1), jj]
    else:
        nb_ok = grid.unknown[ii, np.minimum(jj + 1, grid.shape[1] - 1)] & (jj + 1 < grid.shape[1])
        u1 = U[ii, np.minimum(jj + 1, grid.shape[1] - 1)]
    # a cut link toward the interior: the zero boundary value sits at theta h
    th = grid.theta[0 if axis == 0 else 2][ii, jj]
    u1 = np.where(nb_ok, u1, 0.0)
    dist = np.where(nb_ok, h, th * h)
    out[ii, jj] = 2.0 * (u1 - U[ii, jj]) / dist**2
    return out
