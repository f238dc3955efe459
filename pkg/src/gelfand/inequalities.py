"""Weighted isoperimetric and Sobolev inequalities for the monomial weight sigma^a tau^b
on the open quadrant, checked on monotone domains and monotone functions.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.interpolate import RegularGridInterpolator
from scipy.special import roots_jacobi
from skimage.measure import find_contours

from .discretization import Grid
from .errors import ExponentOutOfRange, HypothesisViolated

QUAD_EPS = 1e-11
MONO_TOL = 1e-12


def _check_exponents(a, b, need_positive=True, allow_flat=False):
    if not (a > -1 and b > -1):
        raise ExponentOutOfRange(f"inequalities.a={a}, inequalities.b={b}: need a > -1 and b > -1")
    ok = max(a, b) >= 0 if allow_flat else max(a, b) > 0
    if need_positive and not ok:
        bound = ">= 0" if allow_flat else "> 0"
        raise ExponentOutOfRange(f"inequalities.a={a}, inequalities.b={b}: need max(a, b) {bound}")


# ---------------------------------------------------------------------------
# monotone graph domains

@dataclass(frozen=True)
class MonotoneGraphDomain:
    """Region {0 < tau < psi(sigma)} under a nonincreasing graph, axes excluded from the boundary.

    Build with :meth:`staircase`, :meth:`piecewise_linear`, :meth:`from_function` or
    :meth:`quarter_disc`.
    """

    kind: str
    xs: tuple = ()
    ys: tuple = ()
    psi: object = None
    dpsi: object = None
    sigma_bar: float = 0.0
    radius: float = 0.0

    @classmethod
    def staircase(cls, xs, ys):
        """psi = ys[i] on (xs[i-1], xs[i]] with xs[-1] = 0 implied; heights strictly decrease."""
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if xs.shape != ys.shape or xs.size == 0:
            raise ValueError("staircase needs matching nonempty xs and ys")
        if np.any(np.diff(xs) <= 0) or xs[0] <= 0:
            raise HypothesisViolated("staircase breakpoints must be positive and strictly increasing")
        if np.any(np.diff(ys) >= 0) or ys[-1] <= 0:
            raise HypothesisViolated("staircase heights must be positive and strictly decreasing")
        return cls("staircase", tuple(xs), tuple(ys))

    @classmethod
    def piecewise_linear(cls, xs, ys):
        """Graph through (xs[i], ys[i]) with xs[0] = 0; dropped vertically to 0 at xs[-1]."""
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if xs[0] != 0 or np.any(np.diff(xs) <= 0):
            raise HypothesisViolated("piecewise-linear graph needs xs starting at 0 and increasing")
        if np.any(np.diff(ys) > 0) or np.any(ys < 0) or ys[0] <= 0:
            raise HypothesisViolated("piecewise-linear graph must be nonnegative and nonincreasing")
        return cls("piecewise-linear", tuple(xs), tuple(ys))

    @classmethod
    def from_function(cls, psi, sigma_bar, dpsi=None):
        grid = np.linspace(0, sigma_bar, 2001)[1:-1]
        vals = np.array([float(psi(x)) for x in grid])
        if np.any(np.diff(vals) > MONO_TOL) or np.any(vals < 0):
            raise HypothesisViolated("psi must be nonnegative and nonincreasing")
        return cls("function", psi=psi, dpsi=dpsi, sigma_bar=float(sigma_bar))

    @classmethod
    def quarter_disc(cls, radius=1.0):
        return cls("quarter-disc", radius=float(radius), sigma_bar=float(radius))

    def transposed(self):
        """Mirror image across the diagonal (a staircase stays a staircase)."""
        if self.kind != "staircase":
            if self.kind == "quarter-disc":
                return self
            raise NotImplementedError("only staircases and quarter discs can be transposed")
        xs, ys = np.array(self.xs), np.array(self.ys)
        # columns (x_{i-1}, x_i] of height y_i become rows of width x_i
        return MonotoneGraphDomain.staircase(ys[::-1], xs[::-1])


def _quad(fn, lo, hi, points=None):
    # endpoint-singular integrands (vertical tangents) trip the roundoff detector
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        val, _ = quad(fn, lo, hi, epsabs=0.0, epsrel=QUAD_EPS, limit=400, points=points)
    return val


def weighted_area(domain: MonotoneGraphDomain, a, b):
    """m(U) = int_U sigma^a tau^b = (1/(b+1)) int sigma^a psi^(b+1) d sigma."""
    _check_exponents(a, b, need_positive=False)
    if domain.kind == "staircase":
        xs = np.array((0.0,) + domain.xs)
        ys = np.array(domain.ys)
        return float(np.sum((xs[1:] ** (a + 1) - xs[:-1] ** (a + 1)) / (a + 1) * ys ** (b + 1) / (b + 1)))
    if domain.kind == "quarter-disc":
        R = domain.radius
        return _quad(lambda th: math.cos(th) ** a * math.sin(th) ** b, 0, math.pi / 2) * R ** (a + b + 2) / (a + b + 2)
    if domain.kind == "piecewise-linear":
        xs, ys = domain.xs, domain.ys
        total = 0.0
        for x0, x1, y0, y1 in zip(xs, xs[1:], ys, ys[1:]):
            slope = (y1 - y0) / (x1 - x0)
            total += _quad(lambda x: x**a * (y0 + slope * (x - x0)) ** (b + 1), x0, x1)
        return total / (b + 1)
    psi = domain.psi
    return _quad(lambda x: x**a * float(psi(x)) ** (b + 1), 0.0, domain.sigma_bar) / (b + 1)


def weighted_perimeter(domain: MonotoneGraphDomain, a, b):
    """Weighted length of the graph part of the boundary; the axes are not counted."""
    _check_exponents(a, b, need_positive=False)
    if domain.kind == "staircase":
        xs = np.array((0.0,) + domain.xs)
        ys = np.array(domain.ys + (0.0,))
        horizontal = np.sum(ys[:-1] ** b * (xs[1:] ** (a + 1) - xs[:-1] ** (a + 1)) / (a + 1))
        vertical = np.sum(xs[1:] ** a * (ys[:-1] ** (b + 1) - ys[1:] ** (b + 1)) / (b + 1))
        return float(horizontal + vertical)
    if domain.kind == "quarter-disc":
        R = domain.radius
        return _quad(lambda th: math.cos(th) ** a * math.sin(th) ** b, 0, math.pi / 2) * R ** (a + b + 1)
    if domain.kind == "piecewise-linear":
        xs, ys = domain.xs, domain.ys
        total = 0.0
        for x0, x1, y0, y1 in zip(xs, xs[1:], ys, ys[1:]):
            length = math.hypot(x1 - x0, y1 - y0)
            total += length * _quad(lambda u: (x0 + u * (x1 - x0)) ** a * (y0 + u * (y1 - y0)) ** b, 0, 1)
        total += xs[-1] ** a * ys[-1] ** (b + 1) / (b + 1)
        return total
    psi, dpsi, sb = domain.psi, domain.dpsi, domain.sigma_bar
    if dpsi is None:
        def dpsi(x, e=1e-7):
            return (float(psi(min(x + e, sb))) - float(psi(max(x - e, 0.0)))) / (min(x + e, sb) - max(x - e, 0.0))
    graph = _quad(lambda x: x**a * float(psi(x)) ** b * math.sqrt(1.0 + float(dpsi(x)) ** 2), 0.0, sb)
    end = float(psi(sb))
    return graph + (sb**a * end ** (b + 1) / (b + 1) if end > 0 else 0.0)


def isoperimetric_constant(a, b):
    """Explicit constant C with m(U)^((D-1)/D) <= C * perimeter(U), D = a + b + 2.

    For a > 0: Cauchy-Schwarz on the graph gives perimeter >= c * int sigma^a psi^b
    (1 + K |psi'|) with c = 1/sqrt(1 + K^2), K = (b+1)/a; integrating K sigma^a psi^b
    |psi'| by parts turns it into int sigma^(a-1) psi^(b+1); splitting the area at the
    level mu where m(U) = mu^D / ((a+1)(b+1)) and using 1/psi + 1/sigma >= 1/mu gives
    the bound.  For a <= 0 < b the roles of the variables are swapped.
    """
    _check_exponents(a, b)
    if a <= 0:
        a, b = b, a
    D = a + b + 2.0
    K = (b + 1.0) / a
    return math.sqrt(1.0 + K * K) * ((a + 1.0) * (b + 1.0)) ** (1.0 / D) / (b + 1.0)


@dataclass(frozen=True)
class IsoperimetricResult:
    lhs: float
    rhs: float
    admissible_constant: float
    passed: bool


def isoperimetric_check(domain: MonotoneGraphDomain, a, b):
    C = isoperimetric_constant(a, b)
    D = a + b + 2.0
    area = weighted_area(domain, a, b)
    lhs = area ** ((D - 1.0) / D)
    rhs = weighted_perimeter(domain, a, b)
    return IsoperimetricResult(lhs, rhs, C, bool(lhs <= C * rhs + 1e-10))


def random_staircase(rng, max_steps=12):
    """Random staircase with 1..max_steps steps and lognormal scale."""
    n = int(rng.integers(1, max_steps + 1))
    scale_x = math.exp(rng.normal(0.0, 1.0))
    scale_y = math.exp(rng.normal(0.0, 1.0))
    xs = np.cumsum(rng.exponential(1.0, n))
    ys = np.cumsum(rng.exponential(1.0, n))[::-1]
    return MonotoneGraphDomain.staircase(scale_x * xs / xs[-1], scale_y * ys / ys[0])


def instance_rng(master_seed, index):
    """Independent generator for sweep instance ``index`` derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=(int(index),)))


# ---------------------------------------------------------------------------
# fields on the quadrant

@dataclass(frozen=True)
class QuadrantField:
    """Nodal values on sigma_i = i hs, tau_j = j ht (i, j >= 0), read as a P1 function on
    the triangulation that splits every cell along its anti-diagonal."""

    hs: float
    ht: float
    values: np.ndarray

    @property
    def sigma(self):
        return np.arange(self.values.shape[0]) * self.hs

    @property
    def tau(self):
        return np.arange(self.values.shape[1]) * self.ht

    def scaled(self, R):
        """The field x -> u(x / R): same nodal values on an R-times stretched lattice."""
        return QuadrantField(self.hs * R, self.ht * R, self.values)

    @classmethod
    def sample(cls, fn, extent, n):
        """Nodal samples of fn on [0, extent]^2 with n cells per side."""
        h = extent / n
        x = np.arange(n + 1) * h
        S, T = np.meshgrid(x, x, indexing="ij")
        return cls(h, h, np.asarray(fn(S, T), dtype=float))


class MonotoneTestFunction(QuadrantField):
    """Nonnegative, compactly supported field, nonincreasing in sigma and in tau."""

    def __init__(self, hs, ht, values):
        values = np.asarray(values, dtype=float)
        super().__init__(hs, ht, values)
        check_monotone(self)

    @classmethod
    def sample(cls, fn, extent, n):
        f = QuadrantField.sample(fn, extent, n)
        return cls(f.hs, f.ht, f.values)


def check_monotone(field: QuadrantField, tol=MONO_TOL):
    v = field.values
    scale = max(1.0, float(np.max(np.abs(v))) if v.size else 1.0)
    if np.any(v < -tol * scale):
        raise HypothesisViolated("test function must be nonnegative")
    if np.any(np.diff(v, axis=0) > tol * scale):
        i, j = np.argwhere(np.diff(v, axis=0) > tol * scale)[0]
        raise HypothesisViolated(f"u_sigma <= 0 fails near (sigma, tau) = ({i * field.hs:.4g}, {j * field.ht:.4g})")
    if np.any(np.diff(v, axis=1) > tol * scale):
        i, j = np.argwhere(np.diff(v, axis=1) > tol * scale)[0]
        raise HypothesisViolated(f"u_tau <= 0 fails near (sigma, tau) = ({i * field.hs:.4g}, {j * field.ht:.4g})")
    if np.any(v[-1, :] != 0) or np.any(v[:, -1] != 0):
        raise HypothesisViolated("test function must vanish on the far edges of its lattice")


@lru_cache(maxsize=None)
def _jacobi01(n, alpha, beta):
    """Nodes/weights on [0,1] for weight (1-x)^alpha x^beta."""
    x, w = roots_jacobi(n, alpha, beta)
    return 0.5 * (x + 1.0), w * 0.5 ** (alpha + beta + 1.0)


def _triangle_integrals(field: QuadrantField, a, b, integrand, order=8):
    """Sum over triangles of int_T sigma^a tau^b integrand(P1 values, gradient) d sigma d tau.

    Triangles are mapped to the unit square by the Duffy transform.  Lower-left
    triangles touching an axis absorb the singular factor of the weight into
    Gauss-Jacobi rules, so a, b in (-1, 0) are integrated accurately.
    """
    U = field.values
    hs, ht = field.hs, field.ht
    ni, nj = U.shape[0] - 1, U.shape[1] - 1
    I, J = np.meshgrid(np.arange(ni), np.arange(nj), indexing="ij")
    u00, u10, u01, u11 = U[:-1, :-1], U[1:, :-1], U[:-1, 1:], U[1:, 1:]
    active = (u00 != 0) | (u10 != 0) | (u01 != 0) | (u11 != 0)
    total = 0.0
    # lower-left triangles: corner (i, j), legs along +sigma and +tau
    for on_s_axis in (False, True):
        for on_t_axis in (False, True):
            sel = active & ((I == 0) == on_s_axis) & ((J == 0) == on_t_axis)
            if not sel.any():
                continue
            ea = a if on_s_axis else 0.0
            eb = b if on_t_axis else 0.0
            xi, wx = _jacobi01(order, 0.0, ea)
            eta, we = _jacobi01(order, 1.0 + ea, eb)
            i0 = I[sel][:, None, None]
            j0 = J[sel][:, None, None]
            X = xi[None, :, None] * (1 - eta[None, None, :])
            Y = eta[None, None, :] * np.ones_like(xi)[None, :, None]
            sig = (i0 + X) * hs
            tau = (j0 + Y) * ht
            # the factors already absorbed into the Jacobi weights
            w_sig = (hs ** ea) if on_s_axis else sig**a
            w_tau = (ht ** eb) if on_t_axis else tau**b
            p0, p1, p2 = u00[sel][:, None, None], u10[sel][:, None, None], u01[sel][:, None, None]
            val = p0 + (p1 - p0) * X + (p2 - p0) * Y
            gs = ((p1 - p0) / hs)[..., 0, 0]
            gt = ((p2 - p0) / ht)[..., 0, 0]
            g = integrand(val, gs[:, None, None], gt[:, None, None])
            W = wx[None, :, None] * we[None, None, :] * hs * ht
            total += float(np.sum(W * w_sig * w_tau * g))
    # upper-right triangles: corner (i+1, j+1), legs along -sigma and -tau
    sel = active
    if sel.any():
        xi, wx = _jacobi01(order, 0.0, 0.0)
        eta, we = _jacobi01(order, 1.0, 0.0)
        i0 = I[sel][:, None, None]
        j0 = J[sel][:, None, None]
        X = xi[None, :, None] * (1 - eta[None, None, :])
        Y = eta[None, None, :] * np.ones_like(xi)[None, :, None]
        sig = (i0 + 1 - X) * hs
        tau = (j0 + 1 - Y) * ht
        p0, p1, p2 = u11[sel][:, None, None], u01[sel][:, None, None], u10[sel][:, None, None]
        val = p0 + (p1 - p0) * X + (p2 - p0) * Y
        gs = ((p0 - p1) / hs)
        gt = ((p0 - p2) / ht)
        g = integrand(val, gs, gt)
        W = wx[None, :, None] * we[None, None, :] * hs * ht
        with np.errstate(divide="ignore", invalid="ignore"):
            wt = np.where(sig > 0, sig, 1.0) ** a * np.where(tau > 0, tau, 1.0) ** b
        total += float(np.sum(W * wt * g))
    return total


def weighted_field_integral(field: QuadrantField, a, b, power=1.0):
    """int sigma^a tau^b |u|^power over the quadrant (P1 interpolant)."""
    return _triangle_integrals(field, a, b, lambda v, gs, gt: np.abs(v) ** power)


@dataclass(frozen=True)
class SobolevResult:
    lhs: float
    rhs: float
    ratio: float
    q_star: float


def sobolev_ratio(field: QuadrantField, a, b, q):
    """(int w u^q*)^(1/q*) / (int w |grad u|^q)^(1/q) without any hypothesis check."""
    D = a + b + 2.0
    qs = D * q / (D - q)
    lhs = _triangle_integrals(field, a, b, lambda v, gs, gt: np.abs(v) ** qs) ** (1.0 / qs)
    rhs = _triangle_integrals(field, a, b, lambda v, gs, gt: (gs * gs + gt * gt) ** (0.5 * q) * np.ones_like(v)) ** (1.0 / q)
    return SobolevResult(lhs, rhs, lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf), qs)


def sobolev_check(u: QuadrantField, a, b, q):
    """Weighted Sobolev quotient for a monotone test function; q* = Dq/(D-q).

    a = b = 0 (the flat quadrant) is admitted alongside max(a, b) > 0.
    """
    _check_exponents(a, b, allow_flat=True)
    D = a + b + 2.0
    if not 1 <= q < D:
        raise ExponentOutOfRange(f"inequalities.q={q}: need 1 <= q < D = {D:g}")
    check_monotone(u)
    return sobolev_ratio(u, a, b, q)


def layer_cake_sobolev(u: QuadrantField, a, b, levels=100):
    """(gradient integral, coarea sum) for the q = 1 right-hand side.

    The coarea side adds up the weighted lengths of the level lines {u = l} at
    ``levels`` midpoint levels in (0, max u), extracted by marching squares.
    """
    _check_exponents(a, b, need_positive=False)
    check_monotone(u)
    direct = _triangle_integrals(u, a, b, lambda v, gs, gt: np.sqrt(gs * gs + gt * gt) * np.ones_like(v))
    top = float(np.max(u.values)) if u.values.size else 0.0
    if top <= 0:
        return 0.0, 0.0
    dl = top / levels
    total = 0.0
    for n in range(levels):
        lev = (n + 0.5) * dl
        for c in find_contours(u.values, lev):
            total += _polyline_weight(c[:, 0] * u.hs, c[:, 1] * u.ht, a, b) * dl
    return direct, total


def _polyline_weight(sig, tau, a, b, order=6):
    """int sigma^a tau^b ds along a polyline, exact in the weight's axis singularities."""
    p0s, p0t, p1s, p1t = sig[:-1], tau[:-1], sig[1:], tau[1:]
    # put an endpoint on the tau-axis at x = 0 and one on the sigma-axis at x = 1
    flip = (p1s == 0) & (p0s != 0) | (p0t == 0) & (p1t != 0) & ~(p0s == 0)
    p0s, p1s = np.where(flip, p1s, p0s), np.where(flip, p0s, p1s)
    p0t, p1t = np.where(flip, p1t, p0t), np.where(flip, p0t, p1t)
    length = np.hypot(p1s - p0s, p1t - p0t)
    total = 0.0
    for s_sing in (False, True):
        for t_sing in (False, True):
            sel = ((p0s == 0) == s_sing) & ((p1t == 0) == t_sing) & (length > 0)
            if not sel.any():
                continue
            ea = a if s_sing else 0.0
            eb = b if t_sing else 0.0
            x, w = _jacobi01(order, eb, ea)
            S = p0s[sel, None] + x[None, :] * (p1s - p0s)[sel, None]
            T = p0t[sel, None] + x[None, :] * (p1t - p0t)[sel, None]
            ws = (p1s[sel, None] - p0s[sel, None]) ** ea if s_sing else S**a
            wt = (p0t[sel, None] - p1t[sel, None]) ** eb if t_sing else T**b
            with np.errstate(divide="ignore", invalid="ignore"):
                vals = np.where(ws * wt * 0 == 0, ws * wt, 0.0)
            total += float(np.sum(length[sel, None] * w[None, :] * vals))
    return total


# ---------------------------------------------------------------------------
# random monotone families

def random_monotone_function(rng, n=96, extent=2.0):
    """Either a product of nonincreasing profiles or a sum of corner 'staircase' pyramids."""
    if rng.random() < 0.5:
        def profile():
            knots = np.sort(rng.uniform(0.1, 0.95 * extent, int(rng.integers(1, 4))))
            end = knots[-1]
            xs = np.concatenate([[0.0], knots[:-1], [end]])
            ys = np.sort(rng.uniform(0.1, 1.0, xs.size))[::-1]
            ys[-1] = 0.0
            return lambda x: np.interp(x, xs, ys, right=0.0)

        ps, pt = profile(), profile()
        return MonotoneTestFunction.sample(lambda s, t: ps(s) * pt(t), extent, n)
    k = int(rng.integers(1, 5))
    xs = np.sort(rng.uniform(0.2, 0.95 * extent, k))
    ys = np.sort(rng.uniform(0.2, 0.95 * extent, k))[::-1]
    cs = rng.uniform(0.2, 1.0, k)

    def fn(s, t):
        out = np.zeros_like(s)
        for x, y, c in zip(xs, ys, cs):
            out += c * np.maximum(1.0 - np.maximum(s / x, t / y), 0.0)
        return out

    return MonotoneTestFunction.sample(fn, extent, n)


def bump_witness(a, b, q, heights=(0.4, 0.2, 0.1, 0.05), sigma0=1.0, n=64):
    """Sobolev ratios of a non-monotone bump of radius tau0/2 centred at (sigma0, tau0).

    As tau0 shrinks the bump approaches the sigma-axis; for a < 0 the ratio is
    expected to grow (roughly like tau0^(a/D)).  Returns [(tau0, ratio), ...].
    """
    out = []
    for t0 in heights:
        r = 0.5 * t0
        lo_s, lo_t = sigma0 - r, t0 - r
        # a lattice on the bump's bounding box, shifted off the origin
        h = 2 * r / n
        i0, j0 = int(round(lo_s / h)), int(round(lo_t / h))
        S, T = np.meshgrid((i0 + np.arange(n + 1)) * h, (j0 + np.arange(n + 1)) * h, indexing="ij")
        bump = np.maximum(1.0 - ((S - sigma0) ** 2 + (T - t0) ** 2) / r**2, 0.0) ** 2
        full = np.zeros((i0 + n + 1, j0 + n + 1))
        full[i0:, j0:] = bump
        out.append((t0, sobolev_ratio(QuadrantField(h, h, full), a, b, q).ratio))
    return out


# ---------------------------------------------------------------------------
# change of variables from a solution grid

@dataclass(frozen=True)
class ChangedField:
    field: QuadrantField
    a: float
    b: float
    jacobian: float


def change_of_variables(grid: Grid, u, alpha, beta, n=None):
    """Resample u(s, t) on a uniform lattice in sigma = s^(2+alpha), tau = t^(2+beta).

    In the new variables s^(m-1) ds dt^(k-1) dt becomes (1/((2+alpha)(2+beta)))
    sigma^a tau^b d sigma d tau with a = m/(2+alpha) - 1, b = k/(2+beta) - 1.
    """
    if alpha < 0 or beta < 0:
        raise ExponentOutOfRange("alpha and beta must be nonnegative")
    ns, nt = grid.shape
    smax, tmax = (ns - 1) * grid.h, (nt - 1) * grid.h
    n = ns - 1 if n is None else int(n)
    ps, pt = 2.0 + alpha, 2.0 + beta
    hs, ht = smax**ps / n, tmax**pt / n
    sig = np.arange(n + 1) * hs
    tau = np.arange(n + 1) * ht
    S, T = np.meshgrid(sig ** (1.0 / ps), tau ** (1.0 / pt), indexing="ij")
    interp = RegularGridInterpolator((np.arange(ns) * grid.h, np.arange(nt) * grid.h), grid.to_array(u),
                                     bounds_error=False, fill_value=0.0)
    vals = interp(np.column_stack([np.minimum(S.ravel(), smax), np.minimum(T.ravel(), tmax)])).reshape(S.shape)
    return ChangedField(QuadrantField(hs, ht, vals), a=grid.m / ps - 1.0, b=grid.k / pt - 1.0,
                        jacobian=1.0 / (ps * pt))
