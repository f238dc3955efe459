"""Finite-difference grid on the generator and the weighted elliptic operator.

The reduced equation u_ss + u_tt + (m-1)/s u_s + (k-1)/t u_t = -lambda f(u) is the
divergence form (1/w) div(w grad u) with w = s^(m-1) t^(k-1).  It is discretized as a
finite-volume scheme on the measure w ds dt:

* every node owns the control volume [s-h/2, s+h/2] x [t-h/2, t+h/2] clipped to the
  quadrant, and its mass is the exact integral of w over it;
* the flux weight of a link is w evaluated at the link midpoint in the link direction
  and cell-averaged across it;
* links that leave the domain end at the boundary crossing (fraction theta of h), with
  the Dirichlet value eliminated into the diagonal.

The stiffness matrix K is symmetric and the mass is diagonal, so A = M^-1 K is
self-adjoint in <u, v>_w = sum(u v M).  On the axes the flux weight vanishes, which is
the natural (zero-flux) condition u_s = 0 at s = 0.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import NonFiniteIntegrand, SpacingTooCoarse
from .geometry import DomainSpec

INTERIOR, GHOST, AXIS_S, AXIS_T, ORIGIN, EXTERIOR = range(6)
CLASS_NAMES = ("interior", "dirichlet-ghost", "axis-s", "axis-t", "origin", "exterior")

# direction offsets: east (+s), west (-s), north (+t), south (-t)
_DIRS = ((1, 0), (-1, 0), (0, 1), (0, -1))
SNAP_THETA = 1e-6


def sphere_area(d):
    """Surface area of the unit sphere S^(d-1) in R^d."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def c_mk(m, k):
    return sphere_area(m) * sphere_area(k)


def _cell_average(p, n, h):
    """(1/h) * integral of x^(p-1) over the control interval of node index n >= 0."""
    n = np.asarray(n, dtype=float)
    hi = (n + 0.5) * h
    lo = np.maximum(n - 0.5, 0.0) * h
    return (hi**p - lo**p) / (p * h)


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform lattice (i h, j h) over the generator's bounding box.

    Arrays are indexed ``[i, j]`` with i along s and j along t.  ``theta[d]`` holds the
    link fraction in direction d (east, west, north, south) for unknown nodes: 1 for a
    full link, the boundary-crossing fraction for a cut link and NaN where no link
    exists (the west link of s = 0 nodes, the south link of t = 0 nodes).
    """

    spec: DomainSpec
    h: float
    s: np.ndarray
    t: np.ndarray
    classification: np.ndarray
    theta: np.ndarray

    @property
    def m(self):
        return self.spec.m

    @property
    def k(self):
        return self.spec.k

    @property
    def shape(self):
        return self.s.shape

    @cached_property
    def unknown(self):
        c = self.classification
        return (c == INTERIOR) | (c == AXIS_S) | (c == AXIS_T) | (c == ORIGIN)

    @cached_property
    def index(self):
        idx = -np.ones(self.shape, dtype=np.int64)
        idx[self.unknown] = np.arange(int(self.unknown.sum()))
        return idx

    @property
    def size(self):
        return int(self.unknown.sum())

    @cached_property
    def node_weight(self):
        """Pointwise monomial weight s^(m-1) t^(k-1); zero exactly on the axes."""
        return self.s ** (self.m - 1) * self.t ** (self.k - 1)

    @cached_property
    def mass(self):
        """Exact integral of s^(m-1) t^(k-1) over each node's control volume."""
        i = np.rint(self.s / self.h)
        j = np.rint(self.t / self.h)
        return _cell_average(self.m, i, self.h) * _cell_average(self.k, j, self.h) * self.h**2

    @cached_property
    def cut(self):
        """True for unknown nodes with at least one cut link."""
        th = np.where(np.isnan(self.theta), 1.0, self.theta)
        return self.unknown & np.any(th < 1.0, axis=0)

    @cached_property
    def origin_index(self):
        """Flat (i, j) of the unknown node nearest the origin."""
        r = np.where(self.unknown, np.hypot(self.s, self.t), np.inf)
        return np.unravel_index(np.argmin(r), self.shape)

    def counts(self):
        return {name: int((self.classification == c).sum()) for c, name in enumerate(CLASS_NAMES)}

    def to_vector(self, field):
        field = np.asarray(field, dtype=float)
        if field.shape == self.shape:
            return field[self.unknown]
        if field.shape == (self.size,):
            return field
        raise ValueError(f"field shape {field.shape} matches neither grid {self.shape} nor {self.size} unknowns")

    def to_array(self, vec, fill=0.0):
        vec = np.asarray(vec, dtype=float)
        if vec.shape == self.shape:
            return vec
        out = np.full(self.shape, fill, dtype=float)
        out[self.unknown] = vec
        return out

    def evaluate(self, fn):
        """Nodal values of ``fn(s, t)`` at unknown nodes, as a vector."""
        return np.asarray(fn(self.s[self.unknown], self.t[self.unknown]), dtype=float)

    def header(self):
        return {
            "h": self.h,
            "m": self.m,
            "k": self.k,
            "generator": {"kind": self.spec.generator.kind, **self.spec.generator.params()},
            "classification": self.counts(),
        }


def _cut_fraction(level, s0, t0, ds, dt, iters=64):
    """Fraction x in (0, 1] where level(s0 + x ds, t0 + x dt) changes sign."""
    lo = np.zeros_like(s0)
    hi = np.ones_like(s0)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        inside = level(s0 + mid * ds, t0 + mid * dt) < 0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return hi


def build_grid(spec: DomainSpec, h: float) -> Grid:
    """Classify lattice nodes and compute Shortley-Weller cut fractions.

    Raises
    ------
    SpacingTooCoarse
        If fewer than 8 nodes fit across the generator's inradius.
    """
    gen = spec.generator
    if not h > 0:
        raise SpacingTooCoarse(f"solver.h={h} must be positive")
    rin = gen.inradius
    if rin / h < 8.0 - 1e-12:
        raise SpacingTooCoarse(f"h={h} gives {rin / h:.2f} < 8 nodes across the inradius {rin:.4g}")
    smax, tmax = gen.bounds
    ns = int(math.ceil(smax / h)) + 2
    nt = int(math.ceil(tmax / h)) + 2
    s, t = np.meshgrid(np.arange(ns) * h, np.arange(nt) * h, indexing="ij")
    level = gen.level
    inside = np.asarray(level(s, t)) < 0

    while True:
        theta = np.full((4, ns, nt), np.nan)
        snapped = np.zeros_like(inside)
        for d, (di, dj) in enumerate(_DIRS):
            nb = np.zeros_like(inside)
            valid = np.zeros_like(inside)
            isl = slice(max(di, 0), ns + min(di, 0))
            jsl = slice(max(dj, 0), nt + min(dj, 0))
            src_i = slice(max(-di, 0), ns + min(-di, 0))
            src_j = slice(max(-dj, 0), nt + min(-dj, 0))
            nb[src_i, src_j] = inside[isl, jsl]
            valid[src_i, src_j] = True
            full = inside & valid & nb
            cutm = inside & valid & ~nb
            theta[d][full] = 1.0
            if cutm.any():
                frac = _cut_fraction(level, s[cutm], t[cutm], di * h, dj * h)
                theta[d][cutm] = frac
                tiny = np.zeros_like(inside)
                tiny[cutm] = frac < SNAP_THETA
                snapped |= tiny
        if not snapped.any():
            break
        inside &= ~snapped

    cls = np.full((ns, nt), EXTERIOR, dtype=np.int8)
    on_s_axis = s == 0
    on_t_axis = t == 0
    cls[inside & ~on_s_axis & ~on_t_axis] = INTERIOR
    cls[inside & on_s_axis & ~on_t_axis] = AXIS_S
    cls[inside & on_t_axis & ~on_s_axis] = AXIS_T
    cls[inside & on_s_axis & on_t_axis] = ORIGIN
    # exterior nodes reached by a link from an unknown node carry Dirichlet data
    ghost = np.zeros_like(inside)
    ghost[1:, :] |= inside[:-1, :]
    ghost[:-1, :] |= inside[1:, :]
    ghost[:, 1:] |= inside[:, :-1]
    ghost[:, :-1] |= inside[:, 1:]
    cls[ghost & ~inside] = GHOST
    return Grid(spec=spec, h=float(h), s=s, t=t, classification=cls, theta=theta)


@dataclass(frozen=True, eq=False)
class WeightedOperator:
    """A = M^-1 K acting on vectors of unknowns, self-adjoint in <u, v>_w = u . M v."""

    grid: Grid
    K: sp.csr_matrix
    M: np.ndarray

    def apply(self, u):
        return (self.K @ self.grid.to_vector(u)) / self.M

    def inner(self, u, v):
        return float(np.dot(self.grid.to_vector(u) * self.M, self.grid.to_vector(v)))

    def norm(self, u):
        return math.sqrt(max(self.inner(u, u), 0.0))

    def matrix(self):
        return sp.diags(1.0 / self.M) @ self.K


def assemble(grid: Grid, m=None, k=None) -> WeightedOperator:
    """Assemble the symmetric stiffness matrix and the control-volume mass."""
    m = grid.m if m is None else m
    k = grid.k if k is None else k
    if (m, k) != (grid.m, grid.k):
        raise ValueError("grid was built for a different (m, k)")
    h = grid.h
    idx = grid.index
    unk = grid.unknown
    ii = np.rint(grid.s / h)
    jj = np.rint(grid.t / h)
    sig_bar = _cell_average(m, ii, h)
    tau_bar = _cell_average(k, jj, h)

    rows, cols, vals = [], [], []
    diag = np.zeros(grid.size)
    for d, (di, dj) in enumerate(_DIRS):
        th = grid.theta[d]
        has = unk & ~np.isnan(th)
        P = idx[has]
        frac = th[has]
        # flux weight at the midpoint of the (possibly cut) link
        if di != 0:
            smid = grid.s[has] + di * 0.5 * frac * h
            W = smid ** (m - 1) * tau_bar[has]
        else:
            tmid = grid.t[has] + dj * 0.5 * frac * h
            W = sig_bar[has] * tmid ** (k - 1)
        full = frac == 1.0
        nb = np.full(P.shape, -1)
        ip = np.argwhere(has)
        qi = ip[:, 0] + di
        qj = ip[:, 1] + dj
        nb[full] = idx[qi[full], qj[full]]
        full &= nb >= 0
        np.add.at(diag, P, W / frac)
        rows.append(P[full])
        cols.append(nb[full])
        vals.append(-W[full])
    n = grid.size
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    K = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    M = grid.mass[unk]
    return WeightedOperator(grid=grid, K=K, M=M)


def weighted_integral(grid: Grid, field, extra_weight=None) -> float:
    """c_{m,k} * sum(field * extra * w * h^2) over unknown nodes.

    On the axes w = 0; the product there is taken as 0 whenever ``field`` vanishes,
    otherwise it is evaluated as is.
    """
    f = grid.to_vector(field)
    w = grid.node_weight[grid.unknown]
    if extra_weight is None:
        extra = np.ones_like(f)
    elif callable(extra_weight):
        with np.errstate(divide="ignore", invalid="ignore"):
            extra = np.asarray(grid.evaluate(extra_weight), dtype=float) * np.ones_like(f)
    else:
        extra = grid.to_vector(extra_weight)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        prod = f * extra * w
    drop = (w == 0) & (f == 0)
    prod = np.where(drop, 0.0, prod)
    if not np.all(np.isfinite(prod)):
        bad = np.flatnonzero(~np.isfinite(prod))[0]
        si, ti = grid.s[grid.unknown][bad], grid.t[grid.unknown][bad]
        raise NonFiniteIntegrand(f"non-finite integrand at (s, t) = ({si:.6g}, {ti:.6g})")
    return float(c_mk(grid.m, grid.k) * prod.sum() * grid.h**2)


def _directional_derivative(grid: Grid, U, axis):
    """Centered differences inside, second-order one-sided next to cut links."""
    h = grid.h
    unk = grid.unknown
    ns, nt = grid.shape
    Upad = np.pad(U, 2)
    upad = np.pad(unk, 2)
    if axis == 0:
        def sh(o):
            return Upad[2 + o:2 + o + ns, 2:2 + nt], upad[2 + o:2 + o + ns, 2:2 + nt]
        th_plus, th_minus = grid.theta[0], grid.theta[1]
    else:
        def sh(o):
            return Upad[2:2 + ns, 2 + o:2 + o + nt], upad[2:2 + ns, 2 + o:2 + o + nt]
        th_plus, th_minus = grid.theta[2], grid.theta[3]
    up1, kp1 = sh(1)
    um1, km1 = sh(-1)
    up2, kp2 = sh(2)
    um2, km2 = sh(-2)
    plus = kp1 & (th_plus == 1.0)
    minus = km1 & (th_minus == 1.0)
    D = np.zeros_like(U)
    both = unk & plus & minus
    D[both] = (up1[both] - um1[both]) / (2 * h)
    back = unk & minus & ~plus
    b2 = back & km2
    D[b2] = (3 * U[b2] - 4 * um1[b2] + um2[b2]) / (2 * h)
    b1 = back & ~km2
    D[b1] = (U[b1] - um1[b1]) / h
    fwd = unk & plus & ~minus
    f2 = fwd & kp2
    D[f2] = (-3 * U[f2] + 4 * up1[f2] - up2[f2]) / (2 * h)
    f1 = fwd & ~kp2
    D[f1] = (up1[f1] - U[f1]) / h
    # isolated along this axis: quadratic through the two zero-valued boundary crossings
    lone = unk & ~plus & ~minus & ~np.isnan(th_plus) & ~np.isnan(th_minus)
    a = th_minus[lone] * h
    b = th_plus[lone] * h
    D[lone] = U[lone] * (b - a) / (a * b)
    return D


def gradient_fields(grid: Grid, u):
    """Nodal (u_s, u_t) on the full grid; u_s = 0 on s = 0 and u_t = 0 on t = 0."""
    U = grid.to_array(u)
    us = _directional_derivative(grid, U, 0)
    ut = _directional_derivative(grid, U, 1)
    us[grid.s == 0] = 0.0
    ut[grid.t == 0] = 0.0
    us[~grid.unknown] = 0.0
    ut[~grid.unknown] = 0.0
    return us, ut


def field_rows(grid: Grid, u):
    """Rows (i, j, s, t, value) of a nodal field over unknown nodes."""
    U = grid.to_array(u)
    ii, jj = np.nonzero(grid.unknown)
    return [(int(i), int(j), grid.s[i, j], grid.t[i, j], U[i, j]) for i, j in zip(ii, jj)]


def write_field(path_stem, grid: Grid, u, extra_header=None):
    """Write ``<stem>.csv`` (i, j, s, t, value) and ``<stem>.json`` (grid header)."""
    from .report import write_csv

    write_csv(f"{path_stem}.csv", ("i", "j", "s", "t", "value"), field_rows(grid, u))
    header = grid.header()
    if extra_header:
        header.update(extra_header)
    with open(f"{path_stem}.json", "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_field(path_stem):
    """Inverse of :func:`write_field`: returns (header dict, rows array)."""
    with open(f"{path_stem}.json") as fh:
        header = json.load(fh)
    rows = np.loadtxt(f"{path_stem}.csv", delimiter=",", skiprows=1, ndmin=2)
    return header, rows
