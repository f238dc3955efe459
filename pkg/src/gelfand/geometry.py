"""Domains of double revolution described by their generator in the (s, t) quadrant.

A domain in R^n = R^m x R^k invariant under rotations of both blocks is the set of
points whose radial pair (s, t) lies in a planar region symmetric about both axes.
Everything here works with that planar region; the generator is its trace in the
closed quadrant s >= 0, t >= 0.  The coordinate axes are never Dirichlet boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError

_REFLECTIONS = ((1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0))


class GeneratorCurve:
    """Base class for generator kinds.

    Subclasses implement ``level`` (negative inside the reflected planar domain,
    vectorized), ``signed_distance`` (positive inside) and ``bounds``.
    """

    kind = "abstract"
    convex = False

    def level(self, s, t):
        raise NotImplementedError

    def signed_distance(self, s, t):
        raise NotImplementedError

    @property
    def bounds(self):
        raise NotImplementedError

    @property
    def inradius(self):
        raise NotImplementedError

    def params(self):
        raise NotImplementedError


@dataclass(frozen=True)
class QuarterDisc(GeneratorCurve):
    R: float = 1.0
    kind = "quarter-disc"
    convex = True

    def __post_init__(self):
        if not self.R > 0:
            raise ConfigError("domain.R must be positive")

    def level(self, s, t):
        return np.hypot(s, t) - self.R

    def signed_distance(self, s, t):
        return self.R - np.hypot(s, t)

    @property
    def bounds(self):
        return (self.R, self.R)

    @property
    def inradius(self):
        return self.R

    def params(self):
        return {"R": self.R}


@dataclass(frozen=True)
class SuperEllipse(GeneratorCurve):
    """Region |s/Rs|^e + |t/Rt|^e < 1.

    Requires e > 1: for e = 1 the reflected domain has corners on the axes.
    """

    Rs: float = 1.0
    Rt: float = 1.0
    e: float = 2.0
    kind = "super-ellipse"
    convex = True
    _samples: int = field(default=4096, repr=False, compare=False)

    def __post_init__(self):
        if not (self.Rs > 0 and self.Rt > 0):
            raise ConfigError("domain.Rs and domain.Rt must be positive")
        if not self.e > 1:
            raise ConfigError("domain.e must exceed 1 (axis contact must be perpendicular)")

    def level(self, s, t):
        a = np.abs(np.asarray(s, dtype=float)) / self.Rs
        b = np.abs(np.asarray(t, dtype=float)) / self.Rt
        return (a**self.e + b**self.e) ** (1.0 / self.e) - 1.0

    def _curve(self, theta):
        c = np.clip(np.cos(theta), 0.0, 1.0)
        sn = np.clip(np.sin(theta), 0.0, 1.0)
        return self.Rs * c ** (2.0 / self.e), self.Rt * sn ** (2.0 / self.e)

    @cached_property
    def _tree(self):
        theta = np.linspace(0.0, 0.5 * np.pi, self._samples)
        cs, ct = self._curve(theta)
        return theta, cKDTree(np.column_stack([cs, ct]))

    def signed_distance(self, s, t):
        s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        shape = s.shape
        p = np.column_stack([np.abs(s).ravel(), np.abs(t).ravel()])
        theta, tree = self._tree
        _, idx = tree.query(p)
        dth = theta[1] - theta[0]
        lo = np.clip(theta[idx] - dth, 0.0, 0.5 * np.pi)
        hi = np.clip(theta[idx] + dth, 0.0, 0.5 * np.pi)

        def dist2(th):
            cs, ct = self._curve(th)
            return (cs - p[:, 0]) ** 2 + (ct - p[:, 1]) ** 2

        # vectorized golden-section refinement of the closest curve parameter
        g = 0.5 * (math.sqrt(5.0) - 1.0)
        for _ in range(80):
            x1 = hi - g * (hi - lo)
            x2 = lo + g * (hi - lo)
            left = dist2(x1) < dist2(x2)
            hi = np.where(left, x2, hi)
            lo = np.where(left, lo, x1)
        f1, f2 = dist2(lo), dist2(hi)
        d = np.sqrt(np.minimum(f1, f2))
        sign = np.where(self.level(p[:, 0], p[:, 1]) < 0, 1.0, -1.0)
        return (sign * d).reshape(shape)

    @property
    def bounds(self):
        return (self.Rs, self.Rt)

    @property
    def inradius(self):
        # distance is concave on convex sets; by symmetry its maximum sits at the origin
        return float(self.signed_distance(0.0, 0.0))

    def params(self):
        return {"Rs": self.Rs, "Rt": self.Rt, "e": self.e}


def _capsule_sdf(px, py, ax, ay, bx, by, half_width):
    dx, dy = bx - ax, by - ay
    h = np.clip(((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
    return np.hypot(px - ax - h * dx, py - ay - h * dy) - half_width


@dataclass(frozen=True)
class Dumbbell(GeneratorCurve):
    """Two discs joined by a straight neck of full width ``neck`` (nonconvex).

    The planar domain is the union of all axis reflections of the lobes and the
    neck, so lobes that straddle an axis merge with their mirror images.
    """

    c1: tuple = (1.0, 0.2)
    c2: tuple = (0.2, 1.0)
    r1: float = 0.3
    r2: float = 0.3
    neck: float = 0.05
    kind = "dumbbell"
    convex = False
    _spacing: float = field(default=2e-4, repr=False, compare=False)

    def __post_init__(self):
        if not (self.r1 > 0 and self.r2 > 0 and self.neck > 0):
            raise ConfigError("dumbbell radii and domain.neck must be positive")
        if self.neck >= 2 * min(self.r1, self.r2):
            raise ConfigError("domain.neck must be narrower than the lobes")
        if abs(float(self.level(0.0, 0.0))) < 1e-12:
            raise ConfigError("the origin may not lie on the dumbbell boundary")
        if min(self.c1) < 0 or min(self.c2) < 0:
            raise ConfigError("dumbbell lobe centers must lie in the closed quadrant")

    def _components(self):
        (a1, b1), (a2, b2) = self.c1, self.c2
        out = []
        for fx, fy in _REFLECTIONS:
            out.append(("disc", (fx * a1, fy * b1, self.r1)))
            out.append(("disc", (fx * a2, fy * b2, self.r2)))
            out.append(("capsule", (fx * a1, fy * b1, fx * a2, fy * b2, 0.5 * self.neck)))
        return out

    @staticmethod
    def _sdf(kind, par, s, t):
        if kind == "disc":
            x, y, r = par
            return np.hypot(s - x, t - y) - r
        return _capsule_sdf(s, t, *par)

    def _component_min(self, s, t, exclude):
        vals = [self._sdf(kd, par, s, t) for n, (kd, par) in enumerate(self._components()) if n != exclude]
        return np.min(np.stack(np.broadcast_arrays(*vals)), axis=0)

    def level(self, s, t):
        return self._component_min(np.asarray(s, float), np.asarray(t, float), exclude=None)

    def _boundary_points(self):
        pts = []
        comps = self._components()
        for n, (kd, par) in enumerate(comps):
            if kd == "disc":
                x, y, r = par
                npts = max(64, int(2 * np.pi * r / self._spacing))
                ang = np.linspace(0, 2 * np.pi, npts, endpoint=False)
                cand = np.column_stack([x + r * np.cos(ang), y + r * np.sin(ang)])
            else:
                ax, ay, bx, by, hw = par
                d = np.array([bx - ax, by - ay])
                length = np.hypot(*d)
                u = d / length
                nrm = np.array([-u[1], u[0]])
                ns = max(16, int(length / self._spacing))
                lam = np.linspace(0, length, ns)
                sides = [np.array([ax, ay]) + np.outer(lam, u) + sgn * hw * nrm for sgn in (1, -1)]
                na = max(32, int(2 * np.pi * hw / self._spacing))
                ang = np.linspace(0, 2 * np.pi, na, endpoint=False)
                ring = hw * np.column_stack([np.cos(ang), np.sin(ang)])
                caps = [ring + np.array([ax, ay]), ring + np.array([bx, by])]
                cand = np.vstack(sides + caps)
            keep = (cand[:, 0] > -0.5) & (cand[:, 1] > -0.5)
            cand = cand[keep]
            others = self._component_min(cand[:, 0], cand[:, 1], exclude=n)
            pts.append(cand[others >= -1e-12])
        return np.vstack(pts)

    @cached_property
    def _tree(self):
        return cKDTree(self._boundary_points())

    def signed_distance(self, s, t):
        s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        lev = self.level(s, t)
        near, _ = self._tree.query(np.column_stack([s.ravel(), t.ravel()]))
        near = near.reshape(s.shape)
        # outside, the union's distance is exactly the smallest component distance
        return np.where(lev < 0, near, -np.maximum(lev, 0.0))

    @property
    def bounds(self):
        (a1, b1), (a2, b2) = self.c1, self.c2
        return (max(a1 + self.r1, a2 + self.r2), max(b1 + self.r1, b2 + self.r2))

    @cached_property
    def inradius(self):
        smax, tmax = self.bounds
        ss, tt = np.meshgrid(np.linspace(0, smax, 161), np.linspace(0, tmax, 161), indexing="ij")
        cand = [self.signed_distance(ss, tt).max()]
        for c in (self.c1, self.c2):
            cand.append(float(self.signed_distance(c[0], c[1])))
        return float(max(cand))

    def params(self):
        return {"c1": list(self.c1), "c2": list(self.c2), "r1": self.r1, "r2": self.r2, "neck": self.neck}


@dataclass(frozen=True)
class DomainSpec:
    """Rotation multiplicities (m, k) and the generator of the domain."""

    m: int
    k: int
    generator: GeneratorCurve = field(default_factory=QuarterDisc)

    def __post_init__(self):
        if int(self.m) != self.m or int(self.k) != self.k or self.m < 2 or self.k < 2:
            raise ConfigError(
                f"domain.m={self.m:g}, domain.k={self.k:g}: need n=m+k with m>=2 and k>=2"
            )

    @property
    def n(self):
        return self.m + self.k


def make_generator(kind, **params):
    """Build a generator from its kind name and keyword parameters."""
    kinds = {"quarter-disc": QuarterDisc, "super-ellipse": SuperEllipse, "dumbbell": Dumbbell}
    if kind not in kinds:
        raise ConfigError(f"domain.kind={kind!r}: expected one of {sorted(kinds)}")
    return kinds[kind](**params)


def contains(spec, point):
    """True iff (s, t) lies in the open generator region (axes included)."""
    s, t = point
    res = np.asarray(spec.generator.level(s, t)) < 0
    return bool(res) if res.ndim == 0 else res


def is_convex(spec):
    return spec.generator.convex


def boundary_distance(spec, point):
    """Signed distance to the Dirichlet boundary; positive inside, axes excluded."""
    s, t = point
    d = spec.generator.signed_distance(s, t)
    return float(d) if np.ndim(d) == 0 else d


def inradius(spec):
    return spec.generator.inradius
