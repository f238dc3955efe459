"""Critical exponents, norms of computed solutions, boundary observables and
grid-refinement experiments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .discretization import Grid, assemble, build_grid, gradient_fields, weighted_integral
from .errors import ConfigError, DeltaOutOfRange, GelfandError, NoConvergence
from .solver import DEFAULT_LADDER, continue_branch, extremal_approximation

BOUNDED, GROWING, INCONCLUSIVE = "BOUNDED", "GROWING", "INCONCLUSIVE"
BOUNDED_RATIO = 1.1


def q_value(m, k):
    """m/(2+sqrt(m-1)) + k/(2+sqrt(k-1)); real m, k >= 1 are accepted."""
    return m / (2.0 + math.sqrt(m - 1.0)) + k / (2.0 + math.sqrt(k - 1.0))


def p_from_q(q):
    """2 + 4/(q - 2), or +inf when q <= 2 (no finite threshold)."""
    return math.inf if q <= 2.0 else 2.0 + 4.0 / (q - 2.0)


def p_radial(n):
    """Integrability threshold for radial extremal solutions; +inf for n <= 10."""
    return p_from_q(n / (2.0 + math.sqrt(n - 1.0)))


@dataclass(frozen=True)
class ExponentReport:
    m: int
    k: int
    n: int
    q_mk: float
    p_mk: float
    p_radial: float
    bounded_regime: bool
    alpha_sup: float
    beta_sup: float

    COLUMNS = ("m", "k", "n", "q_mk", "p_mk", "p_radial", "bounded_regime", "alpha_sup", "beta_sup")

    def row(self):
        return tuple(getattr(self, c) for c in self.COLUMNS)


def exponents(m, k):
    if int(m) != m or int(k) != k or m < 2 or k < 2:
        raise ConfigError(f"domain.m={m:g}, domain.k={k:g}: need n=m+k with m>=2 and k>=2")
    m, k = int(m), int(k)
    q = q_value(m, k)
    return ExponentReport(m=m, k=k, n=m + k, q_mk=q, p_mk=p_from_q(q), p_radial=p_radial(m + k),
                          bounded_regime=q < 2.0, alpha_sup=math.sqrt(m - 1), beta_sup=math.sqrt(k - 1))


def norms(grid: Grid, u, p_list=()):
    """L^p norms over the full domain, the sup norm and the Dirichlet energy."""
    uv = np.abs(grid.to_vector(u))
    out = {"sup": float(uv.max()) if uv.size else 0.0}
    for p in p_list:
        out[f"L{p:g}"] = weighted_integral(grid, uv**p) ** (1.0 / p)
    us, ut = gradient_fields(grid, u)
    out["grad_sq"] = weighted_integral(grid, us**2 + ut**2)
    out["h1"] = math.sqrt(out["grad_sq"])
    return out


@dataclass(frozen=True)
class BoundaryObservable:
    sup_near_boundary: float
    l1: float
    ratio: float


def boundary_observable(grid: Grid, u, delta):
    """sup of u over {dist < delta}, the L^1 norm, and their ratio (0/0 taken as 0)."""
    gen = grid.spec.generator
    if not 0 < delta < gen.inradius:
        raise DeltaOutOfRange(f"analysis.delta={delta} must lie in (0, {gen.inradius:.6g})")
    uv = grid.to_vector(u)
    d = gen.signed_distance(grid.s[grid.unknown], grid.t[grid.unknown])
    near = d < delta
    sup = float(np.max(np.abs(uv[near]))) if near.any() else 0.0
    l1 = weighted_integral(grid, np.abs(uv))
    ratio = 0.0 if l1 == 0 else sup / l1
    return BoundaryObservable(sup, l1, ratio)


def radial_resample(grid: Grid, u, radii, angles=(np.pi / 8, np.pi / 4, 3 * np.pi / 8)):
    """Bilinear samples of u along rays; returns an array of shape (len(angles), len(radii)).

    Exterior nodes carry the Dirichlet value 0, so rays may run up to the boundary.
    """
    ns, nt = grid.shape
    interp = RegularGridInterpolator((np.arange(ns) * grid.h, np.arange(nt) * grid.h), grid.to_array(u))
    radii = np.asarray(radii, dtype=float)
    out = []
    for a in angles:
        pts = np.column_stack([radii * math.cos(a), radii * math.sin(a)])
        out.append(interp(pts))
    return np.array(out)


def argmax_location(grid: Grid, u):
    U = grid.to_array(u, fill=-np.inf)
    i, j = np.unravel_index(np.argmax(U), U.shape)
    return float(grid.s[i, j]), float(grid.t[i, j])


def verdict(values, threshold=BOUNDED_RATIO):
    """Classify a refinement sequence of positive norms.

    BOUNDED when every successive ratio stays below ``threshold``.  GROWING when every
    ratio reaches it and the increments do not shrink geometrically (the last is at
    least half the previous one), as for logarithmic or power growth in 1/h.
    Anything else, including fewer than two values, is INCONCLUSIVE.
    """
    v = [x for x in values if x is not None and np.isfinite(x)]
    if len(v) < 2 or any(x <= 0 for x in v):
        return INCONCLUSIVE if any(x != 0 for x in v) or len(v) < 2 else BOUNDED
    ratios = [b / a for a, b in zip(v, v[1:])]
    if all(r < threshold for r in ratios):
        return BOUNDED
    incs = [b - a for a, b in zip(v, v[1:])]
    if all(r >= threshold for r in ratios) and (len(incs) < 2 or incs[-1] >= 0.5 * incs[-2]):
        return GROWING
    return INCONCLUSIVE


@dataclass
class RefinementRow:
    h: float
    lambda_star: float
    lam: float
    sup_norm: float
    lp: dict
    argmax: tuple
    failed: bool = False
    message: str = ""


@dataclass
class RefinementStudy:
    rows: list
    sup_verdict: str
    lp_verdicts: dict
    fraction: float
    p_list: tuple = field(default=())

    COLUMNS = ("h", "lambda_star", "lambda", "sup_norm", "argmax_s", "argmax_t", "failed")

    def table(self):
        cols = list(self.COLUMNS[:4]) + [f"L{p:g}" for p in self.p_list] + list(self.COLUMNS[4:])
        rows = []
        for r in self.rows:
            rows.append([r.h, r.lambda_star, r.lam, r.sup_norm] + [r.lp.get(f"L{p:g}", math.nan) for p in self.p_list]
                        + [r.argmax[0], r.argmax[1], r.failed])
        return cols, rows


def refinement_study(spec, f, fraction=0.99, ladder=DEFAULT_LADDER, p_list=()):
    """Extremal approximations on each grid of the ladder and BOUNDED/GROWING verdicts.

    On each grid the minimal branch is continued to its fold; lambda*_h is the last
    accepted parameter and the extremal approximation is the solution at
    fraction * lambda*_h (the last branch point itself when fraction == 1).
    """
    ladder = list(ladder)
    if len(ladder) < 3:
        raise ConfigError("solver.ladder needs at least 3 spacings for a refinement study")
    rows = []
    for h in ladder:
        try:
            grid = build_grid(spec, h)
            op = assemble(grid)
            branch = continue_branch(grid, op, f, compute_mu1=False)
            lam_star = branch.interval[0]
            if fraction >= 1.0:
                sol = branch.points[-1].solution
            else:
                sol = extremal_approximation(branch, fraction, lam_star)
            nr = norms(grid, sol.values, p_list)
            rows.append(RefinementRow(h, lam_star, sol.lam, nr["sup"],
                                      {k: v for k, v in nr.items() if k.startswith("L")},
                                      argmax_location(grid, sol.values)))
        except (NoConvergence, GelfandError) as exc:
            rows.append(RefinementRow(h, math.nan, math.nan, math.nan, {}, (math.nan, math.nan), True, str(exc)))
    ok = [r for r in rows if not r.failed]
    sup_v = verdict([r.sup_norm for r in ok]) if len(ok) == len(rows) else INCONCLUSIVE
    lp_v = {}
    for p in p_list:
        key = f"L{p:g}"
        lp_v[key] = verdict([r.lp[key] for r in ok]) if len(ok) == len(rows) else INCONCLUSIVE
    return RefinementStudy(rows=rows, sup_verdict=sup_v, lp_verdicts=lp_v, fraction=fraction, p_list=tuple(p_list))
