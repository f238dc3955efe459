"""Command-line entry point: ``gelfand COMMAND [-c CONFIG] [--section.key=value ...]``.

The config file holds ``key = value`` lines under ``[section]`` headers; every key
can be overridden on the command line.  Results go to ``output.dir`` as CSV and
JSON.  Exit codes: 0 success, 2 invalid input, 3 solver nonconvergence.
"""
from __future__ import annotations

import argparse
import configparser
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import analysis, inequalities, nonlinearity, report, solver, stability
from .discretization import assemble, build_grid, write_field
from .errors import (ConditionViolated, ConfigError, DeltaOutOfRange, ExponentOutOfRange,
                     GelfandError, HypothesisViolated, IterationStalled, LadderTooShort,
                     NoConvergence, SpacingTooCoarse)
from .geometry import DomainSpec, make_generator

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGENCE = 0, 2, 3

COMMANDS = ("exponents", "solve", "branch", "lambda-star", "stability", "lemma-check", "norms",
            "boundary", "refine", "sobolev", "isoperimetric", "sweep")

DEFAULTS = {
    "domain": {"kind": "quarter-disc", "m": "2", "k": "2"},
    "nonlinearity": {"kind": "exp", "p": "2"},
    "solver": {"h": "1/64", "ladder": "1/32, 1/64, 1/128", "lambda": "1", "fraction": "0.99"},
    "analysis": {"p_list": "", "delta": "0.1"},
    "inequalities": {"a": "-0.5, 0.5, 1, 2.7", "b": "-0.5, 0.5, 1, 2.7", "q": "1, 1.5",
                     "sweep_size": "20", "master_seed": "0"},
    "sweep": {"mk": "2x2, 2x3, 3x3", "nonlinearities": "exp, power", "domains": "quarter-disc"},
    "output": {"dir": "out"},
}

# generator keyword arguments accepted per kind, with their parsers
_GENERATOR_KEYS = {
    "quarter-disc": {"R": float},
    "super-ellipse": {"Rs": float, "Rt": float, "e": float},
    "dumbbell": {"c1": "pair", "c2": "pair", "r1": float, "r2": float, "neck": float},
}

SWEEP_COLUMNS = ("a", "b", "q", "seed", "lhs", "rhs", "ratio", "pass")
LEMMA_COLUMNS = ("alpha", "beta", "LHS", "RHS", "margin", "h")
CASE_COLUMNS = ("m", "k", "n", "nonlinearity", "domain", "lambda_lo", "lambda_hi",
                "lambda_star", "order", "failed", "message")
LAMBDA_STAR_COLUMNS = ("h", "lambda_lo", "lambda_hi", "mu1_fold", "point_estimate")


# ---------------------------------------------------------------------------
# configuration

@dataclass
class RunConfig:
    command: str
    sections: dict
    output_dir: Path

    def get(self, section, key, default=None):
        return self.sections.get(section, {}).get(key, default)

    def number(self, section, key):
        return _number(self.get(section, key), f"{section}.{key}")

    def integer(self, section, key):
        x = self.number(section, key)
        if x != int(x):
            raise ConfigError(f"{section}.{key}={x} must be an integer")
        return int(x)

    def numbers(self, section, key):
        raw = self.get(section, key, "")
        return [_number(v, f"{section}.{key}") for v in _split(raw)]

    def words(self, section, key):
        return _split(self.get(section, key, ""))


def _split(raw):
    return [w.strip() for w in str(raw).split(",") if w.strip()]


def _number(raw, key):
    if raw is None:
        raise ConfigError(f"{key} is required")
    try:
        return float(Fraction(str(raw).strip()))
    except (ValueError, ZeroDivisionError):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}={raw!r} is not a number") from None


def load_config(command, path=None, overrides=(), output_dir=None):
    """Merge defaults, the config file and ``--section.key=value`` overrides."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}")
    sections = {s: dict(v) for s, v in DEFAULTS.items()}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for sec in parser.sections():
            sections.setdefault(sec, {}).update(parser[sec])
    for item in overrides:
        body = item[2:] if item.startswith("--") else item
        key, sep, value = body.partition("=")
        sec, dot, name = key.partition(".")
        if not sep or not dot or not sec or not name:
            raise ConfigError(f"override {item!r} must look like --section.key=value")
        sections.setdefault(sec, {})[name] = value
    out = Path(output_dir if output_dir is not None else sections["output"]["dir"])
    return RunConfig(command, sections, out)


def domain_spec(cfg: RunConfig, kind=None):
    kind = kind or cfg.get("domain", "kind")
    if kind not in _GENERATOR_KEYS:
        raise ConfigError(f"domain.kind={kind!r}: expected one of {sorted(_GENERATOR_KEYS)}")
    params = {}
    for key, conv in _GENERATOR_KEYS[kind].items():
        raw = cfg.get("domain", key)
        if raw is None:
            continue
        if conv == "pair":
            vals = cfg.numbers("domain", key)
            if len(vals) != 2:
                raise ConfigError(f"domain.{key} must be two comma-separated numbers")
            params[key] = tuple(vals)
        else:
            params[key] = cfg.number("domain", key)
    m, k = cfg.number("domain", "m"), cfg.number("domain", "k")
    return DomainSpec(m=_mk(m), k=_mk(k), generator=make_generator(kind, **params))


def _mk(x):
    return int(x) if x == int(x) else x


def make_nonlinearity(kind, p):
    return nonlinearity.make(kind, {"p": p} if kind == "power" else None)


def cfg_nonlinearity(cfg: RunConfig):
    return make_nonlinearity(cfg.get("nonlinearity", "kind"), cfg.number("nonlinearity", "p"))


def ladder(cfg: RunConfig):
    lad = cfg.numbers("solver", "ladder")
    if any(not h > 0 for h in lad):
        raise ConfigError("solver.ladder entries must be positive")
    return sorted(lad, reverse=True)


def fraction(cfg: RunConfig):
    fr = cfg.number("solver", "fraction")
    if not 0 <= fr <= 1:
        raise ConfigError(f"solver.fraction={fr} must lie in [0, 1]")
    return fr


def _optional(cfg, section, key):
    return cfg.number(section, key) if cfg.get(section, key) not in (None, "") else None


def lemma_exponents(cfg: RunConfig, spec):
    alpha = _optional(cfg, "analysis", "alpha")
    beta = _optional(cfg, "analysis", "beta")
    alpha = 0.9 * math.sqrt(spec.m - 1) if alpha is None else alpha
    beta = 0.9 * math.sqrt(spec.k - 1) if beta is None else beta
    if not (0 <= alpha and 0 <= beta):
        raise ConfigError("analysis.alpha and analysis.beta must be nonnegative")
    return alpha, beta


# ---------------------------------------------------------------------------
# parallel helpers

def worker_count():
    cap = os.environ.get("GELFAND_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, int(cap))
        except ValueError:
            raise ConfigError(f"GELFAND_THREADS={cap!r} must be an integer") from None
    return max(1, n)


def _map(fn, jobs):
    """Ordered map, in a process pool when more than one worker is allowed."""
    jobs = list(jobs)
    workers = min(worker_count(), len(jobs))
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


# ---------------------------------------------------------------------------
# commands

def _solve_at(cfg, spec, f, lam):
    grid = build_grid(spec, cfg.number("solver", "h"))
    op = assemble(grid)
    if lam == 0:
        return grid, op, solver.SolutionField(grid, 0.0, np.zeros(grid.size), 0.0, 0)
    # continue from zero so that the minimal solution is the one found
    br = solver.continue_branch(grid, op, f, compute_mu1=False)
    lo = br.interval[0]
    if lam > lo:
        raise NoConvergence(f"solver.lambda={lam:.6g} lies beyond the computed fold {lo:.6g}")
    below = [p for p in br.points if p.lam <= lam][-1]
    return grid, op, solver.solve_fixed(grid, op, f, lam, initial=below.solution.values)


def _lambda(cfg):
    lam = cfg.number("solver", "lambda")
    if lam < 0:
        raise ConfigError(f"solver.lambda={lam} must be nonnegative")
    return lam


def cmd_exponents(cfg, out):
    rep = analysis.exponents(cfg.number("domain", "m"), cfg.number("domain", "k"))
    cols = rep.COLUMNS
    report.write_csv(out / "exponents.csv", cols, [rep.row()])
    print("  ".join(f"{c:>14}" for c in cols))
    print("  ".join(f"{report.fmt(v) if not isinstance(v, float) else f'{v:.6f}':>14}" for v in rep.row()))


def cmd_solve(cfg, out):
    spec, f, lam = domain_spec(cfg), cfg_nonlinearity(cfg), _lambda(cfg)
    grid, _, sol = _solve_at(cfg, spec, f, lam)
    write_field(out / "solution", grid, sol.values, {"lambda": lam})
    report.write_json(out / "solve.json", {"lambda": lam, "h": grid.h, "residual": sol.residual_norm,
                                           "iterations": sol.iterations,
                                           "sup_norm": float(np.max(np.abs(sol.values), initial=0.0))})


def cmd_branch(cfg, out):
    spec, f = domain_spec(cfg), cfg_nonlinearity(cfg)
    grid = build_grid(spec, cfg.number("solver", "h"))
    op = assemble(grid)
    br = solver.continue_branch(grid, op, f, _optional(cfg, "solver", "step0"), _optional(cfg, "solver", "step_min"))
    report.write_csv(out / "branch.csv", solver.BRANCH_COLUMNS, solver.branch_rows(br))
    write_field(out / "branch_last", grid, br.points[-1].solution.values, {"lambda": br.points[-1].lam})
    report.write_json(out / "branch.json", {"h": grid.h, "interval": list(br.interval),
                                            "mu1_fold": solver.fold_from_mu1(br), "points": len(br.points)})


def cmd_lambda_star(cfg, out):
    spec, f, lad = domain_spec(cfg), cfg_nonlinearity(cfg), ladder(cfg)
    est = solver.lambda_star(spec, f, lad, lambda_step0=_optional(cfg, "solver", "step0"),
                             step_min=_optional(cfg, "solver", "step_min"))
    rows = [(h, lo, hi, mu, pt) for h, (lo, hi), mu, pt in
            zip(est.hs, est.intervals, est.mu1_estimates, est.point_estimates)]
    report.write_csv(out / "lambda_star.csv", LAMBDA_STAR_COLUMNS, rows)
    report.write_json(out / "lambda_star.json", {
        "m": spec.m, "k": spec.k, "nonlinearity": f.kind, "domain": spec.generator.kind,
        "hs": est.hs, "interval": list(est.intervals[-1]), "intervals": [list(i) for i in est.intervals],
        "mu1_estimates": est.mu1_estimates, "point_estimates": est.point_estimates,
        "extrapolated": est.extrapolated, "order": est.order})
    print(f"lambda* ~ {est.extrapolated:.10g} (finest interval [{est.intervals[-1][0]:.10g}, {est.intervals[-1][1]:.10g}])")


def cmd_stability(cfg, out):
    spec, f, lam = domain_spec(cfg), cfg_nonlinearity(cfg), _lambda(cfg)
    grid, op, sol = _solve_at(cfg, spec, f, lam)
    pot = lam * np.asarray(f.deriv(sol.values), dtype=float) if lam > 0 else None
    rep = stability.smallest_eigenvalue(grid, op, pot)
    write_field(out / "eigenfield", grid, rep.eigenfield, {"lambda": lam, "mu1": rep.mu1})
    report.write_json(out / "stability.json", {"lambda": lam, "h": grid.h, "mu1": rep.mu1,
                                               "residual": rep.residual,
                                               "iterations": len(rep.rayleigh_history)})
    print(f"mu1 = {rep.mu1:.12g}")


def cmd_lemma_check(cfg, out):
    spec, f, lad, fr = domain_spec(cfg), cfg_nonlinearity(cfg), ladder(cfg), fraction(cfg)
    alpha, beta = lemma_exponents(cfg, spec)
    delta = _optional(cfg, "analysis", "lemma_delta")
    rows, energies = [], []
    for h in lad:
        grid = build_grid(spec, h)
        op = assemble(grid)
        br = solver.continue_branch(grid, op, f, compute_mu1=False)
        sol = solver.extremal_approximation(br, fr)
        rep = stability.lemma_inequality_check(grid, sol.values, alpha, beta, delta)
        rows.append((alpha, beta, rep.lhs, rep.rhs, rep.margin, h))
        energies.append(stability.weighted_energy(grid, sol.values, alpha, beta))
    report.write_csv(out / "lemma.csv", LEMMA_COLUMNS, rows)
    report.write_json(out / "lemma.json", {"fraction": fr, "hs": lad, "weighted_energy": energies,
                                           "margins": [r[4] for r in rows]})


def cmd_norms(cfg, out):
    spec, f, lam = domain_spec(cfg), cfg_nonlinearity(cfg), _lambda(cfg)
    p_list = cfg.numbers("analysis", "p_list")
    if any(p < 1 for p in p_list):
        raise ConfigError("analysis.p_list entries must be at least 1")
    grid, _, sol = _solve_at(cfg, spec, f, lam)
    nr = analysis.norms(grid, sol.values, p_list)
    report.write_csv(out / "norms.csv", ["lambda", "h"] + list(nr), [[lam, grid.h] + list(nr.values())])
    report.write_json(out / "norms.json", {"lambda": lam, "h": grid.h, **nr})


def cmd_boundary(cfg, out):
    spec, f, lam = domain_spec(cfg), cfg_nonlinearity(cfg), _lambda(cfg)
    delta = cfg.number("analysis", "delta")
    if not 0 < delta < spec.generator.inradius:
        raise DeltaOutOfRange(f"analysis.delta={delta} must lie in (0, {spec.generator.inradius:.6g})")
    grid, _, sol = _solve_at(cfg, spec, f, lam)
    obs = analysis.boundary_observable(grid, sol.values, delta)
    report.write_json(out / "boundary.json", {"lambda": lam, "h": grid.h, "delta": delta,
                                              "sup_near_boundary": obs.sup_near_boundary,
                                              "l1": obs.l1, "ratio": obs.ratio})


def cmd_refine(cfg, out):
    spec, f, lad, fr = domain_spec(cfg), cfg_nonlinearity(cfg), ladder(cfg), fraction(cfg)
    p_list = cfg.numbers("analysis", "p_list")
    study = analysis.refinement_study(spec, f, fr, lad, p_list)
    cols, rows = study.table()
    report.write_csv(out / "refine.csv", cols, rows)
    report.write_json(out / "refine.json", {"sup_verdict": study.sup_verdict, "lp_verdicts": study.lp_verdicts,
                                            "fraction": fr, "messages": [r.message for r in study.rows]})
    print(f"sup norm: {study.sup_verdict}" + "".join(f"; {k}: {v}" for k, v in study.lp_verdicts.items()))


def _sobolev_job(job):
    a, b, q, master, index = job
    rng = inequalities.instance_rng(master, index)
    u = inequalities.random_monotone_function(rng)
    res = inequalities.sobolev_check(u, a, b, q)
    return (a, b, q, index, res.lhs, res.rhs, res.ratio, bool(np.isfinite(res.ratio)))


def _iso_job(job):
    a, b, master, index = job
    dom = inequalities.random_staircase(inequalities.instance_rng(master, index))
    res = inequalities.isoperimetric_check(dom, a, b)
    return (a, b, math.nan, index, res.lhs, res.rhs, res.lhs / res.rhs, res.passed)


def _exponent_grid(cfg, with_q):
    a_list, b_list = cfg.numbers("inequalities", "a"), cfg.numbers("inequalities", "b")
    q_list = cfg.numbers("inequalities", "q") if with_q else [math.nan]
    cells = []
    for a in a_list:
        for b in b_list:
            if not (a > -1 and b > -1):
                raise ExponentOutOfRange(f"inequalities.a={a}, inequalities.b={b}: need a > -1 and b > -1")
            if max(a, b) <= 0:
                continue
            for q in q_list:
                if with_q and not 1 <= q < a + b + 2:
                    continue
                cells.append((a, b, q))
    if not cells:
        raise ExponentOutOfRange("no admissible (inequalities.a, inequalities.b, inequalities.q) combination")
    return cells


def _sweep_size(cfg):
    n = cfg.integer("inequalities", "sweep_size")
    if n < 1:
        raise ConfigError("inequalities.sweep_size must be positive")
    return n


def cmd_sobolev(cfg, out):
    master, n = cfg.integer("inequalities", "master_seed"), _sweep_size(cfg)
    cells = _exponent_grid(cfg, True)
    jobs = [(a, b, q, master, c * n + i) for c, (a, b, q) in enumerate(cells) for i in range(n)]
    rows = _map(_sobolev_job, jobs)
    report.write_csv(out / "sobolev.csv", SWEEP_COLUMNS, rows)
    sup = {f"a={a:g},b={b:g},q={q:g}": max(r[6] for r in rows if r[:3] == (a, b, q)) for a, b, q in cells}
    report.write_json(out / "sobolev.json", {"master_seed": master, "sweep_size": n, "sup_ratio": sup,
                                             "all_finite": all(r[7] for r in rows)})


def cmd_isoperimetric(cfg, out):
    master, n = cfg.integer("inequalities", "master_seed"), _sweep_size(cfg)
    cells = [(a, b) for a, b, _ in _exponent_grid(cfg, False)]
    jobs = [(a, b, master, c * n + i) for c, (a, b) in enumerate(cells) for i in range(n)]
    rows = _map(_iso_job, jobs)
    report.write_csv(out / "isoperimetric.csv", SWEEP_COLUMNS, rows)
    report.write_json(out / "isoperimetric.json", {
        "master_seed": master, "sweep_size": n, "pass_rate": sum(r[7] for r in rows) / len(rows),
        "constants": {f"a={a:g},b={b:g}": inequalities.isoperimetric_constant(a, b) for a, b in cells}})


def _case_job(job):
    sections, m, k, fkind, dkind = job
    cfg = RunConfig("sweep", sections, Path("."))
    cfg.sections["domain"] = dict(cfg.sections["domain"], m=str(m), k=str(k))
    try:
        spec = domain_spec(cfg, dkind)
        f = make_nonlinearity(fkind, cfg.number("nonlinearity", "p"))
        est = solver.lambda_star(spec, f, ladder(cfg))
        lo, hi = est.intervals[-1]
        return (m, k, m + k, fkind, dkind, lo, hi, est.extrapolated, est.order, False, "")
    except GelfandError as exc:
        return (m, k, m + k, fkind, dkind, math.nan, math.nan, math.nan, math.nan, True, str(exc))


def cmd_sweep(cfg, out):
    cases = []
    for item in cfg.words("sweep", "mk"):
        parts = item.lower().split("x")
        if len(parts) != 2:
            raise ConfigError(f"sweep.mk entry {item!r} must look like 2x3")
        m, k = (_number(p, "sweep.mk") for p in parts)
        analysis.exponents(m, k)  # validates the standing assumption up front
        cases.append((int(m), int(k)))
    fkinds, dkinds = cfg.words("sweep", "nonlinearities"), cfg.words("sweep", "domains")
    for fk in fkinds:
        make_nonlinearity(fk, cfg.number("nonlinearity", "p"))
    for dk in dkinds:
        domain_spec(cfg, dk)
    ladder(cfg)
    jobs = [(cfg.sections, m, k, fk, dk) for m, k in cases for fk in fkinds for dk in dkinds]
    rows = _map(_case_job, jobs)
    report.write_csv(out / "sweep.csv", CASE_COLUMNS, rows)


_HANDLERS = {
    "exponents": cmd_exponents, "solve": cmd_solve, "branch": cmd_branch, "lambda-star": cmd_lambda_star,
    "stability": cmd_stability, "lemma-check": cmd_lemma_check, "norms": cmd_norms,
    "boundary": cmd_boundary, "refine": cmd_refine, "sobolev": cmd_sobolev,
    "isoperimetric": cmd_isoperimetric, "sweep": cmd_sweep,
}

_INVALID = (ConfigError, ConditionViolated, ExponentOutOfRange, DeltaOutOfRange, HypothesisViolated,
            SpacingTooCoarse, LadderTooShort, ValueError)


def run(command, config_path=None, overrides=(), output_dir=None):
    """Execute one command and return its exit code."""
    try:
        cfg = load_config(command, config_path, overrides, output_dir)
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        _HANDLERS[command](cfg, cfg.output_dir)
    except _INVALID as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NoConvergence, IterationStalled) as exc:
        print(f"nonconvergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def main(argv=None):
    parser = argparse.ArgumentParser(prog="gelfand", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("-c", "--config", help="config file with [section] and key = value lines")
    parser.add_argument("-o", "--output-dir", help="output directory (overrides output.dir)")
    parser.add_argument("--master-seed", type=int, help="master seed for random sweeps")
    args, extra = parser.parse_known_args(argv)
    bad = [e for e in extra if not (e.startswith("--") and "." in e.partition("=")[0] and "=" in e)]
    if bad:
        parser.error(f"unrecognized arguments: {' '.join(bad)} (overrides look like --section.key=value)")
    if args.master_seed is not None:
        extra.append(f"--inequalities.master_seed={args.master_seed}")
    return run(args.command, args.config, extra, args.output_dir)


if __name__ == "__main__":
    sys.exit(main())
