"""Nonlinearities f for -Laplace(u) = lambda f(u), with structural validation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConditionViolated, ConfigError

# geometric sample used to probe monotonicity and superlinear growth
_SAMPLE = np.concatenate([[0.0], np.geomspace(1e-3, 1e3, 241)])


@dataclass(frozen=True)
class Nonlinearity:
    kind: str
    eval: Callable
    deriv: Callable
    params: dict

    def __call__(self, tau):
        return self.eval(tau)


def _validate(f: Nonlinearity):
    with np.errstate(over="ignore", invalid="ignore"):
        vals = np.asarray(f.eval(_SAMPLE), dtype=float)
        if not vals[0] > 0:
            raise ConditionViolated("f(0)>0", 0.0)
        drops = np.flatnonzero(np.diff(vals) < 0)
        if drops.size:
            raise ConditionViolated("f nondecreasing", float(_SAMPLE[drops[0] + 1]))
        lo, hi = float(f.eval(10.0)) / 10.0, float(f.eval(1e3)) / 1e3
    if not hi >= 2.0 * lo:
        raise ConditionViolated("f(tau)/tau -> infinity", 1e3)


def _exp():
    return Nonlinearity("exp", np.exp, np.exp, {})


def _power(p):
    if not p > 1:
        raise ConfigError(f"nonlinearity.p={p} must exceed 1")

    def ev(tau):
        return (1.0 + np.asarray(tau, dtype=float)) ** p

    def dv(tau):
        return p * (1.0 + np.asarray(tau, dtype=float)) ** (p - 1)

    return Nonlinearity("power", ev, dv, {"p": float(p)})


def make(kind, params=None, *, eval=None, deriv=None):
    """Build a nonlinearity: ``exp``, ``power`` (f = (1+u)^p, p > 1) or ``custom``.

    A custom f needs both ``eval`` and ``deriv``.  Every family is checked for
    f(0) > 0, monotonicity and sampled superlinear growth.
    """
    params = dict(params or {})
    if kind == "exp":
        f = _exp()
    elif kind == "power":
        f = _power(float(params.get("p", 2.0)))
    elif kind == "custom":
        if eval is None or deriv is None:
            raise ConfigError("custom nonlinearity requires eval and deriv callables")
        f = Nonlinearity("custom", eval, deriv, params)
    else:
        raise ConfigError(f"nonlinearity.kind={kind!r}: expected exp, power or custom")
    _validate(f)
    return f


def constant(value=1.0):
    """f = value, unvalidated; the linear Poisson problem as a Nonlinearity."""

    def ev(tau):
        return np.full(np.shape(tau), float(value))

    def dv(tau):
        return np.zeros(np.shape(tau))

    return Nonlinearity("constant", ev, dv, {"value": float(value)})
