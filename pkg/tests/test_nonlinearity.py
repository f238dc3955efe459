import math

import numpy as np
import pytest

from gelfand import nonlinearity
from gelfand.errors import ConditionViolated, ConfigError


def test_exp_values():
    f = nonlinearity.make("exp")
    assert f(0.0) == 1.0
    assert f.deriv(3.0) == pytest.approx(math.exp(3.0), rel=1e-15)
    assert f.deriv(3.0) == pytest.approx(20.0855, abs=1e-4)


def test_power_values():
    f = nonlinearity.make("power", {"p": 2})
    assert f(1.0) == 4.0
    assert f.deriv(1.0) == 4.0


@pytest.mark.parametrize("kind,params", [("exp", None), ("power", {"p": 2}), ("power", {"p": 3.5})])
def test_derivative_matches_finite_differences(kind, params):
    f = nonlinearity.make(kind, params)
    tau = np.linspace(0.0, 50.0, 201)
    eps = 1e-6 * np.maximum(1.0, tau)
    fd = (f(tau + eps) - f(tau - eps)) / (2 * eps)
    assert np.max(np.abs(fd - f.deriv(tau)) / np.abs(f.deriv(tau))) < 1e-6


def test_custom_zero_at_origin_rejected():
    with pytest.raises(ConditionViolated) as info:
        nonlinearity.make("custom", eval=lambda x: np.asarray(x, float), deriv=lambda x: np.ones_like(x))
    assert info.value.condition == "f(0)>0"
    assert info.value.witness == 0.0


def test_custom_decreasing_rejected():
    with pytest.raises(ConditionViolated, match="nondecreasing"):
        nonlinearity.make("custom", eval=lambda x: 1.0 + np.sin(x) + 0.01 * np.asarray(x) ** 2,
                          deriv=lambda x: np.cos(x) + 0.02 * np.asarray(x))


def test_custom_linear_growth_rejected():
    with pytest.raises(ConditionViolated, match="infinity"):
        nonlinearity.make("custom", eval=lambda x: 1.0 + np.asarray(x, float), deriv=lambda x: np.ones_like(x))


def test_custom_superlinear_accepted():
    f = nonlinearity.make("custom", eval=lambda x: (1 + np.asarray(x)) * np.log(np.e + np.asarray(x)) ** 2,
                          deriv=lambda x: np.ones_like(x))
    assert f.kind == "custom"


def test_bad_parameters():
    with pytest.raises(ConfigError, match="nonlinearity.p"):
        nonlinearity.make("power", {"p": 1.0})
    with pytest.raises(ConfigError, match="nonlinearity.kind"):
        nonlinearity.make("sinh")
    with pytest.raises(ConfigError):
        nonlinearity.make("custom", eval=np.exp)


def test_constant_is_flat():
    f = nonlinearity.constant(2.5)
    assert np.all(f(np.arange(4.0)) == 2.5)
    assert np.all(f.deriv(np.arange(4.0)) == 0)
