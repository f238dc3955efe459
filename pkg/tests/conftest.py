import sys
import warnings
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gelfand import nonlinearity, solver  # noqa: E402
from gelfand.geometry import DomainSpec, QuarterDisc  # noqa: E402

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}

_LAMBDA_STAR_CACHE = {}


def lambda_star_case(kind, m, k):
    """Shared three-grid lambda* estimate for the unit ball (cached per session)."""
    key = (kind, m, k)
    if key not in _LAMBDA_STAR_CACHE:
        f = nonlinearity.make(kind, {"p": 2.0} if kind == "power" else None)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _LAMBDA_STAR_CACHE[key] = solver.lambda_star(DomainSpec(m, k, QuarterDisc()), f)
    return _LAMBDA_STAR_CACHE[key]


@pytest.fixture(scope="session")
def ball_lambda_star():
    return lambda_star_case


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
