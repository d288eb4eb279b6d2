import math

import pytest
from hypothesis import strategies as st

from rwrelab.envmodel import Environment, PerturbationSpec

# Reference laws used across the suite.
ERGODIC_SINAI = PerturbationSpec.build("PerturbedSinai", 0.25, 0.2, [[0.4, 0.1, 0.5], [0.6, 0.1, 0.5]])
TRANSIENT_SINAI = PerturbationSpec.build("PerturbedSinai", 0.3, 0.2, [[0.4, -0.1, 0.5], [0.6, -0.1, 0.5]])
ERGODIC_SRW = PerturbationSpec.build("PerturbedSRW", 0.5, 0.2, [[0.5, 0.0, 0.5], [0.5, 0.2, 0.5]])
TRANSIENT_SRW = PerturbationSpec.build("PerturbedSRW", 0.3, 0.2, [[0.5, -0.05, 0.5], [0.5, -0.25, 0.5]])
SYMMETRIC_SRW = PerturbationSpec.build("PerturbedSRW", 0.25, 0.1, [[0.5, 1.0, 0.5], [0.5, -1.0, 0.5]])
PLAIN_SRW = PerturbationSpec.build("PerturbedSRW", 1.0, 0.2, [[0.5, 0.0, 1.0]])


def constant_spec(p: float) -> PerturbationSpec:
    """Law whose environment is p_n = p for every n >= 1."""
    return PerturbationSpec.build("PerturbedSinai", 1.0, 0.2, [[p, 0.0, 1.0]])


@pytest.fixture
def srw_env():
    return Environment(PLAIN_SRW, 1)


@pytest.fixture
def const04_env():
    return Environment(constant_spec(0.4), 1)


@st.composite
def specs(draw, variant=None):
    variant = variant or draw(st.sampled_from(["PerturbedSinai", "PerturbedSRW"]))
    delta = draw(st.floats(0.01, 0.45))
    alpha = draw(st.floats(0.05, 3.0))
    k = draw(st.integers(1, 4))
    raw = [draw(st.integers(1, 20)) for _ in range(k)]
    total = sum(raw)
    atoms = []
    for r in raw:
        xi = 0.5 if variant == "PerturbedSRW" else draw(st.floats(delta, 1 - delta))
        y = draw(st.floats(-1.0, 1.0))
        atoms.append([xi, y, r / total])
    # make the weights sum to 1 exactly in floating point
    atoms[-1][2] = 1.0 - math.fsum(a[2] for a in atoms[:-1])
    return PerturbationSpec.build(variant, alpha, delta, atoms)


# ---- acceptance summary: one line per criterion at the end of the run

_CRITERIA: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if report.when == "call":
        for key, value in report.user_properties:
            if key == "criterion":
                _CRITERIA[value.split(":")[0]] = value


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for key in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[key])
