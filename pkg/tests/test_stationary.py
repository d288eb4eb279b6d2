import csv
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from rwrelab import rng
from rwrelab.envmodel import Environment, PerturbationSpec, RegimeClass, classify
from rwrelab.errors import DegenerateWindow, NotErgodic, TailUnbounded
from rwrelab.stationary import (
    StationaryDist,
    balance_residuals,
    decay_fit,
    stationary_exact,
    stationary_product,
    write_stationary_csv,
)

from conftest import ERGODIC_SINAI, ERGODIC_SRW, PLAIN_SRW, TRANSIENT_SINAI, constant_spec


@st.composite
def ergodic_specs(draw):
    """Ergodic laws of either family."""
    if draw(st.booleans()):
        x = draw(st.floats(0.25, 0.45))
        y = draw(st.floats(0.05, 0.5))
        alpha = draw(st.floats(0.05, 0.45))
        atoms = [[x, y, 0.5], [1 - x, y, 0.5]]
        spec = PerturbationSpec.build("PerturbedSinai", alpha, 0.2, atoms)
    else:
        y1 = draw(st.floats(0.0, 0.3))
        y2 = draw(st.floats(0.05, 0.3))
        alpha = draw(st.floats(0.1, 0.7))
        spec = PerturbationSpec.build("PerturbedSRW", alpha, 0.2, [[0.5, y1, 0.5], [0.5, y2, 0.5]])
    assume(classify(spec) is RegimeClass.ERGODIC)
    return spec


def test_geometric_chain():
    env = Environment(constant_spec(0.7), 0)
    d = stationary_exact(env, 200)
    pi = np.exp(d.log_pi)
    assert pi[0] == pytest.approx(4 / 9, abs=1e-13)
    assert pi[1] == pytest.approx(20 / 63, abs=1e-13)
    assert np.allclose(pi[2:] / pi[1:-1], 3 / 7, rtol=1e-12)
    assert pi.sum() + d.truncation_tail == pytest.approx(1.0, abs=1e-12)


def test_not_ergodic():
    with pytest.raises(NotErgodic):
        stationary_exact(Environment(PLAIN_SRW, 1), 1000)
    with pytest.raises(NotErgodic):
        stationary_exact(Environment(TRANSIENT_SINAI, 1), 1000)


def test_tail_not_certified():
    with pytest.raises(TailUnbounded):
        stationary_exact(Environment(constant_spec(0.4), 0), 1000)
    with pytest.raises(TailUnbounded):
        # decays, but not fast enough to push the mass past 200 below tolerance
        stationary_exact(Environment(constant_spec(0.51), 0), 200)


def test_ergodic_sinai_mass_and_balance():
    env = Environment(ERGODIC_SINAI, 17)
    d = stationary_exact(env, 100_000)
    assert abs(math.fsum(np.exp(d.log_pi)) - 1.0) <= 1e-10
    live = d.log_pi[:-1] > -700
    assert np.max(balance_residuals(env, d)[live]) <= 1e-12


@given(ergodic_specs(), st.integers(0, 2**63))
@settings(max_examples=40, deadline=None)
def test_normalisation_and_balance(spec, seed):
    env = Environment(spec, seed)
    try:
        d = stationary_exact(env, 20_000)
    except TailUnbounded:
        return
    total = math.fsum(np.exp(d.log_pi)) + d.truncation_tail
    assert abs(total - 1.0) <= 1e-9
    # pi_n below the double range cannot carry 1e-12 relative accuracy in log form
    live = d.log_pi[:-1] > -700
    assert np.max(balance_residuals(env, d)[live]) <= 1e-12


def test_fixed_point_of_one_step():
    env = Environment(ERGODIC_SRW, 3)
    d = stationary_exact(env, 3000)
    pi = np.exp(d.log_pi)
    p = env.probs(d.n_max)
    q = 1 - p
    nxt = np.zeros_like(pi)
    nxt[0] = pi[0] * p[0] + pi[1] * p[1]
    nxt[1:-1] = pi[:-2] * q[:-2] + pi[2:] * p[2:]
    nxt[-1] = pi[-2] * q[-2]  # inflow from n_max + 1 is part of the tail
    assert np.abs(nxt - pi).sum() <= d.truncation_tail + 1e-15


def test_product_formula_examples():
    env = Environment(constant_spec(0.7), 0)
    prod = stationary_product(env, 50)
    assert np.allclose(prod, np.arange(51) * math.log(3 / 7), rtol=0, atol=1e-12)
    env = Environment(ERGODIC_SINAI, 2)
    p1 = env.probs(1)[1]
    assert stationary_product(env, 1)[1] == pytest.approx(math.log((1 - p1) / p1), abs=1e-15)


@given(ergodic_specs(), st.integers(0, 2**63))
@settings(max_examples=40, deadline=None)
def test_product_offset_bounded(spec, seed):
    env = Environment(spec, seed)
    try:
        d = stationary_exact(env, 20_000)
    except TailUnbounded:
        return
    diff = d.log_pi - stationary_product(env, d.n_max)
    bound = 2 * math.log((1 - spec.delta / 2) / (spec.delta / 2))
    assert diff.max() - diff.min() <= bound


def test_decay_fit_synthetic():
    n = np.arange(0, 5001, dtype=np.float64)
    d = StationaryDist(-0.5 * n**0.75, 0.0, 0.0)
    fit = decay_fit(d, 0.25)
    assert fit.prefactor == pytest.approx(0.5, abs=1e-9)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit.window == (500, 5000)


def test_decay_fit_degenerate_window():
    d = StationaryDist(np.zeros(100), 0.0, 0.0)
    with pytest.raises(DegenerateWindow):
        decay_fit(d, 0.25, (10, 15))


@pytest.mark.parametrize("spec, target", [(ERGODIC_SINAI, 5 / 9), (ERGODIC_SRW, 0.8)])
def test_decay_rate_median_over_seeds(spec, target):
    slopes = []
    for i in range(20):
        env = Environment(spec, rng.derive_seed(2024, "env", i))
        slopes.append(decay_fit(stationary_exact(env, 100_000), spec.alpha).prefactor)
    assert abs(np.median(slopes) - target) <= 0.1 * target


def test_stationary_csv(tmp_path):
    env = Environment(ERGODIC_SINAI, 1)
    d = stationary_exact(env, 2000)
    path = tmp_path / "pi.csv"
    write_stationary_csv(path, env, d, 0.25)
    rows = list(csv.DictReader(open(path)))
    assert list(rows[0]) == ["n", "log_pi_exact", "log_pi_paper_product", "n_pow_1_minus_alpha"]
    assert len(rows) == 2001
    assert float(rows[16]["n_pow_1_minus_alpha"]) == pytest.approx(8.0)
