import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rwrelab.envmodel import Environment, PerturbationSpec, RegimeClass
from rwrelab.errors import DegenerateWindow
from rwrelab.hittime import LogHitProfile
from rwrelab.speedlab import (
    Budget,
    FitMode,
    envelope_constant,
    envelope_stats,
    fit_growth,
    growth_target,
    theorem_suite,
)
from rwrelab.walker import WalkSummary, simulate

from conftest import ERGODIC_SINAI, ERGODIC_SRW, PLAIN_SRW, SYMMETRIC_SRW, TRANSIENT_SINAI


def _synthetic_profile(c: float, gamma: float, n_max: int) -> LogHitProfile:
    n = np.arange(n_max + 1, dtype=np.float64)
    lt = c * n**gamma
    lt[0] = -np.inf
    return LogHitProfile(np.full(n_max, np.nan), lt)


def _synthetic_summary(times, maxima) -> WalkSummary:
    ck = np.column_stack([times, maxima, maxima]).astype(np.int64)
    return WalkSummary(int(times[-1]), 0, 0, 0, int(maxima[-1]), int(maxima[-1]), ck, np.zeros(1), np.zeros(1))


# ---- growth fits


def test_synthetic_growth_fits():
    prof = _synthetic_profile(2.0, 0.25, 10_000)
    free = fit_growth(prof, FitMode.FREE_EXPONENT)
    assert free.exponent == pytest.approx(0.25, abs=1e-9)
    assert free.mode is FitMode.FREE_EXPONENT
    fixed = fit_growth(prof, "FixedExponent", 0.25)
    assert fixed.prefactor == pytest.approx(2.0, abs=1e-9)
    assert fixed.exponent == 0.25
    assert fixed.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fixed.window == (1000, 10_000)


@given(st.floats(0.05, 20.0), st.floats(0.1, 0.9))
@settings(max_examples=50, deadline=None)
def test_fit_recovers_exact_inputs(c, gamma):
    prof = _synthetic_profile(c, gamma, 20_000)
    free = fit_growth(prof, "FreeExponent")
    assert free.exponent == pytest.approx(gamma, abs=1e-9)
    assert free.prefactor == pytest.approx(c, rel=1e-9)
    fixed = fit_growth(prof, "FixedExponent", gamma)
    assert fixed.prefactor == pytest.approx(c, rel=1e-9)


@given(st.floats(0.01, 100.0))
@settings(max_examples=30, deadline=None)
def test_scaling_log_T_moves_only_the_intercept(k):
    env = Environment(ERGODIC_SINAI, 3)
    from rwrelab.hittime import profile

    prof = profile(env, 5000)
    scaled = LogHitProfile(prof.log_delta, prof.log_T * k)
    a, b = fit_growth(prof), fit_growth(scaled)
    assert b.exponent == pytest.approx(a.exponent, abs=1e-9)
    assert b.intercept - a.intercept == pytest.approx(math.log(k), abs=1e-9)


def test_degenerate_windows():
    prof = _synthetic_profile(1.0, 0.5, 100)
    with pytest.raises(DegenerateWindow):
        fit_growth(prof, "FixedExponent", 0.5, (10, 15))
    with pytest.raises(DegenerateWindow):
        fit_growth(prof, "FreeExponent", window=(10, 500))
    with pytest.raises(ValueError):
        fit_growth(prof, "FixedExponent")


def test_growth_targets():
    assert growth_target(ERGODIC_SINAI) == (FitMode.FIXED_EXPONENT, 0.75, pytest.approx(5 / 9))
    assert growth_target(ERGODIC_SRW) == (FitMode.FIXED_EXPONENT, 0.5, pytest.approx(0.8))
    assert growth_target(SYMMETRIC_SRW) == (FitMode.FREE_EXPONENT, 0.25, None)
    assert growth_target(TRANSIENT_SINAI) == (FitMode.FREE_EXPONENT, 0.3, None)
    with pytest.raises(ValueError):
        growth_target(PLAIN_SRW)


def test_envelope_constants():
    beta, c = envelope_constant(ERGODIC_SRW)
    assert beta == 2.0 and c == pytest.approx(1.5625)
    beta, c = envelope_constant(ERGODIC_SINAI)
    assert beta == pytest.approx(4 / 3) and c == pytest.approx((0.75 / (5 / 12)) ** (4 / 3))


# ---- envelope statistics


def test_synthetic_envelope_ratio():
    t = np.unique(np.geomspace(100, 10**9, 60).astype(np.int64))
    mx = np.floor(3 * np.log(t) ** 2)
    stat = envelope_stats([_synthetic_summary(t, mx)] * 3, 2.0, constant_hypothesis=3.0)
    r = stat.ratios[0]
    assert np.all(r > 0) and np.all(r <= 3)
    assert r[-1] == pytest.approx(3.0, abs=1e-2)
    assert stat.fraction_within == 1.0
    assert stat.median_at(int(t[-1])) == pytest.approx(r[-1])


@given(st.lists(st.integers(1, 10_000), min_size=3, max_size=12), st.randoms(use_true_random=False))
@settings(max_examples=50, deadline=None)
def test_envelope_quantiles_monotone_and_order_free(finals, rnd):
    t = np.array([100, 1000, 10_000])
    sums = [_synthetic_summary(t, np.array([1, max(1, f // 2), f])) for f in finals]
    a = envelope_stats(sums, 2.0)
    shuffled = list(sums)
    rnd.shuffle(shuffled)
    b = envelope_stats(shuffled, 2.0)
    assert np.array_equal(a.quantiles, b.quantiles)
    assert np.all(np.diff(a.quantiles, axis=0) >= 0)
    assert np.all(a.ratios > 0)


def test_envelope_uses_shared_times_only():
    a = _synthetic_summary(np.array([50, 100, 200, 400]), np.array([1, 2, 3, 4]))
    b = _synthetic_summary(np.array([100, 400]), np.array([2, 5]))
    stat = envelope_stats([a, b], 1.0)
    assert stat.times.tolist() == [100, 400]


def test_transient_envelope_is_finite_and_walks_escape():
    env = Environment(TRANSIENT_SINAI, 5)
    sched = [10**4, 10**5, 10**6, 10**7]
    sums = [simulate(env, 10**7, k, sched) for k in range(20)]
    stat = envelope_stats(sums, 1 / 0.3)
    assert math.isfinite(stat.final_median) and stat.final_median > 0
    final = np.array([s.position for s in sums])
    early = np.array([s.checkpoints[1, 1] for s in sums])
    assert np.all(final > 100)
    assert np.median(final) > 2 * np.median(early)


# ---- suite


def _names(report):
    return {c["name"]: c for c in report["checks"]}


def test_suite_plain_srw():
    report = theorem_suite(PLAIN_SRW, Budget(n_max=10_000, env_seeds=2), master_seed=1)
    assert report["regime"] == "NullRecurrent"
    checks = _names(report)
    for name in ("submartingale_residual", "sandwich_violations", "closed_form_vs_recursion", "srw_hitting_time_exact"):
        assert checks[name]["pass"] is True
    json.dumps(report, allow_nan=False)


def test_suite_ergodic_sinai_includes_rate_checks():
    report = theorem_suite(ERGODIC_SINAI, Budget(n_max=20_000, steps=100_000, replicates=2, env_seeds=2), 3)
    checks = _names(report)
    assert report["regime"] == "Ergodic"
    assert {"growth_prefactor_fixed_0.75", "stationary_decay_prefactor", "envelope_median_ratio"} <= set(checks)
    assert checks["envelope_lower_bound_witness"]["pass"] is None
    assert checks["stationary_decay_prefactor"]["target"] == pytest.approx(5 / 9)


def test_suite_unknown_runs_identities_only():
    spec = PerturbationSpec.build(
        "PerturbedSinai", 0.3, 0.2, [[0.4, 0.2, 0.25], [0.4, -0.2, 0.25], [0.6, 0.1, 0.25], [0.6, -0.1, 0.25]]
    )
    report = theorem_suite(spec, Budget(n_max=1000, env_seeds=2), 1)
    assert report["regime"] == "Unknown"
    assert {c["name"] for c in report["checks"]} == {
        "closed_form_vs_recursion",
        "submartingale_residual",
        "sandwich_violations",
    }


def test_suite_transient_battery():
    report = theorem_suite(TRANSIENT_SINAI, Budget(n_max=20_000, replicates=500, env_seeds=2), 4)
    checks = _names(report)
    assert checks["return_prob_in_unit_interval"]["pass"] is True
    assert checks["return_prob_sum_finite"]["pass"] is True
    assert "mc_return_agreement" in checks


def test_suite_is_deterministic():
    budget = Budget(n_max=5000, steps=20_000, replicates=3, env_seeds=3)
    a = theorem_suite(ERGODIC_SRW, budget, 9, workers=1)
    b = theorem_suite(ERGODIC_SRW, budget, 9, workers=3)
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_budget_validation():
    with pytest.raises(ValueError):
        Budget(n_max=5)
    with pytest.raises(ValueError):
        Budget(env_seeds=0)
