"""Finite-sample checks of the asymptotic growth, envelope and decay laws.

``fit_growth`` estimates how fast ``log T(n)`` grows, ``envelope_stats``
summarises ``running_max(t) / (log t)**beta`` over many trajectories, and
``theorem_suite`` picks the battery that matches the regime of a spec.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng
from .envmodel import Environment, PerturbationSpec, RegimeClass, Variant, classify, moments
from .errors import DegenerateWindow, Divergent, NotErgodic, RwreError
from .fits import ExponentFit, FitMode, fit_fixed, fit_power, window_sites
from .hittime import (
    LogHitProfile,
    closed_form_delta,
    envelope_bounds_all,
    hit_prob,
    profile,
    submartingale_residual,
)
from .parallel import ordered_map
from .stationary import decay_fit, stationary_exact
from .walker import WalkSummary, mc_return_prob, simulate, transience_audit

__all__ = [
    "ExponentFit",
    "FitMode",
    "EnvelopeStat",
    "Budget",
    "fit_growth",
    "envelope_stats",
    "growth_target",
    "envelope_constant",
    "theorem_suite",
]

FREE_POINTS = 400
QUANTILE_LEVELS = (0.1, 0.25, 0.5, 0.75, 0.9)
MC_RETURN_SITES = (2, 4, 8)


def _default_window(n_max: int) -> tuple[int, int]:
    return max(1, n_max // 10), n_max


def fit_growth(
    prof: LogHitProfile,
    mode: FitMode | str = FitMode.FREE_EXPONENT,
    exponent: float | None = None,
    window: tuple[int, int] | None = None,
    points: int | None = None,
) -> ExponentFit:
    """Fit ``log T(n) ~ c * n**gamma`` over ``window``.

    FreeExponent regresses ``log log T(n)`` on ``log n`` over ``points``
    log-spaced sites (400 by default) and reports the slope as ``gamma``.
    FixedExponent regresses ``log T(n)`` on ``n**exponent`` over every site
    in the window (unless ``points`` is given) and reports the slope as ``c``.
    """
    mode = FitMode(mode)
    lo, hi = window if window is not None else _default_window(prof.n_max)
    if hi > prof.n_max:
        raise DegenerateWindow(f"window reaches {hi} but profile stops at {prof.n_max}")
    if mode is FitMode.FREE_EXPONENT:
        n = window_sites(lo, hi, FREE_POINTS if points is None else points)
        lt = prof.log_T[n]
        if np.any(lt <= 0):
            raise DegenerateWindow("log T(n) must be positive for a log-log fit")
        return fit_power(n, lt, (lo, hi))
    if exponent is None:
        raise ValueError("FixedExponent mode needs an exponent")
    n = window_sites(lo, hi, points)
    return fit_fixed(n, prof.log_T[n], exponent, (lo, hi))


@dataclass(frozen=True)
class EnvelopeStat:
    """Quantiles of ``running_max(t) / (log t)**beta`` across trajectories.

    ``quantiles[i, k]`` is the ``levels[i]`` quantile at ``times[k]``.
    ``fraction_within`` is the share of trajectories whose ratios over the
    last decade of time all lie within ``[0.5, 2]`` times the hypothesis.
    """

    beta: float
    times: np.ndarray
    levels: tuple[float, ...]
    quantiles: np.ndarray
    ratios: np.ndarray = field(repr=False)
    constant_hypothesis: float | None = None
    fraction_within: float | None = None

    def median_at(self, t: int) -> float:
        k = int(np.searchsorted(self.times, t))
        if k >= len(self.times) or self.times[k] != t:
            raise KeyError(f"no checkpoint at t={t}")
        return float(np.median(self.ratios[:, k]))

    @property
    def final_median(self) -> float:
        return float(np.median(self.ratios[:, -1]))


def envelope_stats(
    summaries: list[WalkSummary],
    beta: float,
    constant_hypothesis: float | None = None,
    min_t: int = 100,
    levels: tuple[float, ...] = QUANTILE_LEVELS,
) -> EnvelopeStat:
    """Ratio quantiles at every checkpoint time shared by all summaries with ``t >= min_t``."""
    if not summaries:
        raise ValueError("need at least one summary")
    common = None
    for s in summaries:
        ts = set(int(t) for t in s.checkpoints[:, 0] if t >= min_t)
        common = ts if common is None else common & ts
    times = np.array(sorted(common), dtype=np.int64)
    if len(times) == 0:
        raise ValueError(f"no shared checkpoint at or after t={min_t}")
    ratios = np.empty((len(summaries), len(times)))
    scale = np.log(times.astype(np.float64)) ** beta
    for r, s in enumerate(summaries):
        lookup = dict(zip(s.checkpoints[:, 0].tolist(), s.checkpoints[:, 2].tolist()))
        ratios[r] = [lookup[int(t)] for t in times]
    ratios /= scale
    q = np.quantile(ratios, levels, axis=0)
    frac = None
    if constant_hypothesis is not None:
        last = times >= times[-1] / 10.0
        tail = ratios[:, last]
        ok = np.all((tail >= 0.5 * constant_hypothesis) & (tail <= 2.0 * constant_hypothesis), axis=1)
        frac = float(ok.mean())
    return EnvelopeStat(float(beta), times, tuple(levels), q, ratios, constant_hypothesis, frac)


@dataclass(frozen=True)
class Budget:
    """Resources for one suite run: sites per environment, steps per walk,
    walks per environment, and number of environments."""

    n_max: int = 10_000
    steps: int = 0
    replicates: int = 0
    env_seeds: int = 5

    def __post_init__(self):
        if self.n_max < 10:
            raise ValueError("n_max must be at least 10")
        if self.steps < 0 or self.replicates < 0:
            raise ValueError("steps and replicates must be nonnegative")
        if self.env_seeds < 1:
            raise ValueError("env_seeds must be at least 1")


def growth_target(spec: PerturbationSpec, regime: RegimeClass | None = None) -> tuple[FitMode, float, float | None]:
    """``(mode, exponent, prefactor)`` expected for ``log T(n)``, or raise
    ``ValueError`` where no growth law is known."""
    regime = classify(spec) if regime is None else regime
    m = moments(spec)
    a = spec.alpha
    sinai = spec.variant is Variant.PERTURBED_SINAI
    if regime is RegimeClass.ERGODIC:
        c = (m.lam if sinai else 4.0 * m.mean_y) / (1.0 - a)
        return FitMode.FIXED_EXPONENT, 1.0 - a, c
    if regime is RegimeClass.TRANSIENT and sinai:
        return FitMode.FREE_EXPONENT, a, None
    if regime is RegimeClass.NULL_RECURRENT:
        if sinai:
            return FitMode.FREE_EXPONENT, 0.5, None
        if m.symmetric_balance and m.sigma2 > 0 and a < 0.5:
            return FitMode.FREE_EXPONENT, (1.0 - 2.0 * a) / 2.0, None
    raise ValueError("no growth law for this regime")


def envelope_constant(spec: PerturbationSpec) -> tuple[float, float]:
    """``(beta, C)`` with ``running_max(t) ~ C (log t)**beta`` in ergodic regimes."""
    if classify(spec) is not RegimeClass.ERGODIC:
        raise NotErgodic("envelope constants are known only for ergodic laws")
    m = moments(spec)
    a = spec.alpha
    rate = m.lam if spec.variant is Variant.PERTURBED_SINAI else 4.0 * m.mean_y
    return 1.0 / (1.0 - a), ((1.0 - a) / rate) ** (1.0 / (1.0 - a))


def envelope_beta(spec: PerturbationSpec, regime: RegimeClass) -> float | None:
    a = spec.alpha
    if regime is RegimeClass.ERGODIC:
        return 1.0 / (1.0 - a)
    if spec.variant is Variant.PERTURBED_SINAI:
        if regime is RegimeClass.TRANSIENT:
            return 1.0 / a
        if regime is RegimeClass.NULL_RECURRENT:
            return 2.0
    elif regime is RegimeClass.NULL_RECURRENT and moments(spec).symmetric_balance and a < 0.5:
        return 2.0 / (1.0 - 2.0 * a)
    return None


# ---------------------------------------------------------------- suite


def _growth_window(n_max: int) -> tuple[int, int]:
    return (1000, n_max) if n_max >= 10_000 else _default_window(n_max)


def _identity_measures(env: Environment, prof: LogHitProfile, n_max: int) -> dict:
    idx = np.unique(np.linspace(0, min(n_max - 1, 20_000), 200).astype(np.int64))
    cf_err = 0.0
    for i in idx:
        ref = prof.log_delta[i]
        cf = closed_form_delta(env, int(i))
        cf_err = max(cf_err, abs(cf - ref) / max(abs(ref), 1.0))
    res = max(abs(submartingale_residual(env, prof, n, scaled=True)) for n in range(min(201, n_max)))
    lower, upper, _ = envelope_bounds_all(env, n_max)
    viol = 0
    k = 10
    while k <= n_max:
        lt = prof.log_T[k]
        if not (lower[k] <= lt <= upper[k]):
            viol += 1
        k *= 10
    return {"closed_form": cf_err, "submartingale": res, "sandwich_violations": viol}


def _env_battery(job) -> dict:
    spec, budget, master_seed, index, regime = job
    env_seed = rng.derive_seed(master_seed, "env", index)
    walk_seed = rng.derive_seed(master_seed, "walk", index)
    env = Environment(spec, env_seed, max_sites=max(budget.n_max + 1, 10**8))
    n_max = budget.n_max
    prof = profile(env, n_max)
    out = {"env_seed": env_seed, "walk_seed": walk_seed}
    out.update(_identity_measures(env, prof, n_max))
    m = moments(spec)
    if m.sigma2 <= 0 and spec.variant is Variant.PERTURBED_SRW:
        n = np.arange(1, n_max + 1, dtype=np.float64)
        exact = np.log(n) + np.log(n + 1)
        out["srw_exact"] = float(np.max(np.abs(prof.log_T[1:] - exact)))
    try:
        mode, gamma, _ = growth_target(spec, regime)
        fit = fit_growth(prof, mode, gamma, _growth_window(n_max))
        out["growth"] = fit.prefactor if mode is FitMode.FIXED_EXPONENT else fit.exponent
    except (ValueError, DegenerateWindow):
        pass
    if regime is RegimeClass.ERGODIC:
        try:
            dist = stationary_exact(env, n_max)
            out["decay"] = decay_fit(dist, spec.alpha).prefactor
            out["mass_tail"] = dist.truncation_tail
        except RwreError as exc:
            out["decay_error"] = type(exc).__name__
    if regime is RegimeClass.TRANSIENT:
        try:
            probs = [hit_prob(env, n, 2 * n).a for n in range(1, 101)]
            out["return_range"] = [min(probs), max(probs)]
            out["return_sum"] = math.fsum(probs)
        except Divergent:
            out["return_error"] = "Divergent"
        if budget.replicates > 0 and "return_error" not in out:
            z = 0.0
            for n in MC_RETURN_SITES:
                est = mc_return_prob(env, n, budget.replicates, seed=walk_seed)
                a = hit_prob(env, n, 2 * n).a
                allowed = 3 * est.std_error + (est.bias_bound if math.isfinite(est.bias_bound) else 0.0)
                z = max(z, abs(est.estimate - a) - allowed)
            out["mc_return_excess"] = z
    beta = envelope_beta(spec, regime)
    if beta is not None and budget.steps >= 1000 and budget.replicates > 0:
        summaries = [simulate(env, budget.steps, walk_seed, replicate=r) for r in range(budget.replicates)]
        stat = envelope_stats(summaries, beta)
        out["envelope_ratios"] = stat.ratios[:, -1].tolist()
        out["envelope_max"] = float(stat.ratios.max())
        if regime is RegimeClass.TRANSIENT:
            out["audit"] = [len(transience_audit(env, s)) for s in summaries]
    return out


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, (np.floating,)):
        return _clean(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def _check(name, target, measured, tolerance, passed) -> dict:
    return {
        "name": name,
        "target": _clean(target),
        "measured": _clean(measured),
        "tolerance": _clean(tolerance),
        "pass": None if passed is None else bool(passed),
    }


def theorem_suite(spec: PerturbationSpec, budget: Budget, master_seed: int = 0, workers: int = 1) -> dict:
    """Run the battery matching ``classify(spec)`` and return a JSON-ready report.

    The exact identities always run.  Regime checks aggregate over
    environments with medians.  Lower bounds that only hold for infinitely
    many ``t`` are reported as witnesses with ``pass = None``.
    """
    regime = classify(spec)
    jobs = [(spec, budget, master_seed, i, regime) for i in range(budget.env_seeds)]
    per_env = ordered_map(_env_battery, jobs, workers)
    checks = [
        _check("closed_form_vs_recursion", 0.0, max(e["closed_form"] for e in per_env), 1e-9,
               max(e["closed_form"] for e in per_env) <= 1e-9),
        _check("submartingale_residual", 0.0, max(e["submartingale"] for e in per_env), 1e-9,
               max(e["submartingale"] for e in per_env) <= 1e-9),
        _check("sandwich_violations", 0, sum(e["sandwich_violations"] for e in per_env), 0,
               sum(e["sandwich_violations"] for e in per_env) == 0),
    ]
    if "srw_exact" in per_env[0]:
        err = max(e["srw_exact"] for e in per_env)
        checks.append(_check("srw_hitting_time_exact", 0.0, err, 1e-9, err <= 1e-9))
    if regime is not RegimeClass.UNKNOWN:
        checks.extend(_regime_checks(spec, budget, regime, per_env))
    return {
        "regime": regime.value,
        "checks": checks,
        "seeds": {
            "master": int(master_seed),
            "env": [e["env_seed"] for e in per_env],
            "walk": [e["walk_seed"] for e in per_env],
        },
        "budget": asdict(budget),
    }


def _regime_checks(spec, budget, regime, per_env) -> list[dict]:
    checks = []
    growth = [e["growth"] for e in per_env if "growth" in e]
    if growth:
        mode, gamma, pref = growth_target(spec, regime)
        med = float(np.median(growth))
        if mode is FitMode.FIXED_EXPONENT:
            checks.append(_check(f"growth_prefactor_fixed_{gamma:g}", pref, med, 0.1 * pref,
                                 abs(med - pref) <= 0.1 * pref))
        else:
            checks.append(_check("growth_exponent_free", gamma, med, 0.05, abs(med - gamma) <= 0.05))
    if regime is RegimeClass.ERGODIC:
        _, _, pref = growth_target(spec, regime)
        decay = [e["decay"] for e in per_env if "decay" in e]
        if decay:
            med = float(np.median(decay))
            checks.append(_check("stationary_decay_prefactor", pref, med, 0.1 * pref,
                                 abs(med - pref) <= 0.1 * pref))
        else:
            checks.append(_check("stationary_decay_prefactor", pref, None, 0.1 * pref, False))
    if regime is RegimeClass.TRANSIENT:
        rr = [e for e in per_env if "return_range" in e]
        if rr:
            lo = min(e["return_range"][0] for e in rr)
            hi = max(e["return_range"][1] for e in rr)
            checks.append(_check("return_prob_in_unit_interval", [0.0, 1.0], [lo, hi], 0.0,
                                 0.0 <= lo and hi <= 1.0 and len(rr) == len(per_env)))
            total = max(e["return_sum"] for e in rr)
            checks.append(_check("return_prob_sum_finite", None, total, None, math.isfinite(total)))
        mc = [e["mc_return_excess"] for e in per_env if "mc_return_excess" in e]
        if mc:
            checks.append(_check("mc_return_agreement", 0.0, max(mc), "3 SE + bias bound", max(mc) <= 0.0))
    ratios = [r for e in per_env for r in e.get("envelope_ratios", [])]
    if ratios:
        med = float(np.median(ratios))
        if regime is RegimeClass.ERGODIC:
            _, c = envelope_constant(spec)
            checks.append(_check("envelope_median_ratio", c, med, "factor 2", 0.5 * c <= med <= 2.0 * c))
        elif regime is RegimeClass.TRANSIENT:
            checks.append(_check("envelope_ratio_order", None, med, None, math.isfinite(med) and med > 0))
        witness = max(e["envelope_max"] for e in per_env if "envelope_max" in e)
        checks.append(_check("envelope_lower_bound_witness", None, witness, None, None))
    return checks
