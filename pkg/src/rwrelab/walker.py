"""Quenched trajectories of the walk and Monte Carlo estimators.

From ``n >= 1`` the walk steps to ``n - 1`` with probability ``p_n`` and to
``n + 1`` otherwise; from 0 it holds with probability ``p_0`` and steps to 1
otherwise.  Step ``t`` of replicate ``r`` consumes the draw at counter ``t`` of
the walk stream keyed by ``(seed, r)``, independent of the environment stream.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from functools import partial
from typing import NamedTuple, Sequence

import numba
import numpy as np

from . import rng
from .envmodel import Environment
from .hittime import hit_prob
from .errors import Divergent
from .parallel import ordered_map


def walk_key(seed: int, replicate: int = 0) -> int:
    return rng.replicate_key(rng.stream_key(seed, "walk"), replicate)


def geometric_schedule(steps: int, ratio: float = 1.5) -> np.ndarray:
    """Checkpoint times ``0, floor(ratio**k) <= steps, ..., steps``."""
    times = {0, steps}
    k = 0
    while True:
        t = math.floor(ratio**k)
        if t > steps:
            break
        times.add(t)
        k += 1
    return np.array(sorted(times), dtype=np.int64)


@dataclass(frozen=True)
class WalkSummary:
    """Compact record of one trajectory of ``steps`` steps from the origin.

    ``checkpoints`` rows are ``(t, position, running_max)``.  ``first_hit[n]``
    and ``last_visit[n]`` are the first and (so far) last times at site ``n``
    for ``n <= running_max``.
    """

    steps: int
    seed: int
    replicate: int
    env_seed: int
    position: int
    running_max: int
    checkpoints: np.ndarray
    first_hit: np.ndarray
    last_visit: np.ndarray

    @property
    def first_hits(self) -> dict[int, int]:
        return {n: int(t) for n, t in enumerate(self.first_hit)}

    @property
    def last_visits(self) -> dict[int, int]:
        return {n: int(t) for n, t in enumerate(self.last_visit) if t >= 0}


@numba.njit(cache=True)
def _walk_kernel(p, key, t, steps, pos, runmax, ck_times, ck_i, ck_out, first_hit, last_visit):
    cap = len(p) - 1
    n_ck = len(ck_times)
    while t < steps and pos < cap:
        u = rng.uniform_jit(key, t)
        if pos == 0:
            if u >= p[0]:
                pos = 1
        elif u < p[pos]:
            pos -= 1
        else:
            pos += 1
        t += 1
        last_visit[pos] = t
        if pos > runmax:
            runmax = pos
            first_hit[pos] = t
        while ck_i < n_ck and ck_times[ck_i] == t:
            ck_out[ck_i, 0] = t
            ck_out[ck_i, 1] = pos
            ck_out[ck_i, 2] = runmax
            ck_i += 1
    return t, pos, runmax, ck_i


def simulate(
    env: Environment,
    steps: int,
    seed: int,
    checkpoint_schedule: Sequence[int] | None = None,
    replicate: int = 0,
) -> WalkSummary:
    """Run the quenched chain for ``steps`` steps from 0."""
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    ck = geometric_schedule(steps) if checkpoint_schedule is None else np.unique(
        np.asarray(checkpoint_schedule, dtype=np.int64)
    )
    ck = ck[(ck >= 0) & (ck <= steps)]
    ck_out = np.zeros((len(ck), 3), dtype=np.int64)
    key = np.uint64(walk_key(seed, replicate))
    size = min(steps, 4096) + 2
    first_hit = np.full(size, -1, dtype=np.int64)
    last_visit = np.full(size, -1, dtype=np.int64)
    first_hit[0] = 0
    last_visit[0] = 0
    ck_i = 0
    while ck_i < len(ck) and ck[ck_i] == 0:
        ck_i += 1  # rows for t = 0 are already (0, 0, 0)
    t, pos, runmax = 0, 0, 0
    while True:
        p = np.ascontiguousarray(env.probs(size - 1))
        t, pos, runmax, ck_i = _walk_kernel(
            p, key, t, steps, pos, runmax, ck, ck_i, ck_out, first_hit, last_visit
        )
        if t >= steps:
            break
        grow = min(2 * size, steps + 2)
        first_hit = np.concatenate([first_hit, np.full(grow - size, -1, dtype=np.int64)])
        last_visit = np.concatenate([last_visit, np.full(grow - size, -1, dtype=np.int64)])
        size = grow
    return WalkSummary(
        steps=steps,
        seed=seed,
        replicate=replicate,
        env_seed=env.seed,
        position=int(pos),
        running_max=int(runmax),
        checkpoints=ck_out,
        first_hit=first_hit[: runmax + 1].copy(),
        last_visit=last_visit[: runmax + 1].copy(),
    )


def _simulate_one(args):
    env, steps, seed, schedule, r = args
    return simulate(env, steps, seed, schedule, replicate=r)


def simulate_many(env, steps, seed, replicates, checkpoint_schedule=None, workers=1) -> list[WalkSummary]:
    """Replicates ``0..replicates-1`` of :func:`simulate`, in replicate order."""
    jobs = [(env, steps, seed, checkpoint_schedule, r) for r in range(replicates)]
    return ordered_map(_simulate_one, jobs, workers)


@numba.njit(cache=True)
def _positions_kernel(p, keys, t_final):
    out = np.empty(len(keys), dtype=np.int64)
    for r in range(len(keys)):
        pos = 0
        key = keys[r]
        for t in range(t_final):
            u = rng.uniform_jit(key, t)
            if pos == 0:
                if u >= p[0]:
                    pos = 1
            elif u < p[pos]:
                pos -= 1
            else:
                pos += 1
        out[r] = pos
    return out


def _keys(seed: int, replicates: int) -> np.ndarray:
    base = rng.stream_key(seed, "walk")
    return np.array([rng.replicate_key(base, r) for r in range(replicates)], dtype=np.uint64)


def mc_positions(env: Environment, t: int, replicates: int, seed: int) -> np.ndarray:
    """Positions at time ``t`` of ``replicates`` independent walks from 0."""
    p = np.ascontiguousarray(env.probs(t + 1))
    return _positions_kernel(p, _keys(seed, replicates), t)


@numba.njit(cache=True)
def _hit_kernel(p, keys, target, step_cap):
    out = np.empty(len(keys), dtype=np.int64)
    for r in range(len(keys)):
        pos = 0
        t = 0
        key = keys[r]
        while pos < target and t < step_cap:
            u = rng.uniform_jit(key, t)
            if pos == 0:
                if u >= p[0]:
                    pos = 1
            elif u < p[pos]:
                pos -= 1
            else:
                pos += 1
            t += 1
        out[r] = t if pos == target else -1
    return out


class HitEstimate(NamedTuple):
    mean: float
    std_error: float
    censored_count: int
    replicates: int


def mc_hit_times(env: Environment, n: int, replicates: int, step_cap: int, seed: int = 0) -> np.ndarray:
    """Raw first-passage times to ``n`` from 0; ``-1`` marks censored runs."""
    p = np.ascontiguousarray(env.probs(n))
    return _hit_kernel(p, _keys(seed, replicates), n, step_cap)


def mc_mean_hit(env: Environment, n: int, replicates: int, step_cap: int, seed: int = 0) -> HitEstimate:
    """Sample mean of the first passage time ``0 -> n``.

    Runs that reach ``step_cap`` are counted as censored and excluded from
    the mean, which is then biased low; a warning is issued when that happens.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    times = mc_hit_times(env, n, replicates, step_cap, seed)
    done = times[times >= 0].astype(np.float64)
    censored = int(replicates - len(done))
    if censored:
        warnings.warn(f"{censored} of {replicates} runs censored at {step_cap} steps; mean is biased low")
    if len(done) == 0:
        return HitEstimate(math.nan, math.nan, censored, replicates)
    se = float(done.std(ddof=1) / math.sqrt(len(done))) if len(done) > 1 else math.nan
    return HitEstimate(float(done.mean()), se, censored, replicates)


@numba.njit(cache=True)
def _return_kernel(p, keys, start, target, threshold, step_cap):
    hits = 0
    censored = 0
    for r in range(len(keys)):
        pos = start
        t = 0
        key = keys[r]
        while pos != target and pos != threshold and t < step_cap:
            u = rng.uniform_jit(key, t)
            if u < p[pos]:
                pos -= 1
            else:
                pos += 1
            t += 1
        if pos == target:
            hits += 1
        elif pos != threshold:
            censored += 1
    return hits, censored


class ReturnEstimate(NamedTuple):
    estimate: float
    std_error: float
    bias_bound: float
    censored_count: int
    replicates: int


def mc_return_prob(
    env: Environment,
    n: int,
    replicates: int,
    escape_threshold: int | None = None,
    seed: int = 0,
    step_cap: int = 10**9,
) -> ReturnEstimate:
    """Fraction of walks from ``2n`` that reach ``n`` before ``escape_threshold``.

    Hitting ``n`` before the threshold implies hitting it eventually, so the
    estimate undershoots the return probability by at most the probability
    of ever coming back to ``n`` from the threshold; that amount is reported
    as ``bias_bound`` (``nan`` if the series for it does not converge).
    Censored runs count as non-returns.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    threshold = 100 * n if escape_threshold is None else escape_threshold
    if threshold <= 2 * n:
        raise ValueError("escape threshold must exceed 2n")
    p = np.ascontiguousarray(env.probs(threshold))
    hits, censored = _return_kernel(p, _keys(seed, replicates), 2 * n, n, threshold, step_cap)
    est = hits / replicates
    se = math.sqrt(max(est * (1.0 - est), 0.0) / replicates)
    try:
        bias = hit_prob(env, n, threshold).a
    except Divergent:
        bias = math.nan
    return ReturnEstimate(est, se, bias, int(censored), replicates)


def transience_audit(env: Environment, summary: WalkSummary | None) -> list[int]:
    """Sites ``n >= 1`` whose last observed visit came after the first visit to ``2n``.

    Purely descriptive: in transient regimes only finitely many such sites
    are expected, in recurrent ones many.
    """
    if summary is None or summary.running_max < 2:
        return []
    n = np.arange(1, summary.running_max // 2 + 1)
    bad = summary.last_visit[n] > summary.first_hit[2 * n]
    return [int(x) for x in n[bad]]


def write_checkpoints_csv(path, summaries: Sequence[WalkSummary]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "position", "running_max", "replicate", "env_seed", "walk_seed"])
        for s in summaries:
            for t, pos, mx in s.checkpoints:
                w.writerow([int(t), int(pos), int(mx), s.replicate, s.env_seed, s.seed])
