"""Expected hitting times and return probabilities, all in natural-log space.

``Delta_i`` is the expected time to go from ``i`` to ``i + 1`` and
``T(n) = sum_{i<n} Delta_i`` the expected time to reach ``n`` from 0.  Both
grow like ``exp(n**gamma)`` in the interesting regimes, so only their logs are
ever stored.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numba
import numpy as np

from .envmodel import Environment
from .errors import Divergent, ResidualOverflow

LOG_OVERFLOW = 700.0


@dataclass(frozen=True)
class LogHitProfile:
    """``log_delta[i] = log Delta_i`` for ``i < n_max``; ``log_T[n] = log T(n)``
    for ``n <= n_max`` with ``log_T[0] = -inf``."""

    log_delta: np.ndarray
    log_T: np.ndarray

    @property
    def n_max(self) -> int:
        return len(self.log_T) - 1

    @classmethod
    def from_log_T(cls, log_T) -> "LogHitProfile":
        """Profile whose increments are recovered from a given ``log T`` curve."""
        lt = np.asarray(log_T, dtype=np.float64)
        hi, lo = lt[1:], lt[:-1]
        with np.errstate(divide="ignore"):
            ld = hi + np.log(-np.expm1(lo - hi))
        return cls(ld, lt)


@dataclass(frozen=True)
class BoundPair:
    log_lower: float
    log_upper: float
    constant_C: float


@dataclass(frozen=True)
class ReturnProbability:
    n: int
    start: int
    log_M: float
    log_a: float
    truncation_j: int
    tail_bound: float

    @property
    def a(self) -> float:
        return math.exp(self.log_a)


@numba.njit(cache=True)
def _delta_recursion(p):
    n = len(p)
    out = np.empty(n)
    d = -math.log1p(-p[0])
    out[0] = d
    for i in range(1, n):
        a = math.log(p[i]) + d
        if a > 0.0:
            s = a + math.log1p(math.exp(-a))
        else:
            s = math.log1p(math.exp(a))
        d = s - math.log1p(-p[i])
        out[i] = d
    return out


def log_delta_from_probs(p) -> np.ndarray:
    """``log Delta_i`` for ``i < len(p)`` from the one-step recursion
    ``q_i Delta_i = 1 + p_i Delta_{i-1}``, ``Delta_0 = 1/q_0``."""
    return _delta_recursion(np.ascontiguousarray(p, dtype=np.float64))


def profile(env: Environment, n_max: int) -> LogHitProfile:
    """Expected hitting times ``Delta_i`` and ``T(n)`` up to ``n_max``."""
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    log_delta = log_delta_from_probs(env.probs(n_max - 1))
    log_T = np.empty(n_max + 1)
    log_T[0] = -np.inf
    log_T[1:] = np.logaddexp.accumulate(log_delta)
    return LogHitProfile(log_delta, log_T)


def closed_form_delta(env: Environment, i: int) -> float:
    """``log Delta_i`` summed term by term:
    ``Delta_i = sum_{m=0}^{i} q_m^{-1} prod_{k=m+1}^{i} p_k / q_k``."""
    if i < 0:
        raise ValueError("i must be nonnegative")
    p = env.probs(i)
    lr = np.log(p) - np.log1p(-p)
    lr[0] = 0.0
    prefix = np.cumsum(lr)
    terms = prefix[i] - prefix - np.log1p(-p)
    top = terms.max()
    return float(top + math.log(np.exp(terms - top).sum()))


def submartingale_residual(env: Environment, prof: LogHitProfile, n: int, scaled: bool = False) -> float:
    """Residual of ``q_n Delta_n - p_n Delta_{n-1} = 1`` (``q_0 T(1) = 1`` at 0).

    With ``scaled=True`` the residual is divided by ``max(1, q_n Delta_n)``,
    which stays meaningful when ``Delta_n`` exceeds the float resolution of 1.
    """
    if n < 0 or n >= len(prof.log_delta):
        raise ValueError(f"profile does not cover site {n}")
    p = env.probs(n)
    lq = math.log1p(-p[n])
    if n == 0:
        big = lq + prof.log_T[1]
        small = -math.inf
    else:
        big = lq + prof.log_delta[n]
        small = math.log(p[n]) + prof.log_delta[n - 1]
    if scaled:
        scale = max(big, 0.0)
        return math.exp(big - scale) - math.exp(small - scale) - math.exp(-scale)
    if big > LOG_OVERFLOW:
        raise ResidualOverflow(f"log Delta_{n} = {big:.1f} is too large; use scaled=True")
    return math.exp(big) * -math.expm1(small - big) - 1.0


def _bound_arrays(env: Environment, n_max: int):
    lr = env.log_ratios(max(n_max - 1, 0)).copy()
    lr[0] = 0.0
    s = np.cumsum(lr)
    run_max = np.maximum.accumulate(s)
    run_neg = np.maximum.accumulate(-s)
    inv_q = np.maximum.accumulate(-np.log1p(-env.probs(max(n_max - 1, 0))))
    return run_max, run_neg, inv_q


def envelope_bounds(env: Environment, n: int) -> BoundPair:
    """Deterministic sandwich on ``log T(n)`` from prefix sums of log ratios."""
    if n < 1:
        raise ValueError("n must be at least 1")
    lo, up, log_c = envelope_bounds_all(env, n)
    return BoundPair(float(lo[n]), float(up[n]), math.exp(log_c[n]))


def envelope_bounds_all(env: Environment, n_max: int):
    """Arrays ``(log_lower, log_upper, log_C)`` indexed by ``n = 0..n_max``
    (entry 0 is ``nan``).

    The lower bound is the largest prefix sum over ``0 <= i <= n-1``; the
    upper bound is ``C n (n + 1)`` times the exponential of the largest prefix
    sum plus the largest negated prefix sum, with ``C = 1/delta`` unless some
    ``1/q_k`` on the path is larger.
    """
    run_max, run_neg, inv_q = _bound_arrays(env, n_max)
    n = np.arange(1, n_max + 1, dtype=np.float64)
    log_c = np.maximum(-math.log(env.spec.delta), inv_q[:n_max])
    lower = np.full(n_max + 1, np.nan)
    upper = np.full(n_max + 1, np.nan)
    cc = np.full(n_max + 1, np.nan)
    lower[1:] = run_max[:n_max]
    upper[1:] = log_c + np.log(n) + np.log(n + 1) + run_max[:n_max] + run_neg[:n_max]
    cc[1:] = log_c
    return lower, upper, cc


def geometric_tail(window: np.ndarray) -> float | None:
    """Log of a tail estimate for ``sum_{m>=1} exp(L_{W+m})``.

    ``window`` holds the last ``W + 1`` values of a log-sequence.  The mean
    increment ``r`` over the window must be negative; the future is assumed
    to stay below the window's chord extended with slope ``r`` plus the
    largest excursion seen above that chord.  Returns ``None`` when ``r >= 0``.
    """
    w = len(window) - 1
    if w < 1:
        return None
    r = (window[-1] - window[0]) / w
    if not r < 0:
        return None
    k = np.arange(w + 1)
    slack = float(np.max(window - window[0] - k * r))
    return float(window[-1] + slack + r - math.log(-math.expm1(r)))


def _log_series(env: Environment, base: int, j_max: int) -> np.ndarray:
    """``R_j = sum_{k=1}^{j} log(p_{base+k}/q_{base+k})`` for ``j = 0..j_max``."""
    lr = env.log_ratios(base + j_max)[base + 1:]
    out = np.empty(j_max + 1)
    out[0] = 0.0
    np.cumsum(lr, out=out[1:])
    return out


def hit_prob(
    env: Environment,
    target: int,
    start: int,
    tolerance: float = 1e-12,
    floor: float = -40.0,
    stay: int = 1000,
    horizon: int = 1_000_000,
) -> ReturnProbability:
    """Probability that the walk started at ``start > target`` ever hits ``target``.

    Sums ``M = sum_{j>=0} exp(R_j)`` and ``N = sum_{j>=start-target} exp(R_j)``
    with ``R_j`` the partial sums of log ratios past ``target``; the answer is
    ``N / M``.  Raises :class:`Divergent` if the partial sums do not settle below
    ``floor`` for ``stay`` consecutive terms with a small enough tail within
    ``horizon`` terms.
    """
    if target < 1 or start <= target:
        raise ValueError("need 1 <= target < start")
    gap = start - target
    j_max = max(4 * stay, 2 * gap, 4096)
    while True:
        j_max = min(j_max, horizon)
        r = _log_series(env, target, j_max)
        above = np.flatnonzero(r >= floor)
        last_above = int(above[-1]) if len(above) else -1
        if max(last_above, gap) + stay <= j_max:
            log_m = float(np.logaddexp.reduce(r))
            log_tail = geometric_tail(r[j_max - stay:])
            if log_tail is not None:
                tail = math.exp(log_tail - log_m)
                if tail < tolerance:
                    log_n = float(np.logaddexp.reduce(r[gap:]))
                    return ReturnProbability(target, start, log_m, min(log_n - log_m, 0.0), j_max, tail)
        if j_max >= horizon:
            raise Divergent(
                f"partial sums past site {target} show no certified decay within {horizon} terms"
            )
        j_max *= 4


def return_prob(env: Environment, n: int, tolerance: float = 1e-12, **kw) -> ReturnProbability:
    """Probability of ever hitting ``n`` from ``2n`` (transient environments)."""
    return hit_prob(env, n, 2 * n, tolerance=tolerance, **kw)


def write_profile_csv(path, env: Environment, prof: LogHitProfile) -> None:
    n_max = prof.n_max
    lower, upper, _ = envelope_bounds_all(env, n_max)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "log_delta", "log_T", "log_lower", "log_upper"])
        for n in range(n_max + 1):
            ld = repr(float(prof.log_delta[n])) if n < n_max else ""
            lo = repr(float(lower[n])) if n else ""
            up = repr(float(upper[n])) if n else ""
            w.writerow([n, ld, repr(float(prof.log_T[n])), lo, up])
