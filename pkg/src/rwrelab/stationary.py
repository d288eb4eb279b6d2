"""Stationary distributions of ergodic environments and their decay rates."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .envmodel import Environment, RegimeClass, classify
from .errors import NotErgodic, TailUnbounded
from .fits import ExponentFit, fit_fixed, window_sites
from .hittime import geometric_tail


@dataclass(frozen=True)
class StationaryDist:
    """``log_pi[n]`` for ``n = 0..n_max``; the mass beyond ``n_max`` is at most
    ``truncation_tail``."""

    log_pi: np.ndarray
    log_norm: float
    truncation_tail: float

    @property
    def n_max(self) -> int:
        return len(self.log_pi) - 1


def _log_weights(env: Environment, n_max: int) -> np.ndarray:
    p = env.probs(n_max)
    inc = np.log1p(-p[:-1]) - np.log(p[1:])
    lw = np.empty(n_max + 1)
    lw[0] = 0.0
    np.cumsum(inc, out=lw[1:])
    return lw


def stationary_exact(
    env: Environment, n_max: int, tolerance: float = 1e-10, window: int | None = None
) -> StationaryDist:
    """Stationary law from detailed balance ``pi_{n+1} p_{n+1} = pi_n q_n``.

    The mass past ``n_max`` is estimated with :func:`hittime.geometric_tail`
    over the last ``window`` sites (default: the last tenth, at least 1000)
    and must come out below ``tolerance``.
    """
    regime = classify(env.spec)
    if regime in (RegimeClass.TRANSIENT, RegimeClass.NULL_RECURRENT):
        raise NotErgodic(f"environment law is {regime.value}; no stationary distribution")
    if n_max < 2:
        raise ValueError("n_max must be at least 2")
    lw = _log_weights(env, n_max)
    w = min(max(1000, n_max // 10) if window is None else window, n_max)
    log_tail = geometric_tail(lw[-w - 1:])
    if log_tail is None:
        raise TailUnbounded(f"weights are not decaying over the last {w} sites before {n_max}")
    log_norm = float(np.logaddexp(np.logaddexp.reduce(lw), log_tail))
    tail = math.exp(log_tail - log_norm)
    if tail > tolerance:
        raise TailUnbounded(f"mass beyond {n_max} estimated at {tail:.3g} > {tolerance:g}")
    return StationaryDist(lw - log_norm, log_norm, tail)


def stationary_product(env: Environment, n_max: int) -> np.ndarray:
    """``log prod_{k=1}^{n} q_k / p_k`` for ``n = 0..n_max`` (unnormalised).

    Differs from the detailed-balance weights by ``log(q_0 / q_n)``, a bounded
    offset, so it carries the same decay rate.
    """
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    lr = env.log_ratios(n_max).copy()
    lr[0] = 0.0
    return -np.cumsum(lr)


def balance_residuals(env: Environment, dist: StationaryDist) -> np.ndarray:
    """``|pi_n q_n - pi_{n+1} p_{n+1}| / pi_n`` for ``n < n_max``.

    Computed from log-space values, so the floor is about
    ``|log pi_n| * 2**-52``; it exceeds 1e-12 only where ``pi_n`` itself is
    below the smallest double.
    """
    p = env.probs(dist.n_max)
    lp = dist.log_pi
    a = lp[:-1] + np.log1p(-p[:-1])
    b = lp[1:] + np.log(p[1:])
    return np.abs(-np.expm1(b - a)) * np.exp(a - lp[:-1])


def decay_fit(dist: StationaryDist, alpha: float, fit_window: tuple[int, int] | None = None) -> ExponentFit:
    """Slope of ``-log pi_n`` against ``n**(1 - alpha)``.

    The default window drops the first tenth of the covered sites.
    """
    lo, hi = fit_window if fit_window is not None else (max(1, dist.n_max // 10), dist.n_max)
    if hi > dist.n_max:
        raise ValueError(f"window reaches {hi} but distribution stops at {dist.n_max}")
    n = window_sites(lo, hi)
    return fit_fixed(n, -dist.log_pi[n], 1.0 - alpha, (lo, hi))


def write_stationary_csv(path, env: Environment, dist: StationaryDist, alpha: float) -> None:
    product = stationary_product(env, dist.n_max)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "log_pi_exact", "log_pi_paper_product", "n_pow_1_minus_alpha"])
        for n in range(dist.n_max + 1):
            w.writerow([n, repr(float(dist.log_pi[n])), repr(float(product[n])), repr(float(n) ** (1.0 - alpha))])
