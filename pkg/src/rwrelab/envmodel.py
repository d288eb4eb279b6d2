"""Environment laws, quenched environments, and regime classification.

An environment is the sequence ``p_0, p_1, ...`` of left-jump probabilities.
``p_0 = 1/2`` always; for ``n >= 1`` an i.i.d. pair ``(xi_n, Y_n)`` is drawn
from a finite-support law and

    p_n = clip(xi_n + Y_n * n**(-alpha), delta/2, 1 - delta/2).
"""

from __future__ import annotations

import enum
import json
import math
import threading
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import rng
from .errors import BudgetExceeded, SpecError

ZERO_TOL = 1e-12
DEFAULT_MAX_SITES = 100_000_000


class Variant(str, enum.Enum):
    PERTURBED_SINAI = "PerturbedSinai"
    PERTURBED_SRW = "PerturbedSRW"


class RegimeClass(str, enum.Enum):
    TRANSIENT = "Transient"
    NULL_RECURRENT = "NullRecurrent"
    ERGODIC = "Ergodic"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class Atom:
    xi: float
    y: float
    weight: float


@dataclass(frozen=True)
class DistributionSpec:
    """Finite-support joint law of ``(xi, Y)``."""

    atoms: tuple[Atom, ...]

    def __post_init__(self):
        if not self.atoms:
            raise SpecError("distribution needs at least one atom")
        for a in self.atoms:
            if not a.weight > 0:
                raise SpecError(f"atom weight must be positive, got {a.weight}")
            if not 0.0 < a.xi < 1.0:
                raise SpecError(f"xi must lie in (0, 1), got {a.xi}")
            if not -1.0 <= a.y <= 1.0:
                raise SpecError(f"y must lie in [-1, 1], got {a.y}")
        total = math.fsum(a.weight for a in self.atoms)
        if abs(total - 1.0) > 1e-12:
            raise SpecError(f"atom weights sum to {total!r}, not 1")

    @classmethod
    def from_triples(cls, triples: Iterable[Sequence[float]]) -> "DistributionSpec":
        return cls(tuple(Atom(float(x), float(y), float(w)) for x, y, w in triples))

    def triples(self) -> list[list[float]]:
        return [[a.xi, a.y, a.weight] for a in self.atoms]


@dataclass(frozen=True)
class PerturbationSpec:
    variant: Variant
    alpha: float
    delta: float
    dist: DistributionSpec

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not self.alpha > 0:
            raise SpecError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 < self.delta < 0.5:
            raise SpecError(f"delta must lie in (0, 1/2), got {self.delta}")
        for a in self.dist.atoms:
            if not self.delta <= a.xi <= 1.0 - self.delta:
                raise SpecError(f"xi={a.xi} violates ellipticity for delta={self.delta}")
            if self.variant is Variant.PERTURBED_SRW and a.xi != 0.5:
                raise SpecError("PerturbedSRW requires xi = 1/2 for every atom")

    @classmethod
    def build(cls, variant, alpha, delta, atoms) -> "PerturbationSpec":
        return cls(Variant(variant), float(alpha), float(delta), DistributionSpec.from_triples(atoms))

    def clamp_free_from(self) -> int:
        """First site past which the clip in ``p_n`` can never bind."""
        return math.ceil((2.0 / self.delta) ** (1.0 / self.alpha))

    def to_dict(self, seed: int | None = None) -> dict:
        d = {
            "variant": self.variant.value,
            "alpha": self.alpha,
            "delta": self.delta,
            "atoms": self.dist.triples(),
        }
        if seed is not None:
            d["seed"] = int(seed)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbationSpec":
        try:
            return cls.build(d["variant"], d["alpha"], d["delta"], d["atoms"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecError(f"malformed spec: {exc}") from exc


def spec_to_json(spec: PerturbationSpec, seed: int) -> str:
    return json.dumps(spec.to_dict(seed), sort_keys=True)


def spec_from_json(text: str) -> tuple[PerturbationSpec, int]:
    d = json.loads(text)
    if "seed" not in d:
        raise SpecError("spec JSON must carry a seed")
    return PerturbationSpec.from_dict(d), int(d["seed"])


@dataclass(frozen=True)
class Moments:
    lam: float
    mean_zeta: float
    var_zeta: float
    s2: float
    sigma2: float
    mean_y: float
    symmetric_balance: bool


def _expect(weights, values) -> float:
    return math.fsum(w * v for w, v in zip(weights, values))


def _canonical(pairs: Iterable[tuple[float, float]]) -> list[tuple[float, float]]:
    """Sorted (value, weight) list with values within ZERO_TOL merged."""
    merged: list[list[float]] = []
    for v, w in sorted(pairs):
        if merged and abs(v - merged[-1][0]) <= ZERO_TOL:
            merged[-1][1] += w
        else:
            merged.append([v, w])
    return [(v, w) for v, w in merged]


def _same_law(a, b) -> bool:
    ca, cb = _canonical(a), _canonical(b)
    return len(ca) == len(cb) and all(
        abs(va - vb) <= ZERO_TOL and abs(wa - wb) <= ZERO_TOL for (va, wa), (vb, wb) in zip(ca, cb)
    )


def moments(spec: PerturbationSpec) -> Moments:
    atoms = spec.dist.atoms
    w = [a.weight for a in atoms]
    xi = [a.xi for a in atoms]
    y = [a.y for a in atoms]
    zeta = [math.log(x / (1.0 - x)) for x in xi]
    z = [b / (x * (1.0 - x)) for x, b in zip(xi, y)]
    mean_xi = _expect(w, xi)
    mean_y = _expect(w, y)
    mean_zeta = _expect(w, zeta)
    balance = _same_law(
        [(b / x, wt) for x, b, wt in zip(xi, y, w)],
        [(-b / (1.0 - x), wt) for x, b, wt in zip(xi, y, w)],
    )
    return Moments(
        lam=_expect(w, z),
        mean_zeta=mean_zeta,
        var_zeta=_expect(w, [(v - mean_zeta) ** 2 for v in zeta]),
        s2=_expect(w, [(v - mean_xi) ** 2 for v in xi]),
        sigma2=_expect(w, [(v - mean_y) ** 2 for v in y]),
        mean_y=mean_y,
        symmetric_balance=balance,
    )


def classify(spec: PerturbationSpec) -> RegimeClass:
    """Recurrence regime for almost every environment drawn from ``spec``.

    Returns ``UNKNOWN`` wherever the known criteria say nothing.
    """
    m = moments(spec)
    a = spec.alpha
    if spec.variant is Variant.PERTURBED_SRW:
        if m.symmetric_balance:
            return RegimeClass.NULL_RECURRENT
        if m.sigma2 <= ZERO_TOL or a == 1.0 or abs(m.mean_y) <= ZERO_TOL:
            return RegimeClass.UNKNOWN
        if a < 1.0:
            return RegimeClass.ERGODIC if m.mean_y > 0 else RegimeClass.TRANSIENT
        return RegimeClass.NULL_RECURRENT

    if abs(m.mean_zeta) > ZERO_TOL or m.var_zeta <= ZERO_TOL:
        return RegimeClass.UNKNOWN
    if abs(m.lam) > ZERO_TOL:
        if a >= 0.5:
            return RegimeClass.NULL_RECURRENT
        return RegimeClass.ERGODIC if m.lam > 0 else RegimeClass.TRANSIENT
    if m.symmetric_balance:
        return RegimeClass.NULL_RECURRENT
    return RegimeClass.UNKNOWN


@dataclass(eq=False)
class Environment:
    """One quenched environment: ``p_n`` is a pure function of ``(seed, n)``.

    A materialised prefix is cached internally; the cache only ever grows and
    every value in it equals what :func:`site_prob` returns, so instances can be
    shared freely between threads.
    """

    spec: PerturbationSpec
    seed: int
    max_sites: int = DEFAULT_MAX_SITES
    _cache: np.ndarray = field(default=None, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def __post_init__(self):
        self.seed = int(self.seed) & rng.MASK64
        self._key = rng.stream_key(self.seed, "env")
        a = self.spec.dist.atoms
        w = np.array([x.weight for x in a])
        self._cum = np.cumsum(w) / w.sum()
        self._xi = np.array([x.xi for x in a])
        self._y = np.array([x.y for x in a])

    def __getstate__(self):
        return {"spec": self.spec, "seed": self.seed, "max_sites": self.max_sites}

    def __setstate__(self, state):
        self.spec = state["spec"]
        self.seed = state["seed"]
        self.max_sites = state["max_sites"]
        self._cache = None
        self._lock = threading.Lock()
        self.__post_init__()

    def _compute(self, lo: int, hi: int) -> np.ndarray:
        """``p_n`` for ``lo <= n < hi``."""
        n = np.arange(lo, hi, dtype=np.int64)
        u = rng.uniform_array(self._key, n)
        idx = np.minimum(np.searchsorted(self._cum, u, side="right"), len(self._cum) - 1)
        nf = np.maximum(n, 1).astype(np.float64)
        raw = self._xi[idx] + self._y[idx] * nf ** (-self.spec.alpha)
        d = self.spec.delta
        p = np.clip(raw, d / 2.0, 1.0 - d / 2.0)
        p[n == 0] = 0.5
        return p

    def draws(self, lo: int, hi: int) -> tuple[np.ndarray, np.ndarray]:
        """The underlying ``(xi_n, Y_n)`` for ``lo <= n < hi``."""
        n = np.arange(lo, hi, dtype=np.int64)
        u = rng.uniform_array(self._key, n)
        idx = np.minimum(np.searchsorted(self._cum, u, side="right"), len(self._cum) - 1)
        return self._xi[idx], self._y[idx]

    def probs(self, n_max: int) -> np.ndarray:
        """Read-only array ``p_0 .. p_{n_max}``."""
        if n_max < 0:
            raise ValueError("n_max must be nonnegative")
        if n_max + 1 > self.max_sites:
            raise BudgetExceeded(f"{n_max + 1} sites exceeds the budget of {self.max_sites}")
        cache = self._cache
        if cache is None or len(cache) <= n_max:
            with self._lock:
                cache = self._cache
                have = 0 if cache is None else len(cache)
                if have <= n_max:
                    want = min(max(n_max + 1, 2 * have, 1024), self.max_sites)
                    fresh = self._compute(have, want)
                    cache = fresh if cache is None else np.concatenate([cache, fresh])
                    cache.flags.writeable = False
                    self._cache = cache
        return cache[: n_max + 1]

    def log_ratios(self, n_max: int) -> np.ndarray:
        """``log(p_k / q_k)`` for ``k = 0 .. n_max`` (entry 0 is 0)."""
        p = self.probs(n_max)
        return np.log(p) - np.log1p(-p)

    def to_json(self) -> str:
        return spec_to_json(self.spec, self.seed)

    @classmethod
    def from_json(cls, text: str) -> "Environment":
        spec, seed = spec_from_json(text)
        return cls(spec, seed)


def site_prob(env: Environment, n: int) -> float:
    if n < 0:
        raise ValueError("site index must be nonnegative")
    if n == 0:
        return 0.5
    cache = env._cache
    if cache is not None and n < len(cache):
        return float(cache[n])
    return float(env._compute(n, n + 1)[0])


def log_ratio(env: Environment, n: int) -> float:
    if n < 1:
        raise ValueError("log_ratio is defined for n >= 1")
    p = site_prob(env, n)
    return math.log(p) - math.log1p(-p)


def realize(spec: PerturbationSpec, seed: int, n_max: int, max_sites: int = DEFAULT_MAX_SITES) -> Environment:
    if n_max < 0:
        raise ValueError("n_max must be nonnegative")
    env = Environment(spec, seed, max_sites=max_sites)
    env.probs(n_max)
    return env
