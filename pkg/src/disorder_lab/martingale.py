"""Exponential bounds for martingales with conditionally bounded exponential moments.

If ``E(exp|X_i| | F_{i-1}) <= K`` for each increment of ``M_n = X_1 + ... + X_n``
then for ``t`` in ``[0, 1]``

    E exp(+-t M_n) <= exp(n K t^2)

and for ``x > 0``

    P(+-M_n / n > x) <= exp(-n * sup_{t in [0,1]} (t x - K t^2)).

All bounds are evaluated in log-space first; ``log_*`` variants are exposed
because the plain bounds underflow for large ``n``.
"""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import DomainError, PreconditionError


@dataclass(frozen=True)
class BoundParams:
    """Number of increments ``n`` and conditional moment constant ``K``."""

    n: int
    K: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"n must be a positive integer, got {self.n!r}")
        # E exp|X| >= 1 for every X, so K < 1 is never satisfiable.
        if not self.K >= 1.0 or not math.isfinite(self.K):
            raise DomainError(f"K must be a finite real >= 1, got {self.K!r}")


@dataclass(frozen=True)
class MartingaleSample:
    """One realization of the increments X_1..X_n."""

    diffs: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "diffs", tuple(float(v) for v in self.diffs))

    @property
    def n(self) -> int:
        return len(self.diffs)

    @property
    def total(self) -> float:
        return math.fsum(self.diffs)


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finitely supported law given as ``(value, probability)`` atoms."""

    atoms: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        atoms = tuple((float(v), float(p)) for v, p in self.atoms)
        if not atoms:
            raise DomainError("a distribution needs at least one atom")
        probs = [p for _, p in atoms]
        if min(probs) < 0:
            raise DomainError("atom probabilities must be non-negative")
        if abs(math.fsum(probs) - 1.0) > 1e-12:
            raise DomainError(f"atom probabilities sum to {math.fsum(probs)!r}, not 1")
        object.__setattr__(self, "atoms", atoms)

    @property
    def values(self) -> np.ndarray:
        return np.array([v for v, _ in self.atoms])

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for _, p in self.atoms])

    def mean(self) -> float:
        return math.fsum(v * p for v, p in self.atoms)

    def expect(self, fn) -> float:
        return math.fsum(p * fn(v) for v, p in self.atoms)


def _check_x_K(x: float, K: float) -> None:
    if not x > 0:
        raise DomainError(f"x must be > 0, got {x!r}")
    if not K >= 1:
        raise DomainError(f"K must be >= 1, got {K!r}")


def optimal_exponent(x: float, K: float) -> float:
    """Exact value of ``sup_{t in [0,1]} (t x - K t^2)`` for ``x > 0``.

    The unconstrained maximizer ``t = x / (2K)`` is feasible while ``x <= 2K``;
    beyond that the supremum sits at ``t = 1``.
    """
    _check_x_K(x, K)
    if x <= 2.0 * K:
        return x * x / (4.0 * K)
    return x - K


def log_tail_bound(params: BoundParams, x: float) -> float:
    return -params.n * optimal_exponent(x, params.K)


def tail_bound(params: BoundParams, x: float) -> float:
    """Upper bound on ``P(+-M_n / n > x)``."""
    return math.exp(log_tail_bound(params, x))


def log_mgf_bound(params: BoundParams, t: float) -> float:
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"the moment bound holds only for t in [0, 1], got {t!r}")
    return params.n * params.K * t * t


def mgf_bound(params: BoundParams, t: float) -> float:
    """Upper bound on ``E exp(+-t M_n)``; may be ``inf`` if it overflows."""
    try:
        return math.exp(log_mgf_bound(params, t))
    except OverflowError:
        return math.inf


def lemma22_margin(dist: DiscreteDistribution, t: float) -> float:
    """``exp(K t^2) - E exp(tX)`` with ``K = E exp|X|`` taken from ``dist`` itself.

    Non-negative whenever ``E X <= 0`` and ``t`` is in ``[0, 1]``.
    """
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t must lie in [0, 1], got {t!r}")
    # fsum leaves ~1e-17 noise on exactly centered atom sets
    if dist.mean() > 1e-12:
        raise PreconditionError(f"distribution mean {dist.mean()!r} is positive")
    K = dist.expect(lambda v: math.exp(abs(v)))
    return math.exp(K * t * t) - dist.expect(lambda v: math.exp(t * v))


def telescoping_check(sample: MartingaleSample, total: float) -> float:
    """Absolute residual between the summed increments and the centered total."""
    return abs(sample.total - total)


def azuma_hoeffding_tail(n: int, a: float, x: float) -> float:
    """Reference value ``exp(-n x^2 / a^2)`` for increments bounded by ``a``."""
    return math.exp(-n * x * x / (a * a))

