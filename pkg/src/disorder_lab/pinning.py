"""Quenched partition function of the disordered pinning model.

For a renewal process ``tau`` with inter-arrival law ``q`` the constrained
partition function is

    Z_n = E[ exp(sum_{k<=n} (beta eta_k + h) 1{k in tau}) 1{n in tau} ].

Conditioning on the last gap gives the forward recursion

    c_0 = 1,   c_j = exp(beta eta_j + h) * sum_{k=1}^{j} q(k) c_{j-k},

with ``Z_n = c_n``. Everything is carried in log-space.
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from ._numerics import logsumexp
from .disorder import DisorderLaw, PinningShape, PinningVector, SeedSpec, sample_field
from .errors import ConfigurationError, TooLargeError

BRUTE_FORCE_MAX_N = 22


@dataclass(frozen=True)
class RenewalLaw:
    """Inter-arrival law ``q(k)``, ``k >= 1``; total mass may be below one."""

    kind: str
    q: Tuple[float, ...] = ()
    p: Optional[float] = None
    dim: Optional[int] = None
    k_max: Optional[int] = None

    @classmethod
    def explicit(cls, q: Sequence[float]) -> "RenewalLaw":
        q = tuple(float(v) for v in q)
        if not q:
            raise ConfigurationError("explicit renewal law needs k_max >= 1 entries")
        if min(q) < 0:
            raise ConfigurationError("renewal probabilities must be non-negative")
        if math.fsum(q) > 1 + 1e-12:
            raise ConfigurationError(f"renewal probabilities sum to {math.fsum(q)!r} > 1")
        return cls("explicit", q=q, k_max=len(q))

    @classmethod
    def geometric(cls, p: float) -> "RenewalLaw":
        if not 0 < p <= 1:
            raise ConfigurationError(f"geometric parameter must lie in (0, 1], got {p!r}")
        return cls("geometric", p=float(p))

    @classmethod
    def srw_return(cls, dim: int, k_max: int) -> "RenewalLaw":
        """First-return time to 0 of simple random walk on Z^dim, cut at ``k_max``."""
        if dim not in (1, 2, 3):
            raise ConfigurationError(f"srw_return supports dim 1..3, got {dim}")
        if k_max < 1:
            raise ConfigurationError("k_max must be >= 1")
        q = tuple(float(v) for v in _srw_first_return(dim, k_max))
        return cls("srw_return", q=q, dim=dim, k_max=k_max)

    def pmf(self, k_max: int) -> np.ndarray:
        """``q(0..k_max)`` with ``q(0) = 0``; zero beyond the law's own support."""
        out = np.zeros(k_max + 1)
        if self.kind == "geometric":
            k = np.arange(1, k_max + 1)
            out[1:] = self.p * (1 - self.p) ** (k - 1)
        else:
            m = min(k_max, len(self.q))
            out[1 : m + 1] = self.q[:m]
        return out

    def log_pmf(self, k_max: int) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.pmf(k_max))


def _log_return_probabilities(dim: int, k_max: int) -> np.ndarray:
    """ln P(S_m = 0), m = 0..k_max, for simple random walk on Z^dim."""
    m = np.arange(k_max + 1)
    lg = np.array([math.lgamma(k + 1) for k in m])
    one_d = np.full(k_max + 1, -np.inf)
    even = m % 2 == 0
    # ln[C(m, m/2) 2^-m]
    half = m[even] // 2
    one_d[even] = lg[even] - 2 * np.array([math.lgamma(k + 1) for k in half]) - m[even] * math.log(2)
    if dim == 1:
        return one_d
    # exponential generating function: P(S_m=0) = m! d^-m [z^m] (sum_k P1(k) z^k / k!)^d
    egf = one_d - lg
    acc = egf.copy()
    idx = m[:, None] - m[None, :]
    for _ in range(dim - 1):
        shifted = np.where(idx >= 0, acc[np.clip(idx, 0, None)], -np.inf)
        acc = logsumexp(egf[None, :] + shifted, axis=1)
    return acc + lg - m * math.log(dim)


def _srw_first_return(dim: int, k_max: int) -> np.ndarray:
    u = np.exp(_log_return_probabilities(dim, k_max))
    f = np.zeros(k_max + 1)
    for n in range(1, k_max + 1):
        f[n] = u[n] - np.dot(f[1:n], u[n - 1 : 0 : -1])
    return np.clip(f[1:], 0.0, None)


@dataclass(frozen=True)
class PinningParams:
    beta: float
    h: float = 0.0

    def __post_init__(self):
        # beta = 0 is admitted for the reduction identities Z_n = u(n)
        if not self.beta >= 0 or not math.isfinite(self.beta):
            raise ConfigurationError(f"beta must be a finite real >= 0, got {self.beta!r}")
        if not math.isfinite(self.h):
            raise ConfigurationError(f"h must be finite, got {self.h!r}")


@dataclass(frozen=True)
class PinningResult:
    log_z: float
    n: int

    @property
    def reachable(self) -> bool:
        """False when ``Z_n = 0``: no renewal configuration hits ``n``."""
        return self.log_z > -math.inf


def pinning_K(params: PinningParams, law: DisorderLaw) -> float:
    """``2 max(e^{h + lambda(beta)}, 1) max(e^{-h + lambda(-beta)}, 1)``."""
    law.check_beta(params.beta, symmetric=True)
    lam_p = law.log_mgf(params.beta)
    lam_m = law.log_mgf(-params.beta)
    return 2.0 * math.exp(max(params.h + lam_p, 0.0) + max(-params.h + lam_m, 0.0))


def forward_log_partitions(values: np.ndarray, q: RenewalLaw, params: PinningParams) -> np.ndarray:
    """``ln c_j`` for ``j = 0..n`` of every row of a ``(B, n)`` array of fields."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    B, n = values.shape
    logq = q.log_pmf(n)
    reward = params.beta * values + params.h
    logc = np.full((B, n + 1), -np.inf)
    logc[:, 0] = 0.0
    for j in range(1, n + 1):
        # gaps k = 1..j pair with c_{j-1}, ..., c_0
        terms = logq[1 : j + 1][None, :] + logc[:, j - 1 :: -1]
        logc[:, j] = logsumexp(terms, axis=1) + reward[:, j - 1]
    return logc


def log_partition(field: PinningVector, q: RenewalLaw, params: PinningParams) -> PinningResult:
    """Exact ``ln Z_n`` by the constrained forward recursion."""
    if field.n < 1:
        raise ConfigurationError("pinning field must have n >= 1")
    logc = forward_log_partitions(field.values[None, :], q, params)
    return PinningResult(float(logc[0, -1]), field.n)


def log_partition_bruteforce(field: PinningVector, q: RenewalLaw, params: PinningParams) -> PinningResult:
    """Exact ``ln Z_n`` by summing over all renewal sets containing ``n``."""
    n = field.n
    if n > BRUTE_FORCE_MAX_N:
        raise TooLargeError(f"brute force enumeration is limited to n <= {BRUTE_FORCE_MAX_N}, got {n}")
    logq = q.log_pmf(n)
    reward = params.beta * field.values + params.h
    times = np.arange(1, n + 1)
    n_sets = 1 << (n - 1)
    chunk = 1 << 15
    partial = []
    for start in range(0, n_sets, chunk):
        masks = np.arange(start, min(start + chunk, n_sets), dtype=np.int64)
        bits = ((masks[:, None] >> np.arange(n - 1)) & 1).astype(bool)
        occupied = np.hstack([bits, np.ones((len(masks), 1), dtype=bool)])
        last = np.maximum.accumulate(np.where(occupied, times, 0), axis=1)
        prev = np.hstack([np.zeros((len(masks), 1), dtype=np.int64), last[:, :-1]])
        gaps = times - prev
        log_gap = np.where(occupied, logq[gaps], 0.0).sum(axis=1)
        energy = occupied.astype(float) @ reward
        partial.append(logsumexp(log_gap + energy))
    return PinningResult(float(logsumexp(np.array(partial))), n)


def renewal_masses(q: RenewalLaw, n: int) -> np.ndarray:
    """``u(0..n)`` with ``u(m) = P(m in tau)``."""
    qq = q.pmf(n)
    u = np.zeros(n + 1)
    u[0] = 1.0
    for m in range(1, n + 1):
        u[m] = np.dot(qq[1 : m + 1], u[m - 1 :: -1])
    return u


def renewal_mass(q: RenewalLaw, n: int) -> float:
    return float(renewal_masses(q, n)[n])


def replica_log_partitions(
    law: DisorderLaw,
    q: RenewalLaw,
    params: PinningParams,
    n_list: Sequence[int],
    seed: SeedSpec,
    replicas: Sequence[int],
) -> np.ndarray:
    """``ln Z_n`` for each replica (rows) and each horizon in ``n_list`` (columns).

    One field of length ``max(n_list)`` is drawn per replica; shorter horizons
    use its prefix.
    """
    n_max = max(n_list)
    values = np.stack(
        [sample_field(law, PinningShape(n_max), seed, r).values for r in replicas]
    )
    logc = forward_log_partitions(values, q, params)
    return logc[:, list(n_list)]


@dataclass(frozen=True)
class PinningModel:
    """Everything needed to evaluate ``ln Z_n`` for a seeded replica."""

    law: DisorderLaw
    renewal: RenewalLaw
    params: PinningParams

    kind = "pinning"

    def K(self) -> float:
        return pinning_K(self.params, self.law)

    def check(self) -> None:
        self.law.check_beta(self.params.beta, symmetric=True)

    def log_partitions(self, n_list, seed: SeedSpec, replicas) -> np.ndarray:
        return replica_log_partitions(self.law, self.renewal, self.params, n_list, seed, replicas)
