"""Disorder laws, their log-MGFs, seeded samplers and quenched field storage."""

import math
import zlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, List, Tuple

import numpy as np
from scipy import integrate

from ._numerics import logsumexp
from .errors import ConfigurationError, DomainError, UnsupportedOperation

SUPPORTED_DIMENSIONS = (1, 2, 3)


# --------------------------------------------------------------------------
# laws
# --------------------------------------------------------------------------


class DisorderLaw:
    """Base class for the law of a single disorder variable.

    Subclasses describe a "raw" variable and a ``centered`` flag; when the
    flag is set the stored law is the raw one shifted by minus its mean.
    """

    centered: bool

    #: open interval of beta with E exp(beta * eta) finite
    beta_range: Tuple[float, float] = (-math.inf, math.inf)

    def raw_mean(self) -> float:
        raise NotImplementedError

    @property
    def shift(self) -> float:
        return -self.raw_mean() if self.centered else 0.0

    def mean(self) -> float:
        return self.raw_mean() + self.shift

    def _raw_log_mgf(self, beta: float):
        """Closed form of ln E exp(beta * raw), or None if unavailable."""
        return None

    def _sample_raw(self, rng: np.random.Generator, size) -> np.ndarray:
        raise NotImplementedError

    def admissible(self, beta: float) -> bool:
        lo, hi = self.beta_range
        return lo < beta < hi

    def check_beta(self, beta: float, symmetric: bool = False) -> None:
        for b in ((beta, -beta) if symmetric else (beta,)):
            if not self.admissible(b):
                raise DomainError(
                    f"beta={b!r} outside the finite-MGF range {self.beta_range} of {self!r}"
                )

    def log_mgf(self, beta: float) -> float:
        self.check_beta(beta)
        if beta == 0:
            return 0.0
        raw = self._raw_log_mgf(beta)
        if raw is None:
            raw = _quadrature_raw_log_mgf(self, beta)
        return float(raw + beta * self.shift)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        out = self._sample_raw(rng, size)
        if self.shift:
            out = out + self.shift
        return out

    def atoms(self) -> List[Tuple[float, float]]:
        raise UnsupportedOperation(f"{type(self).__name__} has no finite support")


@dataclass(frozen=True)
class Gaussian(DisorderLaw):
    sigma: float = 1.0
    centered: bool = True

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigurationError(f"Gaussian sigma must be > 0, got {self.sigma!r}")

    def raw_mean(self):
        return 0.0

    def _raw_log_mgf(self, beta):
        return 0.5 * beta * beta * self.sigma * self.sigma

    def _sample_raw(self, rng, size):
        return rng.normal(0.0, self.sigma, size)

    def _log_density(self, x):
        s = self.sigma
        return -0.5 * (x / s) ** 2 - math.log(s * math.sqrt(2 * math.pi))

    def _tilted_mode(self, beta):
        return beta * self.sigma ** 2

    _support = (-math.inf, math.inf)


@dataclass(frozen=True)
class Rademacher(DisorderLaw):
    """``+1`` with probability ``p`` and ``-1`` otherwise."""

    p: float = 0.5
    centered: bool = True

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ConfigurationError(f"Rademacher p must lie in (0, 1), got {self.p!r}")

    def raw_mean(self):
        return 2 * self.p - 1

    def _raw_log_mgf(self, beta):
        if self.p == 0.5:
            return math.log(math.cosh(beta)) if abs(beta) < 350 else abs(beta) - math.log(2)
        return float(np.logaddexp(math.log(self.p) + beta, math.log1p(-self.p) - beta))

    def _sample_raw(self, rng, size):
        return np.where(rng.random(size) < self.p, 1.0, -1.0)

    def atoms(self):
        s = self.shift
        return [(-1.0 + s, 1.0 - self.p), (1.0 + s, self.p)]


@dataclass(frozen=True)
class FiniteSupport(DisorderLaw):
    points: Tuple[Tuple[float, float], ...] = ()
    centered: bool = False

    def __post_init__(self):
        atoms = tuple((float(v), float(p)) for v, p in self.points)
        if not atoms:
            raise ConfigurationError("FiniteSupport needs at least one atom")
        probs = [p for _, p in atoms]
        if min(probs) < 0:
            raise ConfigurationError("FiniteSupport probabilities must be non-negative")
        if abs(math.fsum(probs) - 1.0) > 1e-12:
            raise ConfigurationError(
                f"FiniteSupport probabilities sum to {math.fsum(probs)!r}, not 1"
            )
        object.__setattr__(self, "points", atoms)

    def raw_mean(self):
        return math.fsum(v * p for v, p in self.points)

    def _raw_log_mgf(self, beta):
        vals = np.array([v for v, p in self.points if p > 0])
        probs = np.array([p for _, p in self.points if p > 0])
        return float(logsumexp(np.log(probs) + beta * vals))

    def _sample_raw(self, rng, size):
        vals = np.array([v for v, _ in self.points])
        probs = np.array([p for _, p in self.points])
        return vals[rng.choice(len(vals), size=size, p=probs / probs.sum())]

    def atoms(self):
        s = self.shift
        return [(v + s, p) for v, p in self.points]


@dataclass(frozen=True)
class ShiftedExponential(DisorderLaw):
    """Exponential variable with the given rate, shifted to mean zero if centered."""

    rate: float = 1.0
    centered: bool = True

    def __post_init__(self):
        if not self.rate > 0:
            raise ConfigurationError(f"exponential rate must be > 0, got {self.rate!r}")

    @property
    def beta_range(self):
        return (-math.inf, self.rate)

    def raw_mean(self):
        return 1.0 / self.rate

    def _raw_log_mgf(self, beta):
        return math.log(self.rate) - math.log(self.rate - beta)

    def _sample_raw(self, rng, size):
        return rng.exponential(1.0 / self.rate, size)

    def _log_density(self, x):
        return math.log(self.rate) - self.rate * x

    def _tilted_mode(self, beta):
        return 0.0

    _support = (0.0, math.inf)


def _quadrature_raw_log_mgf(law: DisorderLaw, beta: float) -> float:
    if not hasattr(law, "_log_density"):
        raise UnsupportedOperation(f"{type(law).__name__} has no density for quadrature")
    lo, hi = law._support
    c = min(max(law._tilted_mode(beta), lo), hi)
    peak = beta * c + law._log_density(c)

    def integrand(x):
        return math.exp(beta * x + law._log_density(x) - peak)

    total = 0.0
    for a, b in ((lo, c), (c, hi)):
        if a < b:
            val, _ = integrate.quad(integrand, a, b, epsabs=1e-13, epsrel=1e-13, limit=200)
            total += val
    return peak + math.log(total)


def log_mgf(law: DisorderLaw, beta: float) -> float:
    """ln E exp(beta * eta); raises DomainError outside the law's admissible range."""
    return law.log_mgf(beta)


def log_mgf_quadrature(law: DisorderLaw, beta: float) -> float:
    """ln E exp(beta * eta) by exact atom sums or adaptive quadrature of the density."""
    law.check_beta(beta)
    if hasattr(law, "_log_density"):
        return _quadrature_raw_log_mgf(law, beta) + beta * law.shift
    atoms = law.atoms()
    return math.log(math.fsum(p * math.exp(beta * v) for v, p in atoms))


def enumerate_support(law: DisorderLaw) -> List[Tuple[float, float]]:
    """Exact atom list of a finitely supported law."""
    return law.atoms()


# --------------------------------------------------------------------------
# seeding
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SeedSpec:
    """Master seed from which every (purpose, replica) stream is derived."""

    master_seed: int

    def __post_init__(self):
        if int(self.master_seed) != self.master_seed or not 0 <= self.master_seed < 2 ** 64:
            raise ConfigurationError(
                f"master seed must be an unsigned 64-bit integer, got {self.master_seed!r}"
            )
        object.__setattr__(self, "master_seed", int(self.master_seed))

    def generator(self, purpose: str, replica: int) -> np.random.Generator:
        tag = zlib.crc32(purpose.encode("utf-8"))
        ss = np.random.SeedSequence(entropy=self.master_seed, spawn_key=(tag, int(replica)))
        return np.random.Generator(np.random.PCG64(ss))


# --------------------------------------------------------------------------
# fields
# --------------------------------------------------------------------------


@lru_cache(maxsize=None)
def cone_sites(d: int, j: int) -> np.ndarray:
    """Sites reachable by a simple random walk at time ``j``, lexicographic order.

    Returns an ``(m, d)`` integer array with ``m`` rows satisfying
    ``|y|_1 <= j`` and ``|y|_1 = j (mod 2)``.
    """
    if d not in SUPPORTED_DIMENSIONS:
        raise ConfigurationError(f"unsupported dimension d={d}; expected one of {SUPPORTED_DIMENSIONS}")
    grids = np.indices((2 * j + 1,) * d).reshape(d, -1).T - j
    norm = np.abs(grids).sum(axis=1)
    sites = grids[(norm <= j) & ((norm - j) % 2 == 0)]
    sites.setflags(write=False)
    return sites


def cone_size(d: int, j: int) -> int:
    return len(cone_sites(d, j))


@lru_cache(maxsize=None)
def _cone_lookup(d: int, j: int) -> dict:
    return {tuple(int(c) for c in y): i for i, y in enumerate(cone_sites(d, j))}


@dataclass(frozen=True)
class PinningShape:
    n: int


@dataclass(frozen=True)
class PolymerShape:
    d: int
    n: int


@dataclass(frozen=True, eq=False)
class PinningVector:
    """Disorder values eta_1..eta_n at the renewal times 1..n."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1:
            raise ConfigurationError("a pinning field is one-dimensional")
        if not np.all(np.isfinite(vals)):
            raise ConfigurationError("disorder values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return len(self.values)

    def shift(self, k: int) -> "PinningVector":
        """Field seen after time ``k``: ``eta_{k+1}, ..., eta_n``."""
        return PinningVector(self.values[k:])


@dataclass(frozen=True, eq=False)
class PolymerCone:
    """Disorder eta(j, y) on the reachable parity cone, one array per time step.

    ``layers[j - 1][i]`` is the value at time ``j`` and site ``cone_sites(d, j)[i]``.
    """

    d: int
    n: int
    layers: Tuple[np.ndarray, ...]

    def __post_init__(self):
        if self.d not in SUPPORTED_DIMENSIONS:
            raise ConfigurationError(f"unsupported dimension d={self.d}")
        layers = tuple(np.array(v, dtype=float) for v in self.layers)
        if len(layers) != self.n:
            raise ConfigurationError(f"expected {self.n} layers, got {len(layers)}")
        for j, lay in enumerate(layers, start=1):
            if lay.shape != (cone_size(self.d, j),):
                raise ConfigurationError(
                    f"layer {j} has shape {lay.shape}, expected ({cone_size(self.d, j)},)"
                )
            if not np.all(np.isfinite(lay)):
                raise ConfigurationError("disorder values must be finite")
            lay.setflags(write=False)
        object.__setattr__(self, "layers", layers)

    def iter_layers(self) -> Iterator[np.ndarray]:
        return iter(self.layers)

    def value(self, j: int, y) -> float:
        return float(self.layers[j - 1][_cone_lookup(self.d, j)[tuple(int(c) for c in y)]])

    def truncate(self, n: int) -> "PolymerCone":
        return PolymerCone(self.d, n, self.layers[:n])


@dataclass(frozen=True)
class StreamedCone:
    """A polymer field regenerated layer by layer from its seed on every pass.

    Holds no disorder values; iterating yields exactly the layers that
    :func:`sample_field` would store for the same arguments.
    """

    law: DisorderLaw
    d: int
    n: int
    seed: SeedSpec
    replica: int
    purpose: str = field(default="field")

    def iter_layers(self) -> Iterator[np.ndarray]:
        rng = self.seed.generator(self.purpose, self.replica)
        for j in range(1, self.n + 1):
            yield self.law.sample(rng, cone_size(self.d, j))

    def materialize(self) -> PolymerCone:
        return PolymerCone(self.d, self.n, tuple(self.iter_layers()))


def sample_field(law: DisorderLaw, shape, seed: SeedSpec, replica: int, purpose: str = "field"):
    """Draw one quenched field of the given shape from the (seed, replica) stream."""
    if isinstance(shape, PinningShape):
        if shape.n < 1:
            raise ConfigurationError(f"pinning horizon must be >= 1, got {shape.n}")
        rng = seed.generator(purpose, replica)
        return PinningVector(law.sample(rng, shape.n))
    if isinstance(shape, PolymerShape):
        if shape.d not in SUPPORTED_DIMENSIONS:
            raise ConfigurationError(f"unsupported dimension d={shape.d}")
        if shape.n < 1:
            raise ConfigurationError(f"polymer horizon must be >= 1, got {shape.n}")
        return StreamedCone(law, shape.d, shape.n, seed, replica, purpose).materialize()
    raise ConfigurationError(f"unknown field shape {shape!r}")
