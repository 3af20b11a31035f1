"""Directed polymers in random environment on Z^d, d <= 3.

Point-to-point partition functions obey the one-step Markov recursion

    ln Z_j(0, y) = beta eta(j, y) + logsumexp_{|e|=1} [ln Z_{j-1}(0, y - e)] - ln(2d)

with ``ln Z_0(0, 0) = 0``. Each layer is held on a dense box ``[-j, j]^d``
padded with ``-inf`` off the parity cone; the disorder itself is stored only
on the cone.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, Iterable, Iterator, Optional, Sequence, Tuple

import numpy as np

from ._numerics import logaddexp_many, logsumexp
from .disorder import SUPPORTED_DIMENSIONS, DisorderLaw, PolymerCone, SeedSpec, StreamedCone, cone_sites
from .errors import ConfigurationError, DomainError, TooLargeError

BRUTE_FORCE_MAX_PATHS = 2 * 10 ** 7
# slack for comparing lattice l1-distances with real radii n*eps
_WINDOW_TOL = 1e-9


class ZeroMass(DomainError):
    """The requested endpoint is not reachable at the requested time."""


@dataclass(frozen=True)
class PolymerParams:
    beta: float
    d: int
    n: int

    def __post_init__(self):
        if not self.beta >= 0 or not math.isfinite(self.beta):
            raise ConfigurationError(f"beta must be a finite real >= 0, got {self.beta!r}")
        if self.d not in SUPPORTED_DIMENSIONS:
            raise ConfigurationError(f"unsupported dimension d={self.d}")
        if self.n < 1:
            raise ConfigurationError(f"horizon must be >= 1, got {self.n}")


def polymer_K(beta: float, law: DisorderLaw) -> float:
    """``2 exp(lambda(beta) + lambda(-beta))``."""
    law.check_beta(beta, symmetric=True)
    return 2.0 * math.exp(law.log_mgf(beta) + law.log_mgf(-beta))


# --------------------------------------------------------------------------
# endpoint weights
# --------------------------------------------------------------------------


def _l1_from(sites: np.ndarray, center) -> np.ndarray:
    return np.abs(sites - np.asarray(center, dtype=float)).sum(axis=-1)


def _check_ball_point(x, d: Optional[int] = None) -> Tuple[float, ...]:
    x = tuple(float(c) for c in np.atleast_1d(x))
    if d is not None and len(x) != d:
        raise ConfigurationError(f"point {x} does not have dimension {d}")
    if sum(abs(c) for c in x) > 1 + 1e-12:
        raise DomainError(f"point {x} lies outside the unit l1-ball")
    return x


class EndpointWeight:
    """Bounded non-negative function ``f_n`` of the polymer endpoint."""

    def log_weights(self, sites: np.ndarray, n: int) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class One(EndpointWeight):
    def log_weights(self, sites, n):
        return np.zeros(len(sites))


@dataclass(frozen=True)
class ExpTilt(EndpointWeight):
    """``exp(-lam * |y - center|_1)`` for a real-valued center."""

    lam: float
    center: Tuple[float, ...]

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigurationError(f"tilt strength must be > 0, got {self.lam!r}")
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))

    def log_weights(self, sites, n):
        return -self.lam * _l1_from(sites, self.center)


@dataclass(frozen=True)
class ClosedWindow(EndpointWeight):
    """Indicator of ``|y - n x|_1 <= n eps`` with ``x`` in the unit l1-ball."""

    x: Tuple[float, ...]
    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigurationError(f"window radius must be > 0, got {self.eps!r}")
        object.__setattr__(self, "x", _check_ball_point(self.x))

    def _inside(self, dist, n):
        return dist <= n * self.eps + _WINDOW_TOL * max(1, n)

    def log_weights(self, sites, n):
        dist = _l1_from(sites, n * np.asarray(self.x))
        return np.where(self._inside(dist, n), 0.0, -np.inf)


@dataclass(frozen=True)
class OpenWindow(ClosedWindow):
    """Indicator of ``|y - n x|_1 < n eps``."""

    def _inside(self, dist, n):
        return dist < n * self.eps - _WINDOW_TOL * max(1, n)


# --------------------------------------------------------------------------
# results
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EndpointLayer:
    """``ln Z_n(0, y)`` on the parity cone at time ``n`` (cone site order)."""

    d: int
    n: int
    log_values: np.ndarray

    @property
    def sites(self) -> np.ndarray:
        return cone_sites(self.d, self.n)

    def log_total(self) -> float:
        return float(logsumexp(self.log_values))

    def as_dict(self) -> Dict[Tuple[int, ...], float]:
        return {tuple(int(c) for c in y): float(v) for y, v in zip(self.sites, self.log_values)}


@dataclass(frozen=True, eq=False)
class PolymerResult:
    log_y: float
    log_z: float
    layer: Optional[EndpointLayer] = None

    @property
    def empty_support(self) -> bool:
        """True when the weight vanishes on every reachable endpoint."""
        return self.log_y == -math.inf

    @property
    def log_endpoint_expectation(self) -> float:
        """``ln E_n f(S_n) = ln Y_n - ln Z_n`` under the polymer measure."""
        return self.log_y - self.log_z


# --------------------------------------------------------------------------
# layer recursion
# --------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _cone_flat(d: int, j: int) -> np.ndarray:
    """Flat positions of the cone sites inside the dense box ``[-j, j]^d``."""
    sites = cone_sites(d, j)
    flat = np.ravel_multi_index(tuple((sites + j).T), (2 * j + 1,) * d)
    flat.setflags(write=False)
    return flat




def _cone_from_dense(dense: np.ndarray, d: int, j: int) -> np.ndarray:
    B = dense.shape[0]
    return dense.reshape(B, -1)[:, _cone_flat(d, j)]


def _step(prev: np.ndarray, eta: np.ndarray, d: int, j: int, beta: float) -> np.ndarray:
    """Advance dense layer ``j-1`` to ``j`` given cone disorder ``eta`` of shape ``(B, m_j)``."""
    w = 2 * j + 1
    padded = np.pad(prev, [(0, 0)] + [(2, 2)] * d, constant_values=-np.inf)
    # padded index = coordinate + j + 1; new index = coordinate + j
    neighbours = []
    for axis in range(d):
        for delta in (1, -1):
            index = [slice(None)]
            for k in range(d):
                start = 1 - delta if k == axis else 1
                index.append(slice(start, start + w))
            neighbours.append(padded[tuple(index)])
    new = logaddexp_many(neighbours) - math.log(2 * d)
    B = new.shape[0]
    flat = new.reshape(B, -1)
    flat[:, _cone_flat(d, j)] += beta * eta
    return new


def _stacked_layers(fields: Sequence) -> Iterator[np.ndarray]:
    iters = [f.iter_layers() for f in fields]
    while True:
        try:
            yield np.stack([next(it) for it in iters])
        except StopIteration:
            return


def iter_log_layers(
    fields: Sequence,
    beta: float,
    start_time: int = 0,
    start: Optional[Sequence[int]] = None,
    stop: Optional[int] = None,
) -> Iterator[Tuple[int, np.ndarray]]:
    """Yield ``(j, dense ln Z)`` for ``j = start_time+1 .. stop`` over a batch of fields.

    With ``start`` the walk is started from that site at ``start_time``, giving
    ``ln Z_{j - start_time}(start, . ; Theta_{start_time} eta)``.
    """
    fields = list(fields)
    d = fields[0].d
    stop = fields[0].n if stop is None else stop
    if any(f.d != d or f.n < stop for f in fields):
        raise ConfigurationError("fields in a batch must share d and cover the horizon")
    return iter_stacked_log_layers(_stacked_layers(fields), d, len(fields), beta, start_time, start, stop)


def iter_stacked_log_layers(
    layers: Iterable[np.ndarray],
    d: int,
    batch: int,
    beta: float,
    start_time: int = 0,
    start: Optional[Sequence[int]] = None,
    stop: Optional[int] = None,
) -> Iterator[Tuple[int, np.ndarray]]:
    """Same as :func:`iter_log_layers` for layers already stacked as ``(batch, m_j)``."""
    if start is None:
        if start_time != 0:
            raise ConfigurationError("a start site is required when start_time > 0")
        start = (0,) * d
    start = tuple(int(c) for c in np.atleast_1d(start))
    norm = sum(abs(c) for c in start)
    if len(start) != d or norm > start_time or (norm - start_time) % 2:
        raise ZeroMass(f"start {start} is not on the parity cone at time {start_time}")
    layer = np.full((batch,) + (2 * start_time + 1,) * d, -np.inf)
    layer[(slice(None),) + tuple(c + start_time for c in start)] = 0.0
    for j, eta in enumerate(layers, start=1):
        if stop is not None and j > stop:
            break
        if j <= start_time:
            continue
        layer = _step(layer, eta, d, j, beta)
        yield j, layer


def _final_cone_layer(field, beta: float, n: int) -> np.ndarray:
    for j, dense in iter_log_layers([field], beta, stop=n):
        if j == n:
            return _cone_from_dense(dense, field.d, n)
    raise ConfigurationError(f"field horizon {field.n} shorter than n={n}")


def _check_shape(field, params: PolymerParams) -> None:
    if field.d != params.d or field.n < params.n:
        raise ConfigurationError(
            f"field shape (d={field.d}, n={field.n}) does not cover params (d={params.d}, n={params.n})"
        )


def log_partition(field, params: PolymerParams, weight: EndpointWeight = One(), keep_layer: bool = True) -> PolymerResult:
    """``ln Y_n = ln E[f_n(S_n) exp(beta H_n(S))]`` together with ``ln Z_n``."""
    _check_shape(field, params)
    log_layer = _final_cone_layer(field, params.beta, params.n)[0]
    sites = cone_sites(params.d, params.n)
    log_y = float(logsumexp(log_layer + weight.log_weights(sites, params.n)))
    log_z = float(logsumexp(log_layer))
    layer = EndpointLayer(params.d, params.n, log_layer) if keep_layer else None
    return PolymerResult(log_y, log_z, layer)


def point_to_point(field, params: PolymerParams, y) -> float:
    """``ln Z_n(0, y)``; raises :class:`ZeroMass` off the parity cone."""
    y = tuple(int(c) for c in np.atleast_1d(y))
    norm = sum(abs(c) for c in y)
    if len(y) != params.d or norm > params.n or (norm - params.n) % 2:
        raise ZeroMass(f"endpoint {y} is not reachable at time {params.n}")
    _check_shape(field, params)
    dense = None
    for _, dense in iter_log_layers([field], params.beta, stop=params.n):
        pass
    return float(dense[(0,) + tuple(c + params.n for c in y)])


def shifted_point_to_point(field, beta: float, start_time: int, start, m: int) -> EndpointLayer:
    """``ln Z_m(start, z; Theta_{start_time} eta)`` for ``z`` on the cone at ``start_time + m``.

    Entries unreachable from ``start`` are ``-inf``.
    """
    t = start_time + m
    for j, dense in iter_log_layers([field], beta, start_time=start_time, start=start, stop=t):
        if j == t:
            return EndpointLayer(field.d, t, _cone_from_dense(dense, field.d, t)[0])
    raise ConfigurationError("m must be >= 1")


def endpoint_distribution(field, params: PolymerParams) -> Dict[Tuple[int, ...], float]:
    """Polymer-measure law of ``S_n`` on the parity cone."""
    res = log_partition(field, params)
    probs = np.exp(res.layer.log_values - res.log_z)
    return {tuple(int(c) for c in y): float(p) for y, p in zip(res.layer.sites, probs)}


# --------------------------------------------------------------------------
# oracle
# --------------------------------------------------------------------------


def _dense_field_layers(field, n: int):
    out = []
    for j, lay in enumerate(field.iter_layers(), start=1):
        if j > n:
            break
        box = np.full((2 * j + 1,) * field.d, np.nan)
        box[tuple((cone_sites(field.d, j) + j).T)] = lay
        out.append(box)
    return out


def log_partition_bruteforce(field, params: PolymerParams, weight: EndpointWeight = One()) -> PolymerResult:
    """``ln Y_n`` and ``ln Z_n`` by explicit summation over all ``(2d)^n`` paths."""
    _check_shape(field, params)
    d, n, beta = params.d, params.n, params.beta
    n_paths = (2 * d) ** n
    if n_paths > BRUTE_FORCE_MAX_PATHS:
        raise TooLargeError(
            f"(2d)^n = {n_paths} paths exceeds the enumeration limit {BRUTE_FORCE_MAX_PATHS}"
        )
    steps = np.vstack([np.eye(d, dtype=np.int64), -np.eye(d, dtype=np.int64)])
    boxes = _dense_field_layers(field, n)
    chunk = 1 << 18
    log_ys, log_zs = [], []
    for lo in range(0, n_paths, chunk):
        code = np.arange(lo, min(lo + chunk, n_paths), dtype=np.int64)
        pos = np.zeros((len(code), d), dtype=np.int64)
        energy = np.zeros(len(code))
        for j in range(1, n + 1):
            code, digit = np.divmod(code, 2 * d)
            pos = pos + steps[digit]
            energy += boxes[j - 1][tuple((pos + j).T)]
        logw = beta * energy
        log_zs.append(logsumexp(logw))
        log_ys.append(logsumexp(logw + weight.log_weights(pos, n)))
    shift = n * math.log(2 * d)
    return PolymerResult(
        float(logsumexp(np.array(log_ys)) - shift), float(logsumexp(np.array(log_zs)) - shift)
    )


# --------------------------------------------------------------------------
# replica batches
# --------------------------------------------------------------------------


def replica_log_partitions(
    law: DisorderLaw,
    beta: float,
    d: int,
    n_list: Sequence[int],
    seed: SeedSpec,
    replicas: Iterable[int],
    weight_fn: Optional[Callable[[int], Sequence[EndpointWeight]]] = None,
):
    """Per-replica ``ln Z_n`` (and ``ln Y_n`` for ``weight_fn(n)``) at each ``n`` in ``n_list``.

    Returns ``log_z`` of shape ``(R, N)`` and, when ``weight_fn`` is given,
    ``log_y`` of shape ``(R, N, W)``. Fields are streamed from their seeds so
    memory stays at one layer per replica.
    """
    n_list = list(n_list)
    n_max = max(n_list)
    fields = [StreamedCone(law, d, n_max, seed, r) for r in replicas]
    col = {n: i for i, n in enumerate(n_list)}
    log_z = np.empty((len(fields), len(n_list)))
    log_y = None
    for j, dense in iter_log_layers(fields, beta):
        if j not in col:
            continue
        cone = _cone_from_dense(dense, d, j)
        log_z[:, col[j]] = logsumexp(cone, axis=1)
        if weight_fn is not None:
            weights = list(weight_fn(j))
            if log_y is None:
                log_y = np.empty((len(fields), len(n_list), len(weights)))
            sites = cone_sites(d, j)
            logw = np.stack([w.log_weights(sites, j) for w in weights])
            log_y[:, col[j], :] = logsumexp(cone[:, None, :] + logw[None, :, :], axis=2)
    if weight_fn is None:
        return log_z
    return log_z, log_y


def straight_path_energy(field: PolymerCone, axis: int = 0) -> float:
    """``sum_j eta(j, j e_axis)``: the energy of the only path reaching ``n e_axis``."""
    unit = np.eye(field.d, dtype=int)[axis]
    return math.fsum(field.value(j, j * unit) for j in range(1, field.n + 1))


@dataclass(frozen=True)
class PolymerModel:
    law: DisorderLaw
    beta: float
    d: int

    kind = "polymer"

    def __post_init__(self):
        PolymerParams(self.beta, self.d, 1)

    def K(self) -> float:
        return polymer_K(self.beta, self.law)

    def check(self) -> None:
        self.law.check_beta(self.beta, symmetric=True)

    def log_partitions(self, n_list, seed: SeedSpec, replicas, weight_fn=None):
        return replica_log_partitions(self.law, self.beta, self.d, n_list, seed, replicas, weight_fn)
