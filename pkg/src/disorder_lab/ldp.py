"""Monte Carlo estimates of free energies and of the polymer endpoint rate function.

Every limit here is of the form ``lim a_n / n = sup a_n / n`` for a
superadditive mean sequence ``a_n``, so the reported estimate is the running
maximum of the per-``n`` sample means (a lower-bound estimate) together with
the largest-``n`` mean as a companion.
"""

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .disorder import SeedSpec, cone_sites
from .errors import ConfigurationError, DomainError
from .parallel import DEFAULT_CHUNK, map_replicas
from .polymer import ClosedWindow, ExpTilt, OpenWindow, PolymerModel

DEFAULT_LAMBDA_GRID = (0.25, 0.5, 1.0, 2.0, 4.0)


class EmptyDesignError(ValueError):
    """No horizon in the design admits the requested window."""


def _fmt(v) -> str:
    return format(float(v), ".17g")


def running_sup(values: Sequence[float]) -> np.ndarray:
    return np.maximum.accumulate(np.asarray(values, dtype=float))


def _mean_sd(samples: np.ndarray):
    R = samples.shape[0]
    mean = samples.mean(axis=0)
    sd = samples.std(axis=0, ddof=1) if R > 1 else np.zeros_like(mean)
    return mean, sd, sd / math.sqrt(R)


@dataclass
class FreeEnergyEstimate:
    """Per-``n`` statistics of ``(1/n) ln Z_n`` over replicas."""

    n_list: List[int]
    means: np.ndarray
    sds: np.ndarray
    stderrs: np.ndarray
    running_sup: np.ndarray
    replicas: int
    excluded: List[int] = field(default_factory=list)
    samples: Optional[np.ndarray] = None

    @property
    def estimate(self) -> float:
        """Superadditive lower-bound estimate of the free energy."""
        return float(self.running_sup[-1])

    @property
    def estimate_stderr(self) -> float:
        return float(self.stderrs[int(np.argmax(self.means))])

    @property
    def largest_n_mean(self) -> float:
        return float(self.means[-1])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "mean", "stderr", "running_sup"])
        for n, m, s, r in zip(self.n_list, self.means, self.stderrs, self.running_sup):
            w.writerow([n, _fmt(m), _fmt(s), _fmt(r)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "n": list(self.n_list),
            "mean": [float(v) for v in self.means],
            "sd": [float(v) for v in self.sds],
            "stderr": [float(v) for v in self.stderrs],
            "running_sup": [float(v) for v in self.running_sup],
            "estimate": self.estimate,
            "largest_n_mean": self.largest_n_mean,
            "gap": self.estimate - self.largest_n_mean,
            "replicas": self.replicas,
            "excluded_n": list(self.excluded),
        }


def _check_n_list(n_list: Sequence[int]) -> List[int]:
    n_list = [int(n) for n in n_list]
    if not n_list or any(n < 1 for n in n_list) or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ConfigurationError(f"n_list must be strictly ascending positive integers, got {n_list}")
    return n_list


def _gather(fn, replicas: int, threads: int, chunk_size: int):
    parts = map_replicas(fn, range(replicas), threads, chunk_size)
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(p) for p in zip(*parts))
    return np.concatenate(parts)


def free_energy_estimate(
    model,
    n_list: Sequence[int],
    replicas: int,
    seed: SeedSpec,
    threads: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
) -> FreeEnergyEstimate:
    """Estimate ``p(beta)`` (polymer) or ``F(beta, h)`` (pinning).

    Horizons at which ``Z_n = 0`` for the renewal law are listed in
    ``excluded`` and left out of the statistics.
    """
    n_list = _check_n_list(n_list)
    if replicas < 2:
        raise ConfigurationError("at least two replicas are needed for standard errors")
    model.check()
    log_z = _gather(partial(model.log_partitions, n_list, seed), replicas, threads, chunk_size)
    return free_energy_from_log_z(n_list, log_z)


def free_energy_from_log_z(n_list: Sequence[int], log_z: np.ndarray) -> FreeEnergyEstimate:
    """Statistics of ``(1/n) ln Z_n`` from a ``(replicas, len(n_list))`` array."""
    n_list = _check_n_list(n_list)
    replicas = log_z.shape[0]
    reachable = np.all(np.isfinite(log_z), axis=0)
    excluded = [n for n, ok in zip(n_list, reachable) if not ok]
    kept = [n for n, ok in zip(n_list, reachable) if ok]
    if not kept:
        raise ConfigurationError("every requested horizon is unreachable for this renewal law")
    samples = log_z[:, reachable] / np.array(kept, dtype=float)
    mean, sd, se = _mean_sd(samples)
    return FreeEnergyEstimate(kept, mean, sd, se, running_sup(mean), replicas, excluded, samples)


# --------------------------------------------------------------------------
# rate function
# --------------------------------------------------------------------------


def nearest_cone_point(target: Sequence[float], n: int) -> Tuple[int, ...]:
    """Lattice point reachable at time ``n`` closest in l1 to ``target``."""
    target = np.asarray(target, dtype=float)
    base = np.floor(target).astype(int)
    best, best_dist = None, math.inf
    for off in itertools.product(range(-1, 3), repeat=len(target)):
        y = base + np.array(off)
        norm = int(np.abs(y).sum())
        if norm > n or (norm - n) % 2:
            continue
        dist = float(np.abs(y - target).sum())
        if dist < best_dist - 1e-12:
            best, best_dist = tuple(int(c) for c in y), dist
    if best is None:
        # target far outside the cone: scan every reachable site
        sites = cone_sites(len(target), n)
        best = tuple(int(c) for c in sites[int(np.argmin(np.abs(sites - target).sum(axis=1)))])
    return best


def _check_x(x, d: int) -> Tuple[float, ...]:
    x = tuple(float(c) for c in np.atleast_1d(x))
    if len(x) != d:
        raise ConfigurationError(f"x={x} must have dimension {d}")
    if sum(abs(c) for c in x) > 1 + 1e-12:
        raise DomainError(f"x={x} lies outside the unit l1-ball B_{d}")
    return x


@dataclass
class TiltEstimate:
    """Per-``n`` statistics of ``(1/n) ln Y_n`` under ``exp(-lam |S_n - x_n|_1)``."""

    lam: float
    n_list: List[int]
    centers: List[Tuple[int, ...]]
    means: np.ndarray
    stderrs: np.ndarray
    phi: float
    rate: float
    rate_stderr: float

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "n": list(self.n_list),
            "centers": [list(c) for c in self.centers],
            "mean": [float(v) for v in self.means],
            "stderr": [float(v) for v in self.stderrs],
            "phi": self.phi,
            "rate": self.rate,
            "rate_stderr": self.rate_stderr,
        }


@dataclass
class WindowEstimate:
    """Per-``n`` statistics of ``(1/n) ln E_n 1{|S_n - n x|_1 <= n eps}`` (or ``<``)."""

    x: Tuple[float, ...]
    eps: float
    closed: bool
    n_list: List[int]
    skipped: List[int]
    means: np.ndarray
    stderrs: np.ndarray
    running_sup: np.ndarray

    @property
    def estimate(self) -> float:
        return float(self.running_sup[-1])

    @property
    def estimate_stderr(self) -> float:
        return float(self.stderrs[int(np.argmax(self.means))])

    def to_dict(self) -> dict:
        return {
            "x": list(self.x),
            "eps": self.eps,
            "closed": self.closed,
            "n": list(self.n_list),
            "skipped_n": list(self.skipped),
            "mean": [float(v) for v in self.means],
            "stderr": [float(v) for v in self.stderrs],
            "running_sup": [float(v) for v in self.running_sup],
            "estimate": self.estimate,
        }


@dataclass
class RatePoint:
    x: Tuple[float, ...]
    d: int
    free_energy: FreeEnergyEstimate
    tilts: List[TiltEstimate]
    windows: List[WindowEstimate]

    @property
    def envelope(self) -> float:
        return max(t.rate for t in self.tilts)

    @property
    def envelope_stderr(self) -> float:
        return max(self.tilts, key=lambda t: t.rate).rate_stderr

    @property
    def upper_limit(self) -> float:
        """``ln(2d) + p_hat``, the top of the rate function's range."""
        return math.log(2 * self.d) + self.free_energy.estimate

    def violations(self) -> List[str]:
        out = []
        tol = 3 * self.envelope_stderr
        if self.envelope < -tol:
            out.append(f"rate estimate {self.envelope:.6g} below 0 by more than 3 SE")
        if self.envelope > self.upper_limit + tol:
            out.append(f"rate estimate {self.envelope:.6g} exceeds ln(2d)+p = {self.upper_limit:.6g} by more than 3 SE")
        for a, b in zip(self.tilts, self.tilts[1:]):
            slack = 3 * math.hypot(a.rate_stderr, b.rate_stderr)
            if b.rate < a.rate - slack:
                out.append(f"rate at lambda={b.lam} falls below lambda={a.lam} beyond combined error")
        return out

    def to_dict(self) -> dict:
        return {
            "x": list(self.x),
            "d": self.d,
            "p_hat": self.free_energy.estimate,
            "p_hat_stderr": self.free_energy.estimate_stderr,
            "free_energy": self.free_energy.to_dict(),
            "rate_by_lambda": [t.to_dict() for t in self.tilts],
            "rate": self.envelope,
            "rate_stderr": self.envelope_stderr,
            "upper_limit": self.upper_limit,
            "gap_to_upper_limit": self.upper_limit - self.envelope,
            "windows": [w.to_dict() for w in self.windows],
            "violations": self.violations(),
        }


def _weights_at(n: int, x, lambdas, windows):
    center = nearest_cone_point(n * np.asarray(x), n)
    out = [ExpTilt(lam, center) for lam in lambdas]
    for wx, eps, closed in windows:
        out.append((ClosedWindow if closed else OpenWindow)(tuple(wx), eps))
    return out


def _window_hits_cone(d: int, n: int, wx, eps: float, closed: bool) -> bool:
    w = (ClosedWindow if closed else OpenWindow)(tuple(wx), eps)
    return bool(np.any(np.isfinite(w.log_weights(cone_sites(d, n), n))))


def rate_function_estimate(
    model: PolymerModel,
    x,
    n_list: Sequence[int],
    replicas: int,
    seed: SeedSpec,
    lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    windows: Sequence[Tuple[Sequence[float], float, bool]] = (),
    threads: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
) -> RatePoint:
    """Estimate ``I_beta(x)`` as the envelope over ``lambda_grid`` of ``p_hat - phi_hat_lambda``.

    ``ln Z_n``, every tilted ``ln Y_n`` and every window share the same fields.
    ``windows`` holds ``(x, eps, closed)`` triples.
    """
    n_list = _check_n_list(n_list)
    x = _check_x(x, model.d)
    lambdas = [float(v) for v in lambda_grid]
    if not lambdas or any(b <= a for a, b in zip(lambdas, lambdas[1:])) or lambdas[0] <= 0:
        raise ConfigurationError(f"lambda grid must be non-empty, positive and ascending, got {lambdas}")
    windows = [(_check_x(wx, model.d), float(eps), bool(closed)) for wx, eps, closed in windows]
    if replicas < 2:
        raise ConfigurationError("at least two replicas are needed for standard errors")
    model.check()

    weight_fn = partial(_weights_at, x=x, lambdas=lambdas, windows=windows)
    log_z, log_y = _gather(
        partial(model.log_partitions, n_list, seed, weight_fn=weight_fn), replicas, threads, chunk_size
    )
    ns = np.array(n_list, dtype=float)
    z_samples = log_z / ns
    z_mean, z_sd, z_se = _mean_sd(z_samples)
    fe = FreeEnergyEstimate(n_list, z_mean, z_sd, z_se, running_sup(z_mean), replicas, [], z_samples)
    p_idx = int(np.argmax(z_mean))

    tilts = []
    for k, lam in enumerate(lambdas):
        y_samples = log_y[:, :, k] / ns
        y_mean, _, y_se = _mean_sd(y_samples)
        phi_idx = int(np.argmax(y_mean))
        diff = z_samples[:, p_idx] - y_samples[:, phi_idx]
        _, _, diff_se = _mean_sd(diff[:, None])
        tilts.append(
            TiltEstimate(
                lam,
                n_list,
                [nearest_cone_point(n * np.asarray(x), n) for n in n_list],
                y_mean,
                y_se,
                float(y_mean[phi_idx]),
                float(z_mean[p_idx] - y_mean[phi_idx]),
                float(diff_se[0]),
            )
        )

    window_estimates = []
    for k, (wx, eps, closed) in enumerate(windows, start=len(lambdas)):
        ok = np.array([_window_hits_cone(model.d, n, wx, eps, closed) for n in n_list])
        if not ok.any():
            raise EmptyDesignError(f"window x={wx}, eps={eps} misses the parity cone at every n")
        samples = (log_y[:, ok, k] - log_z[:, ok]) / ns[ok]
        mean, _, se = _mean_sd(samples)
        window_estimates.append(
            WindowEstimate(
                wx, eps, closed,
                [n for n, v in zip(n_list, ok) if v],
                [n for n, v in zip(n_list, ok) if not v],
                mean, se, running_sup(mean),
            )
        )
    return RatePoint(x, model.d, fe, tilts, window_estimates)


def phi_lambda_estimate(model: PolymerModel, x, lam: float, n_list, replicas: int, seed: SeedSpec, **kw) -> TiltEstimate:
    """``phi_hat_lambda(x)`` with the derived ``I^(lambda)(x) = p_hat - phi_hat``."""
    return rate_function_estimate(model, x, n_list, replicas, seed, lambda_grid=[lam], **kw).tilts[0]


def window_rate_estimate(
    model: PolymerModel, x, eps: float, n_list, replicas: int, seed: SeedSpec, closed: bool = True, **kw
) -> WindowEstimate:
    """``L_hat(x, eps)`` from ``ln Y_n - ln Z_n`` on shared fields."""
    point = rate_function_estimate(
        model, x, n_list, replicas, seed, lambda_grid=[1.0], windows=[(x, eps, closed)], **kw
    )
    return point.windows[0]


def rate_rows(point: RatePoint) -> str:
    """CSV of per-``n`` tilted means: lambda, n, mean, stderr, running_sup."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lambda", "n", "mean", "stderr", "running_sup"])
    for t in point.tilts:
        for n, m, s, r in zip(t.n_list, t.means, t.stderrs, running_sup(t.means)):
            w.writerow([_fmt(t.lam), n, _fmt(m), _fmt(s), _fmt(r)])
    return buf.getvalue()


# --------------------------------------------------------------------------
# straight-line endpoint
# --------------------------------------------------------------------------


@dataclass
class StraightEndpointCheck:
    n: int
    d: int
    max_residual: float
    rate_mean: float
    reference_mean: float
    energy_term_mean: float
    energy_term_stderr: float

    @property
    def consistent(self) -> bool:
        """Rate and reference differ by the mean energy term, within 3 SE of zero."""
        return abs(self.rate_mean - self.reference_mean) <= 3 * self.energy_term_stderr

    def to_dict(self) -> Dict:
        return dict(self.__dict__, consistent=self.consistent)


def straight_endpoint_check(model: PolymerModel, n: int, replicas: int, seed: SeedSpec) -> StraightEndpointCheck:
    """Per-field decomposition of ``-(1/n) ln P_n(S_n = n e_1)`` across replicas.

    Exactly one path reaches ``n e_1``, so
    ``ln P_n(S_n = n e_1) = beta sum_j eta(j, j e_1) - n ln(2d) - ln Z_n``.
    """
    from .disorder import PolymerShape, sample_field
    from .polymer import PolymerParams, log_partition, straight_path_energy

    params = PolymerParams(model.beta, model.d, n)
    target = np.zeros(model.d, dtype=int)
    target[0] = n
    residuals, rates, refs, energy = [], [], [], []
    for r in range(replicas):
        fld = sample_field(model.law, PolymerShape(model.d, n), seed, r)
        res = log_partition(fld, params)
        idx = int(np.flatnonzero((res.layer.sites == target).all(axis=1))[0])
        log_p = res.layer.log_values[idx] - res.log_z
        e = model.beta * straight_path_energy(fld)
        residuals.append(abs(log_p + n * math.log(2 * model.d) + res.log_z - e))
        rates.append(-log_p / n)
        refs.append(math.log(2 * model.d) + res.log_z / n)
        energy.append(e / n)
    energy = np.array(energy)
    return StraightEndpointCheck(
        n, model.d, float(max(residuals)), float(np.mean(rates)), float(np.mean(refs)),
        float(energy.mean()), float(energy.std(ddof=1) / math.sqrt(replicas)),
    )
