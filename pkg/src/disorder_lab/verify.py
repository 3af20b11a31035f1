"""Concentration campaigns and exact conditional-moment checks.

A campaign draws ``M`` replicas of ``ln Z_n``, centers them by the mean of a
holdout subset, and compares empirical two-sided tail frequencies and
moment generating functions on the remaining replicas with

    P(+-(ln Z_n - E ln Z_n)/n > x) <= exp(-n sup_t (t x - K t^2))
    E exp(+-t (ln Z_n - E ln Z_n))  <= exp(n K t^2).

The exact check enumerates every disorder configuration of a small instance
and evaluates ``E_{j-1} exp|V_{n,j}|`` for the Doob martingale differences
``V_{n,j} = E_j ln Z_n - E_{j-1} ln Z_n``.
"""

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from functools import partial
from typing import List, Optional, Sequence

import numpy as np
from scipy import stats

from .disorder import SeedSpec, cone_size
from .errors import ConfigurationError, DomainError, TooLargeError
from .martingale import BoundParams, log_mgf_bound, log_tail_bound
from .parallel import DEFAULT_CHUNK, map_replicas
from .pinning import PinningModel, forward_log_partitions
from .polymer import EndpointWeight, One, PolymerModel, _cone_from_dense, iter_stacked_log_layers
from ._numerics import logsumexp

DEFAULT_X_FRACTIONS = (0.1, 0.2, 0.5, 1.0)
DEFAULT_T_GRID = tuple(round(0.1 * k, 1) for k in range(1, 11))
EXACT_MAX_CONFIGURATIONS = 2 * 10 ** 7


def clopper_pearson_upper(successes: int, trials: int, confidence: float = 0.99) -> float:
    """Exact one-sided upper confidence limit for a binomial proportion."""
    if not 0 <= successes <= trials or trials < 1:
        raise ValueError(f"need 0 <= successes <= trials, trials >= 1; got {successes}/{trials}")
    if not 0 < confidence < 1:
        raise ValueError(f"confidence must lie in (0, 1), got {confidence!r}")
    if successes == trials:
        return 1.0
    return float(stats.beta.ppf(confidence, successes + 1, trials - successes))


def clopper_pearson_lower(successes: int, trials: int, confidence: float = 0.99) -> float:
    """Exact one-sided lower confidence limit for a binomial proportion."""
    if not 0 <= successes <= trials or trials < 1:
        raise ValueError(f"need 0 <= successes <= trials, trials >= 1; got {successes}/{trials}")
    if not 0 < confidence < 1:
        raise ValueError(f"confidence must lie in (0, 1), got {confidence!r}")
    if successes == 0:
        return 0.0
    return float(stats.beta.ppf(1 - confidence, successes, trials - successes + 1))


# --------------------------------------------------------------------------
# campaigns
# --------------------------------------------------------------------------


@dataclass
class CampaignConfig:
    model: object
    n: int
    replicas: int
    seed: SeedSpec
    x_grid: Optional[Sequence[float]] = None
    x_fractions: Sequence[float] = DEFAULT_X_FRACTIONS
    t_grid: Sequence[float] = DEFAULT_T_GRID
    holdout: float = 0.25
    confidence: float = 0.99
    bound_divisor: float = 1.0
    chunk_size: int = DEFAULT_CHUNK

    def __post_init__(self):
        if self.n < 1:
            raise ConfigurationError(f"n must be >= 1, got {self.n}")
        if self.replicas < 100:
            raise ConfigurationError(f"a campaign needs at least 100 replicas, got {self.replicas}")
        if not 0 < self.holdout <= 0.5:
            raise ConfigurationError(f"holdout fraction must lie in (0, 1/2], got {self.holdout}")
        grid = list(self.x_grid) if self.x_grid is not None else list(self.x_fractions)
        if not grid or grid[0] <= 0 or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigurationError(f"x grid must be positive and ascending, got {grid}")
        if any(not 0 <= t <= 1 for t in self.t_grid):
            raise ConfigurationError(f"t grid must lie in [0, 1], got {list(self.t_grid)}")
        if not self.bound_divisor >= 1:
            raise ConfigurationError("bound_divisor must be >= 1")

    def resolved_x_grid(self, K: float) -> List[float]:
        if self.x_grid is not None:
            return [float(x) for x in self.x_grid]
        return [float(f) * K for f in self.x_fractions]


@dataclass
class TailRow:
    """One tail comparison. ``passed`` is the verdict ``upper_cl <= bound``.

    ``resolvable`` says whether the sample could pass at all (the zero-count
    upper limit lies below the bound); ``falsified`` says the lower limit
    exceeds the bound, i.e. the data contradict the inequality.
    """

    sign: int
    x: float
    count: int
    trials: int
    freq: float
    upper_cl: float
    lower_cl: float
    log_bound: float
    bound: float
    passed: bool
    resolvable: bool
    falsified: bool


@dataclass
class MgfRow:
    sign: int
    t: float
    mean: float
    stderr: float
    log_bound: float
    passed: bool


def _tail_pass(upper_cl: float, log_bound: float) -> bool:
    # log space keeps the comparison meaningful when the bound underflows
    return upper_cl == 0.0 or math.log(upper_cl) <= log_bound


def _mgf_pass(mean: float, stderr: float, log_bound: float) -> bool:
    lhs = mean - 2 * stderr
    return lhs <= 0 or math.log(lhs) <= log_bound


@dataclass
class CampaignReport:
    model: str
    n: int
    replicas: int
    holdout: int
    K: float
    holdout_mean: float
    annealed_per_step: float
    confidence: float
    bound_divisor: float
    tails: List[TailRow]
    mgfs: List[MgfRow]
    evaluation_sd: float = 0.0
    model_summary: dict = field(default_factory=dict)

    @property
    def all_pass(self) -> bool:
        return all(r.passed for r in self.tails) and all(r.passed for r in self.mgfs)

    @property
    def falsified(self) -> bool:
        """True when some tail frequency is significantly above its bound."""
        return any(r.falsified for r in self.tails)

    def recheck(self) -> bool:
        """Recompute every verdict from the stored raw counts and means."""
        for r in self.tails:
            cl = clopper_pearson_upper(r.count, r.trials, self.confidence)
            if cl != r.upper_cl or _tail_pass(cl, r.log_bound) != r.passed:
                return False
            if (clopper_pearson_lower(r.count, r.trials, self.confidence) > math.exp(r.log_bound)) != r.falsified:
                return False
        for r in self.mgfs:
            if _mgf_pass(r.mean, r.stderr, r.log_bound) != r.passed:
                return False
        return True

    def to_dict(self) -> dict:
        out = asdict(self)
        out["all_pass"] = self.all_pass
        out["falsified"] = self.falsified
        return out

    def tail_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sign", "x", "freq", "upper_cl", "bound", "pass"])
        for r in self.tails:
            w.writerow([
                "+" if r.sign > 0 else "-",
                format(r.x, ".17g"), format(r.freq, ".17g"),
                format(r.upper_cl, ".17g"), format(r.bound, ".17g"), int(r.passed),
            ])
        return buf.getvalue()


def _model_log_z(model, n: int, seed: SeedSpec, replicas):
    return model.log_partitions([n], seed, replicas)[:, 0]


def campaign_samples(config: CampaignConfig, threads: int = 1) -> np.ndarray:
    """Raw ``ln Z_n`` for every replica, in replica order."""
    parts = map_replicas(
        partial(_model_log_z, config.model, config.n, config.seed),
        range(config.replicas), threads, config.chunk_size,
    )
    return np.concatenate(parts)


def run_campaign(config: CampaignConfig, threads: int = 1, samples: Optional[np.ndarray] = None) -> CampaignReport:
    model = config.model
    model.check()
    K = model.K()
    bp = BoundParams(config.n, K)
    log_z = campaign_samples(config, threads) if samples is None else np.asarray(samples)
    if not np.all(np.isfinite(log_z)):
        raise ConfigurationError(f"ln Z_n is not finite at n={config.n}; horizon unreachable")
    H = max(1, int(round(config.holdout * config.replicas)))
    centre = float(np.mean(log_z[:H]))
    dev = log_z[H:] - centre
    trials = len(dev)
    shrink = math.log(config.bound_divisor)

    zero_count_cl = clopper_pearson_upper(0, trials, config.confidence)
    tails = []
    for sign in (1, -1):
        for x in config.resolved_x_grid(K):
            count = int(np.sum(sign * dev / config.n > x))
            cl = clopper_pearson_upper(count, trials, config.confidence)
            lo = clopper_pearson_lower(count, trials, config.confidence)
            lb = log_tail_bound(bp, x) - shrink
            tails.append(TailRow(
                sign, x, count, trials, count / trials, cl, lo, lb, math.exp(lb), _tail_pass(cl, lb),
                _tail_pass(zero_count_cl, lb), lo > math.exp(lb),
            ))

    mgfs = []
    for sign in (1, -1):
        for t in config.t_grid:
            vals = np.exp(sign * t * dev)
            mean = float(vals.mean())
            se = float(vals.std(ddof=1) / math.sqrt(trials))
            lb = log_mgf_bound(bp, t) - shrink
            mgfs.append(MgfRow(sign, float(t), mean, se, lb, _mgf_pass(mean, se, lb)))

    beta = model.params.beta if isinstance(model, PinningModel) else model.beta
    return CampaignReport(
        model=model.kind,
        n=config.n,
        replicas=config.replicas,
        holdout=H,
        K=K,
        holdout_mean=centre,
        annealed_per_step=model.law.log_mgf(beta),
        confidence=config.confidence,
        bound_divisor=config.bound_divisor,
        tails=tails,
        mgfs=mgfs,
        evaluation_sd=float(dev.std(ddof=1)),
    )


@dataclass
class StabilityRow:
    sign: int
    x: float
    freq: float
    freq_doubled: float
    half_width: float

    @property
    def stable(self) -> bool:
        return abs(self.freq_doubled - self.freq) < self.half_width or self.freq == self.freq_doubled


def holdout_stability(config: CampaignConfig, threads: int = 1) -> List[StabilityRow]:
    """Rerun with ``2M`` replicas (holdout doubles too) and compare tail frequencies.

    Replica streams are keyed by index, so the doubled campaign extends the
    original one; the half-width is that of the original two-sided interval.
    """
    doubled = CampaignConfig(**{**config.__dict__, "replicas": 2 * config.replicas})
    samples = campaign_samples(doubled, threads)
    base = run_campaign(config, threads, samples[: config.replicas])
    big = run_campaign(doubled, threads, samples)
    return [
        StabilityRow(a.sign, a.x, a.freq, b.freq, (a.upper_cl - a.lower_cl) / 2)
        for a, b in zip(base.tails, big.tails)
    ]


# --------------------------------------------------------------------------
# exact conditional moments
# --------------------------------------------------------------------------


@dataclass
class ExactCheckReport:
    model: str
    n: int
    K: float
    values: List[float]
    margins: List[float]
    telescoping_residual: float
    configurations: int
    params: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return min(self.margins) >= -1e-10 and self.telescoping_residual <= 1e-12

    def to_dict(self) -> dict:
        out = asdict(self)
        out["ok"] = self.ok
        return out


def _coordinate_groups(model, n: int) -> List[int]:
    if isinstance(model, PinningModel):
        return [1] * n
    return [cone_size(model.d, j) for j in range(1, n + 1)]


def _log_functional(model, n: int, values: np.ndarray, weight: EndpointWeight) -> np.ndarray:
    """``ln Z_n`` (pinning) or ``ln Y_n`` (polymer) for each row of coordinate values."""
    if isinstance(model, PinningModel):
        return forward_log_partitions(values, model.renewal, model.params)[:, n]
    from .disorder import cone_sites

    groups = _coordinate_groups(model, n)
    bounds = np.cumsum([0] + groups)
    layers = (values[:, bounds[j] : bounds[j + 1]] for j in range(n))
    out = None
    for j, dense in iter_stacked_log_layers(layers, model.d, len(values), model.beta, stop=n):
        if j == n:
            cone = _cone_from_dense(dense, model.d, n)
            out = logsumexp(cone + weight.log_weights(cone_sites(model.d, n), n)[None, :], axis=1)
    return out


def exact_conditional_check(model, n: int, weight: EndpointWeight = One()) -> ExactCheckReport:
    """Exact ``max E_{j-1} exp|V_{n,j}|`` over all ``F_{j-1}`` atoms, for ``j = 1..n``.

    The disorder law must be finitely supported. Every configuration of the
    ``c`` disorder coordinates is enumerated; the instance is refused when
    ``|support|^c`` exceeds :data:`EXACT_MAX_CONFIGURATIONS`, and rejected with
    :class:`DomainError` when ``Z_n`` vanishes (e.g. an unreachable horizon).
    """
    model.check()
    atoms = model.law.atoms()
    vals = np.array([v for v, _ in atoms])
    probs = np.array([p for _, p in atoms])
    s = len(atoms)
    groups = _coordinate_groups(model, n)
    c = sum(groups)
    total = s ** c
    if total > EXACT_MAX_CONFIGURATIONS:
        raise TooLargeError(
            f"{s}^{c} = {total} configurations exceeds the limit {EXACT_MAX_CONFIGURATIONS}"
        )

    # C-order enumeration: coordinate 0 is the most significant digit
    L = np.empty(total)
    radix = s ** np.arange(c - 1, -1, -1, dtype=np.int64)
    chunk = 1 << 16
    for lo in range(0, total, chunk):
        idx = np.arange(lo, min(lo + chunk, total), dtype=np.int64)
        digits = (idx[:, None] // radix[None, :]) % s
        L[lo : lo + len(idx)] = _log_functional(model, n, vals[digits], weight)
    L = L.reshape((s,) * c)
    if not np.all(np.isfinite(L)):
        # Z_n = 0 (unreachable horizon or empty window): the increments are undefined
        raise DomainError(f"ln Z_{n} is not finite for every environment; the martingale is undefined")

    # E_j: expectation over every coordinate after the first j groups
    cond = [None] * (n + 1)
    cond[n] = L
    cur = L
    for j in range(n, 0, -1):
        for _ in range(groups[j - 1]):
            cur = cur @ probs
        cond[j - 1] = cur

    K = model.K()
    values, margins = [], []
    telescoped = np.zeros_like(L)
    for j in range(1, n + 1):
        g = groups[j - 1]
        prev = cond[j - 1].reshape(cond[j - 1].shape + (1,) * g)
        V = cond[j] - prev
        m = np.exp(np.abs(V))
        for _ in range(g):
            m = m @ probs
        values.append(float(m.max()))
        margins.append(K - float(m.max()))
        rest = c - V.ndim
        telescoped = telescoped + V.reshape(V.shape + (1,) * rest)
    residual = float(np.max(np.abs(telescoped - (L - cond[0]))))

    if isinstance(model, PinningModel):
        params = {"beta": model.params.beta, "h": model.params.h, "renewal": model.renewal.kind}
    else:
        params = {"beta": model.beta, "d": model.d}
    return ExactCheckReport(model.kind, n, K, values, margins, residual, total, params)
