import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from disorder_lab.disorder import Gaussian, Rademacher, SeedSpec, cone_size
from disorder_lab.errors import ConfigurationError, DomainError, TooLargeError, UnsupportedOperation
from disorder_lab.parallel import ReplicaError
from disorder_lab.pinning import PinningModel, PinningParams, RenewalLaw, log_partition
from disorder_lab.disorder import PinningVector, PolymerCone
from disorder_lab.polymer import PolymerModel, PolymerParams
from disorder_lab.polymer import log_partition as polymer_log_partition
from disorder_lab.verify import (
    CampaignConfig,
    clopper_pearson_lower,
    clopper_pearson_upper,
    exact_conditional_check,
    holdout_stability,
    run_campaign,
)


def binom_cdf(k, n, p):
    return math.fsum(math.comb(n, i) * p ** i * (1 - p) ** (n - i) for i in range(k + 1))


def cp_upper_bisection(k, n, conf):
    lo, hi = k / n, 1.0
    for _ in range(200):
        mid = (lo + hi) / 2
        if binom_cdf(k, n, mid) > 1 - conf:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def cp_lower_bisection(k, n, conf):
    lo, hi = 0.0, k / n
    for _ in range(200):
        mid = (lo + hi) / 2
        if 1 - binom_cdf(k - 1, n, mid) < 1 - conf:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def test_cp_examples():
    assert clopper_pearson_upper(0, 100, 0.99) == pytest.approx(1 - 0.01 ** (1 / 100), rel=1e-12)
    assert clopper_pearson_upper(100, 100, 0.99) == 1.0
    vals = [clopper_pearson_upper(k, 2 * k, 0.99) for k in (50, 100, 200, 400)]
    assert all(0.5 < v < 1 for v in vals)
    assert all(b < a for a, b in zip(vals, vals[1:]))


@given(st.integers(1, 150), st.data(), st.sampled_from([0.9, 0.95, 0.99]))
def test_cp_against_bisection(n, data, conf):
    k = data.draw(st.integers(0, n - 1))
    assert clopper_pearson_upper(k, n, conf) == pytest.approx(cp_upper_bisection(k, n, conf), abs=1e-9)
    if k > 0:
        assert clopper_pearson_lower(k, n, conf) == pytest.approx(cp_lower_bisection(k, n, conf), abs=1e-9)


@pytest.mark.parametrize("k, n, conf", [(-1, 10, 0.9), (11, 10, 0.9), (0, 0, 0.9), (1, 10, 1.0)])
def test_cp_validation(k, n, conf):
    with pytest.raises(ValueError):
        clopper_pearson_upper(k, n, conf)


# ---------------------------------------------------------------- exact check


def naive_conditional_moments(model, n):
    """max over F_{j-1} atoms of E_{j-1} exp|V_{n,j}|, by dictionaries keyed on prefixes."""
    atoms = model.law.atoms()
    if isinstance(model, PinningModel):
        sizes = [1] * n
    else:
        sizes = [cone_size(model.d, j) for j in range(1, n + 1)]
    c = sum(sizes)
    cuts = np.cumsum([0] + sizes)

    def log_z(cfg):
        vals = [atoms[i][0] for i in cfg]
        if isinstance(model, PinningModel):
            return log_partition(PinningVector(vals), model.renewal, model.params).log_z
        layers = tuple(np.array(vals[cuts[j]:cuts[j + 1]]) for j in range(n))
        return polymer_log_partition(PolymerCone(model.d, n, layers), PolymerParams(model.beta, model.d, n)).log_z

    full = {cfg: log_z(cfg) for cfg in itertools.product(range(len(atoms)), repeat=c)}

    def prob(cfg):
        return math.prod(atoms[i][1] for i in cfg)

    cond = {}
    for j in range(n + 1):
        m = cuts[j]
        acc = {}
        for cfg, v in full.items():
            acc.setdefault(cfg[:m], 0.0)
            acc[cfg[:m]] += prob(cfg[m:]) * v
        cond[j] = acc
    out = []
    for j in range(1, n + 1):
        best = 0.0
        for prefix, prev in cond[j - 1].items():
            tot = 0.0
            for ext in itertools.product(range(len(atoms)), repeat=sizes[j - 1]):
                tot += prob(ext) * math.exp(abs(cond[j][prefix + ext] - prev))
            best = max(best, tot)
        out.append(best)
    return out


def test_exact_pinning_example():
    model = PinningModel(Rademacher(), RenewalLaw.geometric(0.5), PinningParams(1.0, 0.0))
    rep = exact_conditional_check(model, 2)
    assert rep.K == pytest.approx(2 * math.cosh(1) ** 2, rel=1e-14)
    assert rep.configurations == 4
    assert min(rep.margins) >= 0 and rep.ok
    assert rep.values == pytest.approx(naive_conditional_moments(model, 2), rel=1e-13)


def test_exact_polymer_example():
    model = PolymerModel(Rademacher(), 0.5, 1)
    rep = exact_conditional_check(model, 4)
    assert rep.configurations == 2 ** 14
    assert rep.K == pytest.approx(2 * math.cosh(0.5) ** 2, rel=1e-14)
    assert min(rep.margins) >= 0 and rep.telescoping_residual <= 1e-12


@pytest.mark.parametrize("model, n", [
    (PinningModel(Rademacher(), RenewalLaw.srw_return(1, 6), PinningParams(0.7, -0.3)), 6),
    (PinningModel(Rademacher(p=0.3), RenewalLaw.explicit([0.2, 0.5, 0.1]), PinningParams(1.0, 0.5)), 5),
    (PolymerModel(Rademacher(), 1.0, 1), 3),
    (PolymerModel(Rademacher(), 0.6, 2), 2),
])
def test_exact_matches_naive_enumeration(model, n):
    rep = exact_conditional_check(model, n)
    assert rep.values == pytest.approx(naive_conditional_moments(model, n), rel=1e-12)


def test_exact_degenerate_beta_zero():
    rep = exact_conditional_check(PinningModel(Rademacher(), RenewalLaw.geometric(0.5), PinningParams(0.0, 0.0)), 6)
    assert rep.values == pytest.approx([1.0] * 6, abs=1e-15)
    assert rep.K == 2.0


def test_exact_refusals():
    with pytest.raises(TooLargeError, match="limit"):
        exact_conditional_check(PinningModel(Rademacher(), RenewalLaw.geometric(0.5), PinningParams(1.0)), 25)
    with pytest.raises(TooLargeError):
        exact_conditional_check(PolymerModel(Rademacher(), 1.0, 1), 6)
    with pytest.raises(UnsupportedOperation):
        exact_conditional_check(PolymerModel(Gaussian(), 1.0, 1), 2)


# ---------------------------------------------------------------- campaigns


def test_campaign_beta_zero():
    model = PolymerModel(Gaussian(), 0.0, 1)
    rep = run_campaign(CampaignConfig(model, 30, 120, SeedSpec(1)))
    assert all(r.count == 0 for r in rep.tails)
    assert all(r.mean == 1.0 and r.stderr == 0.0 for r in rep.mgfs)
    assert all(r.passed for r in rep.mgfs)
    assert rep.K == 2.0 and rep.annealed_per_step == 0.0


def test_campaign_report_roundtrip():
    model = PinningModel(Gaussian(), RenewalLaw.geometric(0.5), PinningParams(0.5, 0.0))
    cfg = CampaignConfig(model, 40, 200, SeedSpec(7), x_grid=[0.05, 0.1, 0.2])
    a, b = run_campaign(cfg), run_campaign(cfg)
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)
    assert a.holdout == 50 and a.tails[0].trials == 150
    assert a.recheck()
    assert a.all_pass
    a.tails[0].passed = not a.tails[0].passed
    assert not a.recheck()
    assert a.tail_csv().splitlines()[0] == "sign,x,freq,upper_cl,bound,pass"


def test_forced_failure():
    model = PolymerModel(Gaussian(), 0.5, 1)
    cfg = CampaignConfig(model, 20, 100, SeedSpec(2), x_grid=[0.1], t_grid=[0.5], bound_divisor=1e10)
    rep = run_campaign(cfg)
    assert not rep.all_pass and rep.recheck()


def test_tail_verdict_matches_stated_comparison():
    model = PolymerModel(Gaussian(), 0.5, 1)
    rep = run_campaign(CampaignConfig(model, 30, 200, SeedSpec(5)))
    for r in rep.tails:
        assert r.upper_cl == clopper_pearson_upper(r.count, r.trials, 0.99)
        assert r.passed == (math.log(r.upper_cl) <= r.log_bound)
        assert r.resolvable == (math.log(clopper_pearson_upper(0, r.trials, 0.99)) <= r.log_bound)
        assert not r.falsified


@pytest.mark.parametrize("kw", [
    {"replicas": 99},
    {"holdout": 0.0},
    {"holdout": 0.6},
    {"x_grid": [0.2, 0.1]},
    {"x_grid": [-0.1, 0.1]},
    {"t_grid": [0.5, 1.5]},
    {"bound_divisor": 0.5},
])
def test_campaign_config_validation(kw):
    base = dict(model=PolymerModel(Gaussian(), 0.5, 1), n=10, replicas=100, seed=SeedSpec(0))
    with pytest.raises(ConfigurationError):
        CampaignConfig(**{**base, **kw})


class FailingModel:
    kind = "polymer"
    law = Gaussian()
    beta = 0.5

    def K(self):
        return 2.0

    def check(self):
        pass

    def log_partitions(self, n_list, seed, replicas):
        if 137 in replicas:
            raise FloatingPointError("synthetic failure")
        return np.zeros((len(replicas), len(n_list)))


def test_replica_failure_reports_index():
    with pytest.raises(ReplicaError) as info:
        run_campaign(CampaignConfig(FailingModel(), 5, 200, SeedSpec(0)))
    assert info.value.replica == 137


def test_holdout_stability():
    model = PolymerModel(Gaussian(), 0.5, 1)
    rows = holdout_stability(CampaignConfig(model, 8, 400, SeedSpec(11)))
    assert any(r.freq > 0 for r in rows)
    assert all(r.stable for r in rows)


@pytest.mark.parametrize("n", [1, 3, 5])
def test_exact_check_rejects_unreachable_horizon(n):
    model = PinningModel(Rademacher(), RenewalLaw.srw_return(1, 10), PinningParams(0.5, 0.0))
    with pytest.raises(DomainError):
        exact_conditional_check(model, n)
