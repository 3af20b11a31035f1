import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_pinning, rel_err
from disorder_lab.disorder import Gaussian, PinningShape, PinningVector, Rademacher, ShiftedExponential, sample_field
from disorder_lab.errors import ConfigurationError, DomainError, TooLargeError
from disorder_lab.pinning import (
    PinningModel,
    PinningParams,
    RenewalLaw,
    log_partition,
    log_partition_bruteforce,
    pinning_K,
    renewal_mass,
    renewal_masses,
)


def itertools_oracle(values, q, params):
    """Direct sum over renewal sets, written independently of the package oracle."""
    n = len(values)
    qq = q.pmf(n)
    total = 0.0
    for r in range(n):
        for inner in itertools.combinations(range(1, n), r):
            pts = list(inner) + [n]
            w = math.prod(qq[b - a] for a, b in zip([0] + pts[:-1], pts))
            total += w * math.exp(sum(params.beta * values[k - 1] + params.h for k in pts))
    return math.log(total) if total > 0 else -math.inf


@st.composite
def renewal_laws(draw):
    kind = draw(st.sampled_from(["geometric", "explicit", "srw"]))
    if kind == "geometric":
        return RenewalLaw.geometric(draw(st.floats(0.05, 1.0)))
    if kind == "srw":
        return RenewalLaw.srw_return(draw(st.integers(1, 3)), draw(st.integers(2, 14)))
    k = draw(st.integers(1, 12))
    w = np.array(draw(st.lists(st.floats(0.0, 1.0), min_size=k, max_size=k))) + 1e-3
    mass = draw(st.floats(0.3, 1.0))
    return RenewalLaw.explicit(mass * w / w.sum())


def test_K_examples():
    assert pinning_K(PinningParams(1.0, 0.0), Gaussian()) == pytest.approx(2 * math.e, rel=1e-14)
    assert pinning_K(PinningParams(1.0, 0.0), Rademacher()) == pytest.approx(2 * math.cosh(1) ** 2, rel=1e-14)
    assert pinning_K(PinningParams(1e-9, 0.0), Gaussian()) == pytest.approx(2.0, rel=1e-12)
    with pytest.raises(DomainError):
        pinning_K(PinningParams(1.5, 0.0), ShiftedExponential(rate=1.0))


def test_small_closed_forms():
    q = RenewalLaw.explicit([0.3, 0.5])
    p = PinningParams(0.8, -0.2)
    a, b = 0.7, -1.3
    assert log_partition(PinningVector([a]), q, p).log_z == pytest.approx(math.log(0.3) + 0.8 * a - 0.2, abs=1e-14)
    z2 = 0.5 * math.exp(0.8 * b - 0.2) + 0.09 * math.exp(0.8 * (a + b) - 0.4)
    fld = PinningVector([a, b])
    assert log_partition(fld, q, p).log_z == pytest.approx(math.log(z2), abs=1e-14)
    assert log_partition_bruteforce(fld, q, p).log_z == pytest.approx(math.log(z2), abs=1e-14)


@given(renewal_laws(), st.integers(1, 10), st.floats(0, 2), st.floats(-1, 1), st.integers(0, 10 ** 6))
def test_dp_matches_itertools_oracle(q, n, beta, h, s):
    vals = np.random.default_rng(s).standard_normal(n)
    params = PinningParams(beta, h)
    dp = log_partition(PinningVector(vals), q, params).log_z
    ref = itertools_oracle(vals, q, params)
    if ref == -math.inf:
        assert dp == -math.inf
    else:
        assert rel_err(dp, ref) <= 1e-10
        assert rel_err(log_partition_bruteforce(PinningVector(vals), q, params).log_z, ref) <= 1e-10


def test_bruteforce_limit():
    with pytest.raises(TooLargeError, match="22"):
        log_partition_bruteforce(PinningVector(np.zeros(23)), RenewalLaw.geometric(0.5), PinningParams(1.0))


def test_geometric_renewal_mass():
    for p in (0.3, 0.5, 0.9):
        u = renewal_masses(RenewalLaw.geometric(p), 50)
        assert u[0] == 1.0
        assert np.max(np.abs(u[1:] - p)) <= 1e-12


def test_point_mass_renewal():
    u = renewal_masses(RenewalLaw.explicit([0.0, 1.0]), 20)
    assert u.tolist() == [1.0 if m % 2 == 0 else 0.0 for m in range(21)]


def test_beta_zero_reduction():
    q = RenewalLaw.geometric(0.3)
    fld = random_pinning(np.random.default_rng(0), 7)
    assert math.exp(log_partition(fld, q, PinningParams(0.0, 0.0)).log_z) == pytest.approx(0.3, abs=1e-15)
    srw = RenewalLaw.srw_return(1, 30)
    fld = random_pinning(np.random.default_rng(1), 30)
    for n in (2, 10, 30):
        z = log_partition(PinningVector(fld.values[:n]), srw, PinningParams(0.0, 0.0)).log_z
        assert z == pytest.approx(math.log(renewal_mass(srw, n)), abs=1e-12)


def test_srw_first_return_closed_form():
    q = RenewalLaw.srw_return(1, 40).pmf(40)
    for m in range(1, 21):
        ref = math.comb(2 * m, m) / ((2 * m - 1) * 4 ** m)
        assert q[2 * m] == pytest.approx(ref, rel=1e-12)
        assert q[2 * m - 1] == 0.0
    # P(S_2 = 0) in dimension d is 1/(2d), and the first return at time 2 is the same event
    for dim in (2, 3):
        assert RenewalLaw.srw_return(dim, 4).pmf(4)[2] == pytest.approx(1 / (2 * dim), rel=1e-12)
    # u(n) matches direct return probabilities for d = 2: [C(2m, m) / 4^m]^2
    u = renewal_masses(RenewalLaw.srw_return(2, 30), 30)
    for m in range(1, 16):
        assert u[2 * m] == pytest.approx((math.comb(2 * m, m) / 4 ** m) ** 2, rel=1e-10)


def test_unreachable_horizon():
    q = RenewalLaw.explicit([0.0, 1.0])
    res = log_partition(PinningVector([0.1, 0.2, 0.3]), q, PinningParams(1.0))
    assert not res.reachable and res.log_z == -math.inf
    assert log_partition(PinningVector([0.1, 0.2]), q, PinningParams(1.0)).reachable


def test_monotone_in_h(rng):
    q = RenewalLaw.geometric(0.4)
    for _ in range(20):
        fld = random_pinning(rng, 30)
        lo = log_partition(fld, q, PinningParams(0.7, 0.0)).log_z
        hi = log_partition(fld, q, PinningParams(0.7, 0.1)).log_z
        assert hi > lo


def test_shift_superadditivity(rng):
    q = RenewalLaw.srw_return(1, 60)
    params = PinningParams(0.9, 0.1)
    for _ in range(30):
        n, m = rng.integers(2, 30, size=2) * 2
        fld = random_pinning(rng, n + m)
        whole = log_partition(fld, q, params).log_z
        first = log_partition(PinningVector(fld.values[:n]), q, params).log_z
        second = log_partition(fld.shift(n), q, params).log_z
        assert whole >= first + second - 1e-12


def test_batched_replicas_match_single(seed):
    model = PinningModel(Gaussian(), RenewalLaw.geometric(0.5), PinningParams(0.5, 0.0))
    batch = model.log_partitions([5, 17, 40], seed, range(6))
    for r in range(6):
        fld = sample_field(model.law, PinningShape(40), seed, r)
        for k, n in enumerate((5, 17, 40)):
            single = log_partition(PinningVector(fld.values[:n]), model.renewal, model.params).log_z
            assert batch[r, k] == single


@pytest.mark.parametrize("q", [[], [-0.1, 0.5], [0.7, 0.6]])
def test_explicit_law_validation(q):
    with pytest.raises(ConfigurationError):
        RenewalLaw.explicit(q)


@pytest.mark.parametrize("beta, h", [(-0.1, 0.0), (math.nan, 0.0), (1.0, math.inf)])
def test_params_validation(beta, h):
    with pytest.raises(ConfigurationError):
        PinningParams(beta, h)
