import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfcbench import bound_calculus as bc
from mfcbench import dictionary_classes as dc
from mfcbench import distributions as ds
from mfcbench.errors import ConfigurationError, ContractError, RefusalError
from mfcbench.penalties import PenaltySpec

S = dc.DictionaryClassSpec
getcontext().prec = 50


def _dec_eta(n, x, beta, c, lead):
    # independent evaluation in 50-digit decimal arithmetic
    n, x, beta, c = (Decimal(repr(v)) for v in (n, x, beta, c))
    return float(Decimal(lead) * c * (beta * n.ln() / n).sqrt() + c * ((beta + x) / n).sqrt())


def test_beta_examples():
    # 2LC/c = e: log = 1
    assert bc.beta(7, 1.0, math.e / 2, 1.0) == pytest.approx(7.0, rel=1e-15)
    assert bc.beta(7, 1.0, 0.1, 1.0) == 7.0
    kmeans = bc.beta(50, 3.0, 2.0, 1 / math.sqrt(8))
    assert kmeans == pytest.approx(50 * math.log(12 * math.sqrt(8)), rel=1e-12)
    assert kmeans == pytest.approx(176.23, abs=0.01)
    with pytest.raises(ContractError):
        bc.beta(0.5, 3.0, 1.0, 1.0)
    with pytest.raises(ContractError):
        bc.beta(1, 3.0, -1.0, 1.0)


def test_eta_examples():
    e = math.e
    assert bc.eta_n(e, 0.0, 1.0, 1.0, bc.THREE_C) == pytest.approx(4 / math.sqrt(e), rel=1e-15)
    v = bc.eta_n(1e5, 5.0, 176.33, 1 / math.sqrt(8), bc.TWO_C)
    assert v == pytest.approx(_dec_eta(1e5, 5.0, 176.33, 1 / math.sqrt(8), 2), rel=1e-12)
    assert bc.eta_n(1000, 3, 10, 2.0) == pytest.approx(2 * bc.eta_n(1000, 3, 10, 1.0), rel=1e-15)
    with pytest.raises(ContractError):
        bc.eta_n(1, 0, 1, 1)
    with pytest.raises(ContractError):
        bc.eta_n(10, 0, 1, 1, "four_c")


def test_sample_size_examples():
    assert not bc.sample_size_ok(10, 1.0, math.inf, 2.0, 1.0)
    assert bc.sample_size_ok(1e9, 176.33, 1.0, 1.0, 1.0, 4.0)
    beta = 176.33
    n0 = bc.min_valid_n(beta, math.inf, 1 / math.sqrt(8), 2.0)
    scan = next(n for n in range(3, 1000) if n / math.log(n) >= 8)
    assert n0 == scan == 27
    assert bc.x_max(100, 5.0, math.inf) == math.inf
    assert bc.x_max(100, 5.0, 1.0) == pytest.approx(100 - 5 * math.log(100))


def test_beta_chi0_numeric():
    ex = bc.worked_example_beta("chi_0", m=16, d=32, k=4, delta=0.5)
    assert ex.beta == pytest.approx(512 * math.log(12 * 8), rel=1e-14)
    assert ex.consistent


def test_kmeans_example_matches_generic():
    ex = bc.worked_example_beta("kmeans", m=10, K=5)
    assert ex.beta == pytest.approx(bc.beta(50, 3, 2, 1 / math.sqrt(8)), rel=1e-12)


def test_clamped_examples_equal_h():
    # parameters where every max(., 1) clamps
    assert bc.worked_example_beta("l1", m=3, d=2, lam=0.1).beta == 6
    assert bc.worked_example_beta("l1_squared", m=3, d=2, lam=0.1).beta == 6
    assert bc.worked_example_beta("chi_p", m=3, d=2, lam=0.01, p=2).beta == 6
    assert bc.worked_example_beta("pca_subgauss", m=3, d=2, A=1e3).beta == 6 - 3
    assert bc.worked_example_beta("subgauss_l1_squared", m=3, d=2, lam=1.0, A=1.0).beta == 6
    assert bc.worked_example_beta("sparse_chi_1", m=3, d=2, s=3, lam=1e-3).beta == 6


def test_unknown_example():
    with pytest.raises(RefusalError):
        bc.worked_example_beta("arctangent", m=2, d=2)


@pytest.mark.parametrize("row", bc.examples_table(), ids=lambda r: r.name)
def test_examples_consistent(row):
    assert row.consistent
    if row.is_upper_bound:
        assert row.generic_beta <= row.beta
    else:
        assert math.isclose(row.beta, row.generic_beta, rel_tol=1e-12)


def test_assemble_chi1_matches_example():
    m, d, lam = 6, 4, 1.7
    rep = bc.assemble(S.unit_norm(m, d), PenaltySpec.lp_ball(d, 1, lam), ds.DistributionSpec.sphere(m), [100, 1000])
    ex = bc.worked_example_beta("chi_p", m=m, d=d, lam=lam, p=1)
    assert rep.beta == pytest.approx(ex.beta, rel=1e-12)
    assert rep.flavor == bc.TWO_C and rep.gamma_zero


def test_assemble_pca_matches_example():
    m, d = 10, 3
    rep = bc.assemble(S.stiefel(m, d), PenaltySpec.zero(d), ds.DistributionSpec.sphere(m), [100, 10**5])
    ex = bc.worked_example_beta("pca", m=m, d=d)
    assert rep.beta == pytest.approx(ex.beta, rel=1e-12)
    assert rep.flavor == bc.THREE_C and rep.dconst == d


def test_assemble_flags_small_n():
    rep = bc.assemble(S.unit_norm(3, 2), PenaltySpec.kmeans(2), ds.DistributionSpec.sphere(3), [4, 10**4])
    assert not rep.rows[0].valid and rep.rows[0].eta > 0
    assert rep.rows[1].valid
    assert rep.to_dict()["rows"][0]["x_max"] == "inf"
    assert rep.to_csv().splitlines()[0] == "n,x,eta,sample_size_ok,x_max,valid"


def test_assemble_errors():
    with pytest.raises(ConfigurationError):
        bc.assemble(S.unit_norm(3, 2), PenaltySpec.k_sparse(2, 1), ds.DistributionSpec.sphere(3), [100])
    with pytest.raises(ConfigurationError):
        bc.assemble(S.unit_norm(3, 2), PenaltySpec.kmeans(2), ds.DistributionSpec.sphere(4), [100])
    with pytest.raises(ConfigurationError):
        bc.assemble(S.unit_norm(3, 2), PenaltySpec.kmeans(2), ds.DistributionSpec.sphere(3), [100, 50])


def test_assemble_subgaussian_records_factor():
    cls = S.unit_norm(6, 8)
    dist = ds.DistributionSpec.subgaussian_sparse(dc.sample(cls, np.random.default_rng(0)), 2, 1.0, 0.0, cls)
    rep = bc.assemble(cls, PenaltySpec.lasso(8, 1.0), dist, [10**3, 10**5], rng=np.random.default_rng(1))
    assert rep.T == 1.0 and rep.A == 10.0 and not rep.gamma_zero
    assert any("5 (k sigma_alpha^2" in note for note in rep.notes)


# properties ---------------------------------------------------------------

pos = st.floats(1e-3, 1e3)


@given(st.floats(1, 1e4), st.floats(0, 100), st.floats(1, 1e4), pos, st.sampled_from([bc.TWO_C, bc.THREE_C]))
def test_eta_decreasing(n, x, beta, c, flavor):
    n = max(n, 3.0)
    assert bc.eta_n(n * 1.5, x, beta, c, flavor) < bc.eta_n(n, x, beta, c, flavor)


@given(st.floats(1, 1e4), st.floats(0, 100), pos)
def test_eta_limit(beta, x, c):
    n = 1e6
    ratio = bc.eta_n(n, x, beta, c) * math.sqrt(n / math.log(n)) / (2 * c * math.sqrt(beta))
    assert 1 <= ratio <= 1.05 + math.sqrt((beta + x) / beta) / (2 * math.sqrt(math.log(n)))


@given(st.floats(1, 1e4), st.floats(1, 1e3), pos, pos, st.floats(1.0, 10.0))
def test_beta_monotone(h, C, L, c, a):
    b = bc.beta(h, C, L, c)
    assert b >= h
    assert bc.beta(h * a, C, L, c) >= b
    assert bc.beta(h, C * a, L, c) >= b
    assert bc.beta(h, C, L * a, c) >= b
    assert bc.beta(h, C, L, c * a) <= b


@given(st.floats(1, 1e3), st.floats(0.1, 10), pos, pos, st.floats(1, 20))
def test_min_valid_n_is_minimal(beta, T, c, L, dconst):
    n = bc.min_valid_n(beta, T, c, L, dconst)
    assert bc.sample_size_ok(n, beta, T, c, L, dconst)
    assert n <= 3 or not bc.sample_size_ok(n - 1, beta, T, c, L, dconst)
