import itertools
import json
import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from mfcbench import dictionary_classes as dc
from mfcbench.errors import ConfigurationError, ContractError, RefusalError
from mfcbench.penalties import PenaltySpec

S = dc.DictionaryClassSpec
LIE = 3 * math.pi * math.exp(math.pi)

ALL_CLASSES = [
    S.unit_norm(5, 8), S.ball(3, 4), S.orthogonal(3), S.stiefel(6, 3), S.separable([(3, 2), (2, 2)]),
    S.stiefel_tensor([(3, 2), (4, 2)]), S.sparse(6, 4, 2), S.nmf_simplex(4, 2), S.unit_norm(4, 6).with_lrip(2, 0.9),
]


def test_covering_examples():
    assert dc.covering_constants(S.unit_norm(10, 5)) == (50, 3.0)
    h, C = dc.covering_constants(S.orthogonal(3))
    assert h == 3 and C == pytest.approx(LIE, rel=1e-15)
    h, C = dc.covering_constants(S.sparse(6, 4, 2))
    assert h == 8 and C == pytest.approx(3 * math.sqrt(15), rel=1e-15)


@pytest.mark.parametrize(
    "cls, expected",
    [
        (S.unit_norm(7, 3), (21, 3.0)),
        (S.ball(7, 3), (21, 3.0)),
        (S.nmf_simplex(7, 3), (21, 3.0)),
        (S.separable([(4, 2), (3, 5)]), (8 + 15, 3.0)),
        (S.sparse(10, 6, 3), (18, 3 * math.comb(10, 3) ** (1 / 3))),
        (S.orthogonal(5), (10, LIE)),
        (S.stiefel(8, 3), (24 - 6, LIE)),
        (S.stiefel_tensor([(4, 2), (5, 3)]), ((8 - 3) + (15 - 6), LIE)),
    ],
)
def test_covering_rows(cls, expected):
    h, C = dc.covering_constants(cls)
    assert h == expected[0]
    assert C == pytest.approx(expected[1], rel=1e-15)


@pytest.mark.parametrize("cls", ALL_CLASSES, ids=lambda c: c.variant)
def test_samples_validate(cls):
    for seed in range(3):
        D = dc.sample(cls, np.random.default_rng(seed))
        assert D.shape == (cls.m, cls.d)
        rep = dc.validate(cls, D, 1e-10)
        assert rep, rep.violations


@pytest.mark.parametrize("cls", ALL_CLASSES, ids=lambda c: c.variant)
def test_class_roundtrip(cls):
    assert S.from_dict(json.loads(json.dumps(cls.to_dict()))) == cls


def test_sample_examples():
    D = dc.sample(S.orthogonal(3), np.random.default_rng(4))
    np.testing.assert_allclose(D.T @ D, np.eye(3), atol=1e-10)
    assert np.linalg.det(D) == pytest.approx(1.0, abs=1e-10)
    D = dc.sample(S.nmf_simplex(4, 2), np.random.default_rng(4))
    assert (D >= 0).all()
    np.testing.assert_allclose(D.sum(axis=0), 1.0, atol=1e-12)
    D = dc.sample(S.unit_norm(5, 8), np.random.default_rng(4))
    np.testing.assert_allclose(np.linalg.norm(D, axis=0), 1.0, atol=1e-12)


def test_sparse_atoms_storage():
    cls = S.sparse(6, 4, 2)
    atoms = dc.sample_sparse_atoms(cls, np.random.default_rng(1))
    assert atoms.supports.shape == (4, 2)
    D = atoms.dense()
    assert dc.validate(cls, D, 1e-10)


def test_validate_examples():
    assert dc.validate(S.orthogonal(3), np.eye(3), 0.0)
    D = np.eye(3)
    D[:, 1] *= 1.01
    rep = dc.validate(S.unit_norm(3, 3), D, 1e-3)
    assert not rep and "column 1" in rep.violations[0]
    v = np.array([1.0, 0.0, 0.0])
    D = np.column_stack([v, v, [0, 1, 0], [0, 0, 1]])
    rep = dc.validate(S.unit_norm(3, 4).with_lrip(2, 0.5), D, 0.0)
    assert not rep and "exceeds" in rep.violations[0]


def test_validate_rejects_non_members():
    assert not dc.validate(S.orthogonal(2), np.array([[0.0, 1.0], [1.0, 0.0]]), 1e-12)  # det -1
    assert not dc.validate(S.nmf_simplex(2, 1), np.array([[1.5], [-0.5]]), 1e-12)
    assert not dc.validate(S.ball(2, 1), np.array([[1.0], [0.5]]), 1e-12)
    assert not dc.validate(S.sparse(3, 1, 1), np.ones((3, 1)) / math.sqrt(3), 1e-12)
    assert not dc.validate(S.separable([(2, 1), (2, 1)]), np.array([[1.0], [0.0], [0.0], [1.0]]) / math.sqrt(2), 1e-10)
    with pytest.raises(ContractError):
        dc.validate(S.unit_norm(3, 3), np.eye(2))


def test_kronecker_recovery():
    rng = np.random.default_rng(3)
    A, B = rng.standard_normal((3, 2)), rng.standard_normal((2, 2))
    F = dc.kron_factors(np.kron(A, B), [(3, 2), (2, 2)])
    np.testing.assert_allclose(np.kron(*F), np.kron(A, B), atol=1e-12)


def _delta_oracle(D, k):
    # independent route: LAPACK symmetric eigensolve on every k-column Gram block
    worst = math.inf
    for J in itertools.combinations(range(D.shape[1]), k):
        sub = D[:, J]
        worst = min(worst, scipy.linalg.eigh(sub.T @ sub, eigvals_only=True)[0])
    return min(max(1 - worst, 0.0), 1.0)


def test_delta_k_matches_oracle():
    rng = np.random.default_rng(20)
    for _ in range(20):
        D = dc.sample(S.unit_norm(4, 6), rng)
        assert abs(dc.delta_k(D, 2) - _delta_oracle(D, 2)) <= 1e-10


def test_delta_k_rayleigh_lower_bound():
    # no k-sparse direction beats the exhaustive minimum eigenvalue
    rng = np.random.default_rng(21)
    D = dc.sample(S.unit_norm(4, 6), rng)
    lam = 1 - dc.delta_k(D, 2)
    for J in itertools.combinations(range(6), 2):
        a = rng.standard_normal((2, 2000))
        ratios = (np.linalg.norm(D[:, J] @ a, axis=0) / np.linalg.norm(a, axis=0)) ** 2
        assert ratios.min() >= lam - 1e-12


def test_delta_k_examples():
    Q = dc.sample(S.stiefel(6, 4), np.random.default_rng(0))
    for k in range(1, 5):
        assert dc.delta_k(Q, k) <= 1e-14
    assert dc.delta_k(np.eye(3), 2) == 0.0
    v = np.array([0.6, 0.8])
    assert dc.delta_k(np.column_stack([v, v]), 2) == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(RefusalError):
        dc.delta_k(np.random.default_rng(0).standard_normal((20, 40)), 10)


def test_kappa_examples():
    assert dc.kappa_of(S.unit_norm(8, 10).with_lrip(3, 0.25), PenaltySpec.k_sparse(10, 3)) == pytest.approx(0.25)
    assert dc.kappa_of(S.stiefel(10, 3), PenaltySpec.zero(3)) == pytest.approx(1 / 3)
    assert dc.kappa_of(S.nmf_simplex(4, 2), PenaltySpec.nonneg(2)) == pytest.approx(1 / 8)
    with pytest.raises(ConfigurationError):
        dc.kappa_of(S.unit_norm(3, 3), PenaltySpec.lasso(3, 1.0))
    with pytest.raises(ConfigurationError):
        dc.kappa_of(S.unit_norm(3, 3), PenaltySpec.k_sparse(3, 2))


def test_nmf_kappa_floor_holds_for_members():
    cls = S.nmf_simplex(4, 3)
    rng = np.random.default_rng(2)
    for _ in range(50):
        D = dc.sample(cls, rng)
        assert dc.kappa_of(cls, PenaltySpec.nonneg(3), D) >= 1 / 12 - 1e-15


@pytest.mark.parametrize("eps", [0.5, 1.0])
def test_circle_net(eps):
    theta = np.linspace(0, 2 * math.pi, 4000, endpoint=False)
    pts = np.stack([np.cos(theta), np.sin(theta)], axis=1)[:, :, None]
    net = dc.greedy_epsilon_net(pts, eps)
    assert len(net) <= (3 / eps) ** 2
    # it is a net: every point is within eps of a center
    C = pts[net, :, 0]
    d = np.linalg.norm(pts[:, None, :, 0] - C[None], axis=2).min(axis=1)
    assert d.max() <= eps


def test_projection_lands_in_class():
    rng = np.random.default_rng(5)
    for cls in (S.unit_norm(4, 3), S.ball(4, 3), S.stiefel(5, 2), S.orthogonal(3), S.nmf_simplex(4, 3), S.sparse(5, 3, 2)):
        P = dc.project(cls, 3 * rng.standard_normal((cls.m, cls.d)), rng)
        assert dc.validate(cls, P, 1e-10)
    with pytest.raises(RefusalError):
        dc.project(S.separable([(2, 1), (2, 1)]), np.ones((4, 1)))


def test_simplex_projection_is_nearest():
    rng = np.random.default_rng(6)
    v = rng.standard_normal((4, 1))
    p = dc.project_simplex(v)[:, 0]
    for _ in range(2000):
        q = rng.dirichlet(np.ones(4))
        assert np.linalg.norm(v[:, 0] - p) <= np.linalg.norm(v[:, 0] - q) + 1e-12


# properties ---------------------------------------------------------------

@st.composite
def classes(draw):
    kind = draw(st.sampled_from(["unit", "ball", "orth", "stiefel", "sep", "stens", "sparse", "nmf"]))
    small = st.integers(1, 5)
    if kind == "unit":
        return S.unit_norm(draw(small), draw(small))
    if kind == "ball":
        return S.ball(draw(small), draw(small))
    if kind == "orth":
        return S.orthogonal(draw(small))
    if kind == "stiefel":
        d = draw(small)
        return S.stiefel(d + draw(st.integers(0, 3)), d)
    if kind == "sep":
        return S.separable([(draw(st.integers(1, 3)), draw(st.integers(1, 3))) for _ in range(2)])
    if kind == "stens":
        fs = []
        for _ in range(2):
            di = draw(st.integers(1, 2))
            fs.append((di + draw(st.integers(0, 2)), di))
        return S.stiefel_tensor(fs)
    if kind == "sparse":
        m = draw(st.integers(1, 6))
        return S.sparse(m, draw(small), draw(st.integers(1, m)))
    return S.nmf_simplex(draw(small), draw(small))


@settings(max_examples=60, deadline=None)
@given(classes(), st.integers(0, 2**32 - 1))
def test_sample_validates_property(cls, seed):
    D = dc.sample(cls, np.random.default_rng(seed))
    rep = dc.validate(cls, D, 1e-8)
    assert rep, rep.violations


@given(classes())
def test_covering_constants_at_least_one(cls):
    h, C = dc.covering_constants(cls)
    assert h >= 1 and C >= 1


@settings(deadline=None)
@given(st.integers(2, 5), st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_delta_monotone_in_k(m, d, seed):
    D = np.random.default_rng(seed).standard_normal((m, d))
    D /= np.linalg.norm(D, axis=0)
    deltas = [dc.delta_k(D, k) for k in range(1, min(m, d) + 1)]
    assert deltas[0] <= 1e-14
    assert all(a <= b + 1e-12 for a, b in zip(deltas, deltas[1:]))
