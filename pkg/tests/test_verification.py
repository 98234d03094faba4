import json
import math

import numpy as np
import pytest

from mfcbench import bound_calculus as bc
from mfcbench import dictionary_classes as dc
from mfcbench import distributions as ds
from mfcbench import verification as vf
from mfcbench.errors import ConfigurationError, ContractError, RefusalError
from mfcbench.inner_solvers import empirical_cost
from mfcbench.penalties import PenaltySpec

S = dc.DictionaryClassSpec
DS = ds.DistributionSpec
P = PenaltySpec


def test_trial_streams_are_independent_and_reproducible():
    a = vf.trial_rng(5, 1, 2).random(4)
    assert np.array_equal(a, vf.trial_rng(5, 1, 2).random(4))
    assert not np.array_equal(a, vf.trial_rng(5, 2, 1).random(4))
    assert not np.array_equal(a, vf.trial_rng(6, 1, 2).random(4))


@pytest.mark.parametrize(
    "cls, spec, path",
    [
        (S.unit_norm(3, 4), P.kmeans(4), "global"),
        (S.unit_norm(3, 3), P.lasso(3, 1.0), "global"),
        (S.nmf_simplex(3, 2), P.nonneg(2), "global"),
        (S.stiefel(4, 2), P.zero(2), "local"),
        (S.unit_norm(3, 4).with_lrip(2, 0.8), P.k_sparse(4, 2), "local"),
    ],
    ids=["kmeans", "lasso", "nmf", "pca", "ksparse"],
)
def test_lipschitz_small(cls, spec, path):
    rep = vf.check_lipschitz(cls, spec, DS.sphere(cls.m), 20, 30, seed=1)
    assert rep.passed, rep.metrics
    assert rep.metrics["path"] == path
    assert rep.metrics["worst_ratio"] <= 1 + 1e-6


def test_lipschitz_ambient_and_identical_pairs():
    rep = vf.check_lipschitz(S.unit_norm(3, 3), P.lasso(3, 0.7), DS.sphere(3), 20, 20, seed=2, ambient=True)
    assert rep.passed
    with pytest.raises(ConfigurationError):
        vf.check_lipschitz(S.unit_norm(3, 3), P.kmeans(3), DS.sphere(3), 20, 2, seed=2, ambient=True)
    # a one-point class only produces D' = D, reported as ratio 0
    rep = vf.check_lipschitz(S.orthogonal(1), P.zero(1), DS.sphere(1), 5, 4, seed=3)
    assert rep.passed and all(r["ratio"] == 0.0 and r["delta"] == 0.0 for r in rep.details)


def test_lipschitz_refuses_heuristic(monkeypatch):
    from mfcbench import inner_solvers

    monkeypatch.setattr(inner_solvers, "SUPPORT_BUDGET", 1)
    with pytest.raises(RefusalError):
        vf.check_lipschitz(S.unit_norm(3, 4).with_lrip(2, 0.8), P.k_sparse(4, 2), DS.sphere(3), 5, 2, seed=0)


def test_jobs_do_not_change_results():
    args = (S.unit_norm(3, 4), P.kmeans(4), DS.sphere(3), 30, 16)
    a = vf.check_lipschitz(*args, seed=4, jobs=1).to_dict()
    b = vf.check_lipschitz(*args, seed=4, jobs=4).to_dict()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_concentration_trivial_cases():
    D = np.zeros((2, 2))
    D[:, 1] = [1.0, 0.0]
    rep = vf.check_concentration(DS.sphere(2), S.ball(2, 2), P.kmeans(2), D, 20, [0.0, 5.0], 200, seed=0,
                                 ref_size=20_000)
    assert rep.passed
    assert rep.details[0]["bound"] == 2.0
    assert rep.details[1]["frequency"] == 0.0
    assert rep.metrics["range_premise_holds"]
    with pytest.raises(ContractError):
        vf.check_concentration(DS.sphere(2), S.ball(2, 2), P.kmeans(2), np.zeros((3, 2)), 20, [0.1], 10, seed=0)


def test_tail_check():
    cls = S.unit_norm(6, 8)
    dist = DS.subgaussian_sparse(dc.sample(cls, np.random.default_rng(0)), 8, 1.0, 0.0, cls)
    rep = vf.check_tail(dist, [1.0, 2.0, 4.0], 20_000, seed=0)
    assert rep.passed and rep.metrics["A"] == 40.0
    assert rep.details[0]["frequency"] <= math.exp(-1)
    with pytest.raises(ContractError):
        vf.check_tail(dist, [0.5], 10, seed=0)
    with pytest.raises(ConfigurationError):
        vf.check_tail(DS.sphere(3), [1.0], 10, seed=0)


def test_ensemble_self_test_is_zero():
    X = ds.sample(DS.sphere(3), 50, np.random.default_rng(0))
    D = dc.sample(S.ball(3, 4), np.random.default_rng(1))
    assert vf.ensemble_deviations(X, X, [D], P.kmeans(4))[0] == 0.0


def test_deviation_monotone_in_ensemble():
    kw = dict(cls=S.ball(2, 3), spec=P.kmeans(3), dist=DS.sphere(2), n_grid=[64, 256], x=3.0, seed=7, ref_factor=20)
    small = vf.check_deviation(ensemble=12, **kw)
    large = vf.check_deviation(ensemble=24, **kw)
    for a, b in zip(small.details, large.details):
        assert b["deviation"] >= a["deviation"]
        assert b["eta"] == a["eta"]


def test_deviation_report_shape():
    rep = vf.check_deviation(S.ball(2, 3), P.kmeans(3), DS.sphere(2), [8, 64, 512], 8, 3.0, seed=1, ref_factor=10)
    assert rep.details[0]["valid"] is False and rep.details[0]["ok"] is None
    assert rep.passed
    assert any("necessary" in note for note in rep.notes)
    assert rep.to_csv().splitlines()[0] == "n,deviation,deviation_max,eta,valid,ok"


def test_minimizer_pca_matches_svd():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((5, 200)) * np.array([3.0, 2.0, 1.0, 0.5, 0.2])[:, None]
    res = vf.empirical_minimizer(S.stiefel(5, 2), P.zero(2), X, iters=200, restarts=2, seed=1)
    sv = np.linalg.svd(X, compute_uv=False)
    assert res.value == pytest.approx(0.5 * np.sum(sv[2:] ** 2) / 200, rel=1e-6)
    assert res.non_monotone_steps == 0


def test_minimizer_two_clusters():
    rng = np.random.default_rng(1)
    centers = np.array([[0.6, -0.6], [0.0, 0.0]])
    labels = rng.integers(0, 2, 400)
    X = centers[:, labels] + 0.05 * rng.standard_normal((2, 400))
    res = vf.empirical_minimizer(S.ball(2, 2), P.kmeans(2), X, iters=50, restarts=3, seed=2)
    within = np.mean([0.5 * np.sum((X[:, i] - X[:, labels == labels[i]].mean(axis=1)) ** 2) for i in range(400)])
    assert res.value <= within + 1e-12


def test_minimizer_realizable_sparse():
    cls = S.unit_norm(4, 3)
    D0 = dc.sample(cls, np.random.default_rng(3))
    dist = DS.subgaussian_sparse(D0, 1, 1.0)
    X = ds.sample(dist, 300, np.random.default_rng(4))
    res = vf.empirical_minimizer(cls, P.k_sparse(3, 1), X, iters=200, restarts=5, seed=5)
    assert res.value <= 1e-20
    assert empirical_cost(X, res.D, P.k_sparse(3, 1)) == res.value


def test_minimizer_refuses_without_projection():
    with pytest.raises(RefusalError):
        vf.empirical_minimizer(S.separable([(2, 1), (2, 1)]), P.kmeans(1), np.ones((4, 3)))


def test_generalization_gap_at_truth():
    cls = S.unit_norm(4, 3).with_lrip(1, 0.5)
    D0 = dc.sample(cls, np.random.default_rng(3))
    dist = DS.subgaussian_sparse(D0, 1, 1.0)
    spec = P.k_sparse(3, 1)
    bound = bc.assemble(cls, spec, dist, [100], rng=np.random.default_rng(0))
    rep = vf.generalization_gap(D0, cls, spec, dist, 100, bound, seed=0, ensemble=5)
    assert rep.metrics["gap"] <= 0.0 and rep.passed


def test_reports_serialize():
    rep = vf.check_tail(DS.subgaussian_sparse(np.eye(3), 1, 1.0), [1.0], 100, seed=0)
    obj = json.loads(json.dumps(rep.to_dict()))
    assert obj["kind"] == "trial_report" and obj["check"] == "tail"
    assert vf._clean({"a": math.inf, "b": math.nan}) == {"a": "inf", "b": None}
