"""Monte Carlo probes of the Lipschitz, concentration, tail and deviation bounds.

Sup-over-class quantities are approximated by maxima over finite ensembles,
so every deviation check here is a necessary-condition test: a pass does not
certify the bound, a failure refutes it (up to Monte Carlo error).
"""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import bound_calculus as bc
from . import dictionary_classes as dc
from . import distributions as ds
from .errors import ConfigurationError, ContractError, RefusalError
from .inner_solvers import HEURISTIC, code_batch, lipschitz_constant
from .penalties import KMEANS, ZERO, PenaltySpec

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1"
EXACT_SLACK = 1e-9


def trial_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent stream for trial ``key`` under master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def _pmap(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _clean(v):
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


@dataclass
class TrialReport:
    check: str
    trials: int
    passed: bool
    seed: int
    metrics: dict[str, Any] = field(default_factory=dict)
    details: list[dict[str, Any]] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return _clean({
            "schema_version": SCHEMA_VERSION,
            "kind": "trial_report",
            "check": self.check,
            "trials": self.trials,
            "pass": self.passed,
            "seed": self.seed,
            "metrics": self.metrics,
            "details": self.details,
            "notes": self.notes,
        })

    def to_csv(self) -> str:
        buf = io.StringIO()
        if not self.details:
            return ""
        cols = list(self.details[0].keys())
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in self.details:
            w.writerow([_csv_cell(row.get(c)) for c in cols])
        return buf.getvalue()


def _csv_cell(v):
    v = _clean(v)
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


def binomial_se(p: float, trials: int) -> float:
    p = min(max(p, 0.0), 1.0)
    return math.sqrt(p * (1.0 - p) / trials)


def _certified(batch, what: str):
    if not batch.certified:
        raise RefusalError(f"{what}: the solver returned heuristic results; bound checks need exact or certified solvers")
    return batch


# Lipschitz ---------------------------------------------------------------

def _unit_direction(rng, shape):
    Z = rng.standard_normal(shape)
    return Z / dc.op_norm_1to2(Z)


def _perturb(cls, D, rng, lo=-3.0, hi=-0.5):
    eps = 10.0 ** rng.uniform(lo, hi)
    return dc.project(cls, D + eps * _unit_direction(rng, D.shape), rng)


def _has_projection(cls) -> bool:
    return cls.variant not in (dc.SEPARABLE, dc.STIEFEL_TENSOR) and cls.lrip is None


def check_lipschitz(
    cls: dc.DictionaryClassSpec,
    spec: PenaltySpec,
    dist: ds.DistributionSpec,
    n: int,
    pairs: int,
    seed: int,
    jobs: int = 1,
    ambient: bool = False,
    tol: float = 1e-10,
) -> TrialReport:
    """Compare ``|F_X(D) - F_X(D')|`` with the global or local Lipschitz bound on random pairs.

    Half of the pairs are independent class samples, half are nearby pairs
    (projected perturbations) where the linear term dominates.  With
    ``ambient`` the second dictionary is an unconstrained Gaussian
    perturbation (coercive penalties only).
    """
    regime = bc.scenario_regime(cls, spec)
    if ambient and not spec.satisfies_a4:
        raise ConfigurationError("ambient pairs need a coercive penalty with g(0) = 0")
    path = "global" if regime.tag == "A" or cls.is_convex else "local"
    X = ds.sample(dist, n, trial_rng(seed, 0))
    L, _ = lipschitz_constant(X, spec, regime)

    def one(i):
        rng = trial_rng(seed, 1, i)
        D = dc.sample(cls, rng)
        if ambient:
            D2 = D + 10.0 ** rng.uniform(-3, 0) * _unit_direction(rng, D.shape)
        elif i % 2 == 1 and _has_projection(cls):
            D2 = _perturb(cls, D, rng)
        else:
            D2 = dc.sample(cls, rng)
        delta = dc.op_norm_1to2(D - D2)
        if delta == 0:
            return {"pair": i, "delta": 0.0, "dF": 0.0, "bound": 0.0, "slack": 0.0, "ratio": 0.0, "ok": True}
        b1 = _certified(code_batch(X, D, spec, tol), "check_lipschitz")
        b2 = _certified(code_batch(X, D2, spec, tol), "check_lipschitz")
        dF = abs(b1.mean - b2.mean)
        bound = L * delta if path == "global" else L * (1.0 + math.sqrt(1.0 / regime.kappa) * delta) * delta
        slack = b1.mean_gap + b2.mean_gap
        ok = dF <= bound * (1.0 + EXACT_SLACK) + slack
        return {"pair": i, "delta": delta, "dF": dF, "bound": bound, "slack": slack, "ratio": dF / bound, "ok": ok}

    rows = _pmap(one, range(pairs), jobs)
    worst = max(r["ratio"] for r in rows) if rows else 0.0
    return TrialReport(
        "lipschitz", pairs, all(r["ok"] for r in rows), seed,
        {"path": path, "regime": regime.tag, "kappa": regime.kappa, "L_X": L, "n": n, "worst_ratio": worst,
         "max_excess": max((r["dF"] - r["bound"] - r["slack"] for r in rows), default=0.0), "ambient": ambient},
        rows,
        ["pass iff |dF| <= bound (1 + 1e-9) + summed mean duality gaps for every pair"],
    )


# concentration ------------------------------------------------------------

def _mean_cost_chunks(X, D, spec, tol, chunk=1 << 16):
    total, gap, top = 0.0, 0.0, -math.inf
    for s in range(0, X.shape[1], chunk):
        b = _certified(code_batch(X[:, s : s + chunk], D, spec, tol), "reference cost")
        total += float(b.values.sum())
        gap += float(b.gaps.sum())
        top = max(top, float(b.values.max()))
    return total / X.shape[1], gap / X.shape[1], top


def check_concentration(
    dist: ds.DistributionSpec,
    cls: dc.DictionaryClassSpec,
    spec: PenaltySpec,
    D_fixed: np.ndarray | None,
    n: int,
    taus: Sequence[float],
    trials: int,
    seed: int,
    ref_size: int | None = None,
    tol: float = 1e-10,
    jobs: int = 1,
) -> TrialReport:
    """Frequency of ``|F_X(D) - E f_x(D)| > c tau`` against ``2 exp(-n tau^2)``."""
    conc = ds.concentration_params(dist)
    if D_fixed is None:
        D_fixed = dc.sample(cls, trial_rng(seed, 0))
    D_fixed = np.asarray(D_fixed, dtype=float)
    if D_fixed.shape != (cls.m, cls.d):
        raise ContractError(f"D_fixed must be {cls.m} x {cls.d}")
    ref_size = ref_size or max(100 * n, 1_000_000)
    Xref = ds.sample(dist, ref_size, trial_rng(seed, 1))
    Ef, ref_gap, f_max = _mean_cost_chunks(Xref, D_fixed, spec, tol)
    # Hoeffding with c = R^2 / sqrt(8) needs every cost in [0, R^2 / 2]; allow rounding in ||x||^2
    premise = dist.bounded and f_max <= dist.R**2 / 2.0 * (1.0 + 1e-12)

    block = max(1, (1 << 16) // n)

    def run_block(start):
        idx = range(start, min(start + block, trials))
        X = np.concatenate([ds.sample(dist, n, trial_rng(seed, 2, t)) for t in idx], axis=1)
        b = _certified(code_batch(X, D_fixed, spec, tol), "check_concentration")
        return b.values.reshape(len(idx), n).mean(axis=1)

    F = np.concatenate(_pmap(run_block, list(range(0, trials, block)), jobs))
    dev = np.abs(F - Ef)
    rows = []
    for tau in taus:
        if tau < 0 or (tau > conc.T):
            raise ContractError(f"tau must lie in [0, T={conc.T}]")
        freq = float(np.mean(dev > conc.c * tau))
        bound = 2.0 * math.exp(-n * tau * tau)
        se = binomial_se(bound, trials)
        rows.append({"tau": tau, "threshold": conc.c * tau, "frequency": freq, "bound": bound, "se": se,
                     "ok": freq <= bound + 3 * se})
    return TrialReport(
        "concentration", trials, all(r["ok"] for r in rows), seed,
        {"n": n, "c": conc.c, "reference_size": ref_size, "reference_mean": Ef, "reference_gap": ref_gap,
         "max_deviation": float(dev.max()), "max_reference_cost": f_max, "range_premise_holds": premise},
        rows,
        ["pass iff frequency <= 2 exp(-n tau^2) + 3 binomial standard errors for every tau",
         "range_premise_holds: every reference cost lies in [0, R^2/2], the range behind c = R^2/sqrt(8)"],
    )


# tail ---------------------------------------------------------------------

def check_tail(dist: ds.DistributionSpec, ts: Sequence[float], trials: int, seed: int) -> TrialReport:
    """Frequency of ``||x||^2 > A t`` against ``exp(-t)`` for the sub-Gaussian sparse model."""
    if dist.variant != ds.SUBGAUSSIAN_SPARSE:
        raise ConfigurationError("the tail check needs the sub-Gaussian sparse model")
    if any(t < 1 for t in ts):
        raise ContractError("the tail bound is stated for t >= 1")
    A = ds.concentration_params(dist).A
    X = ds.sample(dist, trials, trial_rng(seed, 0))
    sq = (X * X).sum(axis=0)
    rows = []
    for t in ts:
        freq = float(np.mean(sq > A * t))
        bound = math.exp(-t)
        se = binomial_se(bound, trials)
        rows.append({"t": t, "threshold": A * t, "frequency": freq, "bound": bound, "se": se, "ok": freq <= bound + 3 * se})
    return TrialReport("tail", trials, all(r["ok"] for r in rows), seed, {"A": A}, rows, [ds.FACTOR_NOTE])


# uniform deviation --------------------------------------------------------

def _loglog_fit(xs, ys):
    lx, ly = np.log(np.asarray(xs, dtype=float)), np.log(np.asarray(ys, dtype=float))
    if lx.size < 2:
        return math.nan, math.nan
    slope, icept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + icept)
    ss = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss if ss > 0 else 1.0
    return float(slope), r2


def ensemble_deviations(X, Xref, ensemble: Sequence[np.ndarray], spec, tol=1e-10) -> np.ndarray:
    """``|F_X(D) - F_Xref(D)|`` for every dictionary of the ensemble."""
    out = np.empty(len(ensemble))
    for j, D in enumerate(ensemble):
        F = _certified(code_batch(X, D, spec, tol), "deviation").mean
        out[j] = abs(F - _mean_cost_chunks(Xref, D, spec, tol)[0])
    return out


def check_deviation(
    cls: dc.DictionaryClassSpec,
    spec: PenaltySpec,
    dist: ds.DistributionSpec,
    n_grid: Sequence[int],
    ensemble: int,
    x: float,
    seed: int,
    replicates: int = 1,
    ref_factor: int = 100,
    perturb_every: int = 4,
    tol: float = 1e-10,
    jobs: int = 1,
) -> TrialReport:
    """Ensemble estimate of ``sup_D |F_X(D) - E f_x(D)|`` against eta_n over a grid of n.

    Member ``j`` of the ensemble is a fresh class sample, except every
    ``perturb_every``-th member, which perturbs the current worst member; an
    ensemble is therefore a prefix of any larger one.  The reported deviation
    per n is the mean over ``replicates`` independent training sets; the pass
    criterion applies to every replicate.
    """
    bound = bc.assemble(cls, spec, dist, n_grid, x, trial_rng(seed, 0), scenario_id="deviation")
    ref_size = ref_factor * max(n_grid)
    Xref = ds.sample(dist, ref_size, trial_rng(seed, 1))
    can_perturb = _has_projection(cls) and perturb_every > 0
    base_idx = [j for j in range(ensemble) if not (can_perturb and j % perturb_every == perturb_every - 1)]
    base = {j: dc.sample(cls, trial_rng(seed, 2, j)) for j in base_idx}
    base_ref = {j: _mean_cost_chunks(Xref, D, spec, tol)[0] for j, D in base.items()}

    def one(task):
        ni, rep = task
        n = n_grid[ni]
        X = ds.sample(dist, n, trial_rng(seed, 3, ni, rep))
        devs: list[float] = []
        members: list[np.ndarray] = []
        for j in range(ensemble):
            if j in base:
                D, ref = base[j], base_ref[j]
            else:
                worst = members[int(np.argmax(devs))]
                D = _perturb(cls, worst, trial_rng(seed, 4, ni, rep, j))
                ref = _mean_cost_chunks(Xref, D, spec, tol)[0]
            members.append(D)
            devs.append(abs(_certified(code_batch(X, D, spec, tol), "deviation").mean - ref))
        return max(devs)

    tasks = [(ni, r) for ni in range(len(n_grid)) for r in range(replicates)]
    sup = np.array(_pmap(one, tasks, jobs)).reshape(len(n_grid), replicates)
    rows, fit_n, fit_dev = [], [], []
    for ni, n in enumerate(n_grid):
        brow = bound.rows[ni]
        dmean, dmax = float(sup[ni].mean()), float(sup[ni].max())
        ok = dmax <= brow.eta if brow.valid else None
        rows.append({"n": n, "deviation": dmean, "deviation_max": dmax, "eta": brow.eta, "valid": brow.valid, "ok": ok})
        if brow.valid:
            fit_n.append(math.log(n) / n)
            fit_dev.append(dmean)
    slope, r2 = _loglog_fit(fit_n, fit_dev)
    tested = [r["ok"] for r in rows if r["ok"] is not None]
    return TrialReport(
        "deviation", len(tasks), bool(tested) and all(tested), seed,
        {"ensemble": ensemble, "replicates": replicates, "reference_size": ref_size, "beta": bound.beta, "c": bound.c,
         "flavor": bound.flavor, "x": x, "exponent": slope, "exponent_squared": 2.0 * slope, "r2": r2},
        rows,
        ["ensemble maxima under-sample the supremum: passing is necessary, not sufficient",
         "exponent: least-squares slope of log deviation against log(log n / n) over valid n",
         "exponent_squared: the same slope for deviation^2, exactly twice the exponent"],
    )


# learning ----------------------------------------------------------------

@dataclass
class MinimizerResult:
    D: np.ndarray
    value: float
    history: list[float]
    non_monotone_steps: int
    restart: int


def _seed_atoms(cls, spec, X, rng):
    m, d = cls.m, cls.d
    if spec.variant == ZERO or cls.variant in (dc.STIEFEL, dc.ORTHOGONAL):
        return dc.project(cls, rng.standard_normal((m, d)), rng)
    n = X.shape[1]
    norms_sq = (X * X).sum(axis=0)
    dirs = X / np.where(norms_sq > 0, np.sqrt(norms_sq), 1.0)
    chosen = [int(rng.integers(n))]
    for _ in range(1, d):
        C = X[:, chosen] if spec.variant == KMEANS else dirs[:, chosen]
        if spec.variant == KMEANS:
            diff = X[:, None, :] - C[:, :, None]
            score = (diff * diff).sum(axis=0).min(axis=0)
        else:
            score = norms_sq - ((C.T @ X) ** 2).max(axis=0)
        score = np.maximum(score, 0.0)
        tot = score.sum()
        chosen.append(int(rng.choice(n, p=score / tot)) if tot > 0 else int(rng.integers(n)))
    init = X[:, chosen] if spec.variant == KMEANS else dirs[:, chosen]
    if cls.variant == dc.NMF_SIMPLEX:
        init = np.abs(init)
    return dc.project(cls, init + 1e-9 * rng.standard_normal((m, d)), rng)


def empirical_minimizer(
    cls: dc.DictionaryClassSpec,
    spec: PenaltySpec,
    X: np.ndarray,
    iters: int = 100,
    restarts: int = 5,
    seed: int = 0,
    tol: float = 1e-10,
) -> MinimizerResult:
    """Alternating minimization of ``F_X`` over the class: code, least-squares atoms, project."""
    X = np.asarray(X, dtype=float)
    if cls.variant in (dc.SEPARABLE, dc.STIEFEL_TENSOR):
        raise RefusalError(f"no projection onto the {cls.variant} class; the learning loop needs one")
    best: MinimizerResult | None = None
    for r in range(restarts):
        rng = trial_rng(seed, r)
        D = _seed_atoms(cls, spec, X, rng)
        if cls.lrip is not None and not dc.validate(cls, D, tol=1e-12):
            raise RefusalError("the seeded atoms miss the lower-RIP filtered class")
        F = code_batch(X, D, spec, tol).mean
        floor = 1e-15 * 0.5 * float((X * X).sum(axis=0).mean())
        hist, bad = [F], 0
        for _ in range(iters):
            A = code_batch(X, D, spec, tol).alphas
            used = np.abs(A).sum(axis=1) > 0
            D_new = D.copy()
            if used.any():
                D_new[:, used] = np.linalg.lstsq(A[used].T, X.T, rcond=None)[0].T
            D_new = dc.project(cls, D_new, rng)
            if cls.lrip is not None and not dc.validate(cls, D_new, tol=1e-12):
                raise RefusalError("an iterate left the lower-RIP filtered class; no projection restores it")
            F_new = code_batch(X, D_new, spec, tol).mean
            if F_new > F * (1 + 1e-12) + 1e-15:
                bad += 1
                log.info("non-monotone step in restart %d: %.17g -> %.17g", r, F, F_new)
            converged = abs(F - F_new) <= 1e-13 * max(F, floor)
            D, F = D_new, F_new
            hist.append(F)
            if converged:
                break
        if best is None or F < best.value:
            best = MinimizerResult(D, F, hist, bad, r)
    return best


def generalization_gap(
    D_hat: np.ndarray,
    cls: dc.DictionaryClassSpec,
    spec: PenaltySpec,
    dist: ds.DistributionSpec,
    n_used: int,
    bound: bc.BoundReport,
    seed: int,
    ensemble: int = 50,
    inject: Sequence[np.ndarray] = (),
    ref_factor: int = 100,
    tol: float = 1e-10,
) -> TrialReport:
    """``E f(D_hat) - min_ensemble E f(D)`` against ``2 eta_n``.

    The generating dictionary of a sparse model is always injected into the
    reference ensemble, as are the dictionaries in ``inject``.
    """
    Xref = ds.sample(dist, ref_factor * n_used, trial_rng(seed, 0))
    E_hat, gap_hat, _ = _mean_cost_chunks(Xref, D_hat, spec, tol)
    members = [dc.sample(cls, trial_rng(seed, 1, j)) for j in range(ensemble)]
    members += [np.asarray(D, dtype=float) for D in inject]
    if dist.variant == ds.SUBGAUSSIAN_SPARSE:
        members.append(np.asarray(dist.D0))
    ref_vals = [_mean_cost_chunks(Xref, D, spec, tol)[0] for D in members]
    best = float(min(ref_vals))
    eta = bound.eta_at(n_used)
    gap = E_hat - best
    return TrialReport(
        "generalization_gap", 1, gap <= 2 * eta, seed,
        {"n_used": n_used, "E_f_hat": E_hat, "E_f_best_reference": best, "gap": gap, "two_eta": 2 * eta,
         "reference_size": ref_factor * n_used, "ensemble": len(members), "solver_gap": gap_hat},
        [{"member": j, "E_f": v} for j, v in enumerate(ref_vals)],
        ["the ensemble minimum upper-bounds the best achievable cost only as far as the ensemble contains good dictionaries"],
    )
