"""Sparse-coding cost ``f_x(D) = inf_a 0.5 ||x - D a||^2 + g(a)`` and its empirical mean.

Every solver returns the coefficients it found together with a certificate:
``exact`` (global minimizer by construction), ``duality-gap`` (the reported gap
bounds ``value - f_x(D)``) or ``heuristic`` (no bound).  Values are always
recomputed from the returned coefficients by :func:`objective_values`.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, RefusalError
from .penalties import (
    K_SPARSE,
    KMEANS,
    LP_BALL,
    LP_POWER,
    NONNEG,
    ZERO,
    PenaltySpec,
    Regime,
    _check_regime,
    gbar,
    lp_norms,
    penalty_values,
    sample_weights,
)

EXACT = "exact"
GAP = "duality-gap"
HEURISTIC = "heuristic"

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100_000
SUPPORT_BUDGET = 100_000

SUPPORTED = (
    "lp_norm_power with (p, r) in {(1, 1), (1, 2), (2, 2)}; lp_ball with p in {1, 2, inf}; "
    "k_sparse; nonneg; kmeans; zero"
)


@dataclass
class CodingResult:
    value: float
    alpha: np.ndarray
    certificate: str
    gap: float = 0.0
    iterations: int = 0


@dataclass
class BatchCoding:
    """Per-column coding results for a data matrix."""

    values: np.ndarray
    alphas: np.ndarray
    gaps: np.ndarray
    certificates: tuple[str, ...]
    iterations: int = 0

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def mean_gap(self) -> float:
        return float(np.mean(self.gaps))

    @property
    def certified(self) -> bool:
        return HEURISTIC not in self.certificates

    def column(self, i: int) -> CodingResult:
        return CodingResult(float(self.values[i]), self.alphas[:, i].copy(), self.certificates[i], float(self.gaps[i]), self.iterations)


def objective_values(X: np.ndarray, D: np.ndarray, A: np.ndarray, spec: PenaltySpec) -> np.ndarray:
    """``0.5 ||x_i - D a_i||^2 + g(a_i)`` for every column."""
    R = X - D @ A
    return 0.5 * (R * R).sum(axis=0) + penalty_values(spec, A)


def _check_dims(X, D, spec):
    X = np.asarray(X, dtype=float)
    D = np.asarray(D, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if D.ndim != 2 or X.ndim != 2 or X.shape[0] != D.shape[0]:
        raise ContractError(f"signal dimension {X.shape[0]} does not match dictionary rows {D.shape}")
    if D.shape[1] != spec.d:
        raise ContractError(f"dictionary has {D.shape[1]} atoms but the penalty acts on {spec.d} coefficients")
    return X, D


# projections --------------------------------------------------------------

def project_l1_ball(V: np.ndarray, radius) -> np.ndarray:
    """Column-wise Euclidean projection onto ``{||a||_1 <= radius}`` (sort-based)."""
    V = np.asarray(V, dtype=float)
    d, n = V.shape
    radius = np.broadcast_to(np.asarray(radius, dtype=float), (n,))
    absV = np.abs(V)
    out = V.copy()
    outside = absV.sum(axis=0) > radius
    if not outside.any():
        return out
    Vo, ro = absV[:, outside], radius[outside]
    U = -np.sort(-Vo, axis=0)
    css = np.cumsum(U, axis=0)
    idx = np.arange(1, d + 1)[:, None]
    cond = U - (css - ro) / idx > 0
    rho = d - 1 - np.argmax(cond[::-1], axis=0)
    theta = (css[rho, np.arange(Vo.shape[1])] - ro) / (rho + 1)
    out[:, outside] = np.sign(V[:, outside]) * np.maximum(Vo - theta, 0.0)
    return _enforce_ball(out, 1.0, radius)


def project_lp_ball(V: np.ndarray, p: float, radius) -> np.ndarray:
    if p == 1:
        return project_l1_ball(V, radius)
    n = V.shape[1]
    radius = np.broadcast_to(np.asarray(radius, dtype=float), (n,))
    if math.isinf(p):
        return np.clip(V, -radius, radius)
    if p == 2:
        norms = lp_norms(V, 2.0)
        scale = np.where(norms > radius, radius / np.where(norms > 0, norms, 1.0), 1.0)
        return _enforce_ball(V * scale, 2.0, radius)
    raise RefusalError(f"no exact projection for p={p}; supported p in {{1, 2, inf}}")


def _enforce_ball(A: np.ndarray, p: float, radius) -> np.ndarray:
    # rounding can leave a projected point a few ulps outside; exact membership needs it inside
    radius = np.broadcast_to(np.asarray(radius, dtype=float), (A.shape[1],))
    for _ in range(64):
        norms = lp_norms(A, p)
        bad = norms > radius
        if not bad.any():
            return A
        A[:, bad] *= (radius[bad] / norms[bad]) * (1.0 - 2.0**-50)
    A[:, lp_norms(A, p) > radius] = 0.0
    return A


def _dual_norm(G: np.ndarray, p: float) -> np.ndarray:
    if p == 1:
        return np.abs(G).max(axis=0)
    if math.isinf(p):
        return np.abs(G).sum(axis=0)
    return np.sqrt((G * G).sum(axis=0))


# solvers ------------------------------------------------------------------

def _fista(X, D, A0, prox, gap_fn, tol, max_iter, check_every=10):
    """Accelerated projected gradient with adaptive restart; stops when every gap <= tol."""
    lip = float(np.linalg.norm(D, 2) ** 2)
    if lip == 0.0:
        A = prox(np.zeros_like(A0))
        return A, gap_fn(A), 0, True
    A = prox(A0)
    Y = A.copy()
    t = np.ones(A.shape[1])
    R = X - D @ A
    f_old = 0.5 * (R * R).sum(axis=0)
    it = 0
    gaps = gap_fn(A)
    while it < max_iter and gaps.max() > tol:
        it += 1
        G = D.T @ (D @ Y - X)
        A_new = prox(Y - G / lip)
        R = X - D @ A_new
        f_new = 0.5 * (R * R).sum(axis=0)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        restart = f_new > f_old
        mom = np.where(restart, 0.0, (t - 1.0) / t_new)
        Y = A_new + mom * (A_new - A)
        t = np.where(restart, 1.0, t_new)
        A, f_old = A_new, f_new
        if it % check_every == 0:
            gaps = gap_fn(A)
    gaps = gap_fn(A)
    return A, gaps, it, bool(gaps.max() <= tol)


def _solve_zero(X, D):
    if np.abs(D.T @ D - np.eye(D.shape[1])).max() <= 1e-12:
        return D.T @ X
    return np.linalg.lstsq(D, X, rcond=None)[0]


def _solve_k_sparse_exhaustive(X, D, k):
    d, n = D.shape[1], X.shape[1]
    best = np.full(n, math.inf)
    A = np.zeros((d, n))
    for J in itertools.combinations(range(d), k):
        J = list(J)
        DJ = D[:, J]
        AJ = np.linalg.pinv(DJ) @ X
        R = X - DJ @ AJ
        val = 0.5 * (R * R).sum(axis=0)
        better = val < best
        if better.any():
            best[better] = val[better]
            A[:, better] = 0.0
            A[np.ix_(J, np.flatnonzero(better))] = AJ[:, better]
    return A


def _solve_omp(X, D, k):
    d, n = D.shape[1], X.shape[1]
    A = np.zeros((d, n))
    norms = np.sqrt((D * D).sum(axis=0))
    norms[norms == 0] = math.inf
    for i in range(n):
        x = X[:, i]
        support: list[int] = []
        coef = np.zeros(0)
        r = x.copy()
        for _ in range(k):
            score = np.abs(D.T @ r) / norms
            score[support] = -1.0
            support.append(int(np.argmax(score)))
            coef = np.linalg.lstsq(D[:, support], x, rcond=None)[0]
            r = x - D[:, support] @ coef
        A[support, i] = coef
    return A


def _solve_kmeans(X, D):
    n, K = X.shape[1], D.shape[1]
    best = np.full(n, math.inf)
    idx = np.zeros(n, dtype=np.intp)
    for j in range(K):
        diff = X - D[:, j : j + 1]
        dist = (diff * diff).sum(axis=0)
        closer = dist < best  # strict: ties stay with the lowest index
        best[closer] = dist[closer]
        idx[closer] = j
    A = np.zeros((K, n))
    A[idx, np.arange(n)] = 1.0
    return A


def _lasso_gap(X, D, A, mu):
    R = X - D @ A
    primal = 0.5 * (R * R).sum(axis=0) + mu * np.abs(A).sum(axis=0)
    rr = (R * R).sum(axis=0)
    cmax = np.abs(D.T @ R).max(axis=0)
    smax = np.where(cmax > 0, mu / np.where(cmax > 0, cmax, 1.0), math.inf)
    s = np.where(rr > 0, (R * X).sum(axis=0) / np.where(rr > 0, rr, 1.0), 0.0)
    s = np.clip(s, -smax, smax)
    dual = s * (R * X).sum(axis=0) - 0.5 * s * s * rr
    return np.maximum(primal - dual, 0.0)


def _solve_lasso(X, D, lam, tol, max_iter):
    mu = 1.0 / lam
    d, n = D.shape[1], X.shape[1]
    colsq = (D * D).sum(axis=0)
    A = np.zeros((d, n))
    R = X.copy()
    gaps = _lasso_gap(X, D, A, mu)
    sweeps = 0
    while sweeps < max_iter and gaps.max() > tol:
        sweeps += 1
        for j in range(d):
            if colsq[j] == 0:
                continue
            dj = D[:, j]
            z = A[j] + (dj @ R) / colsq[j]
            a_new = np.sign(z) * np.maximum(np.abs(z) - mu / colsq[j], 0.0)
            R -= np.outer(dj, a_new - A[j])
            A[j] = a_new
        R = X - D @ A
        gaps = _lasso_gap(X, D, A, mu)
    return A, gaps, sweeps, bool(gaps.max() <= tol)


def _l1sq_gap(X, D, A, lam):
    R = X - D @ A
    primal = 0.5 * (R * R).sum(axis=0) + (np.abs(A).sum(axis=0) / lam) ** 2
    rx = (R * X).sum(axis=0)
    cmax = np.abs(D.T @ R).max(axis=0)
    denom = (R * R).sum(axis=0) + 0.5 * lam * lam * cmax * cmax
    t = np.where(denom > 0, rx / np.where(denom > 0, denom, 1.0), 0.0)
    dual = t * rx - 0.5 * t * t * denom
    return np.maximum(primal - dual, 0.0)


def _solve_l1_squared(X, D, lam, tol, max_iter, golden_steps=60):
    """Scalar search over the l1 radius s of ``h(s) + (s/lam)^2`` (convex in s)."""
    d, n = D.shape[1], X.shape[1]
    inner_tol = 0.1 * tol

    def inner(radius, A0):
        prox = lambda V: project_l1_ball(V, radius)  # noqa: E731

        def gap_fn(A):
            G = D.T @ (D @ A - X)
            return (G * A).sum(axis=0) + radius * np.abs(G).max(axis=0)

        A, _, it, ok = _fista(X, D, A0, prox, gap_fn, inner_tol, max_iter)
        R = X - D @ A
        return A, 0.5 * (R * R).sum(axis=0) + (radius / lam) ** 2, it, ok

    lo = np.zeros(n)
    hi = lam * np.sqrt((X * X).sum(axis=0) / 2.0)
    ratio = (math.sqrt(5.0) - 1.0) / 2.0
    s1, s2 = hi - ratio * (hi - lo), lo + ratio * (hi - lo)
    A1, f1, it1, ok1 = inner(s1, np.zeros((d, n)))
    A2, f2, it2, ok2 = inner(s2, A1)
    total, all_ok = it1 + it2, ok1 and ok2
    for _ in range(golden_steps):
        left = f1 <= f2
        hi = np.where(left, s2, hi)
        lo = np.where(left, lo, s1)
        new_s1 = np.where(left, hi - ratio * (hi - lo), s2)
        new_s2 = np.where(left, s1, lo + ratio * (hi - lo))
        # only one endpoint per column is new; re-solve both from the incumbent for simplicity
        A_warm = np.where(left, A1, A2)
        A1, f1, i1, o1 = inner(new_s1, A_warm)
        A2, f2, i2, o2 = inner(new_s2, A_warm)
        s1, s2 = new_s1, new_s2
        total += i1 + i2
        all_ok = all_ok and o1 and o2
    A = np.where(f1 <= f2, A1, A2)
    gaps = _l1sq_gap(X, D, A, lam)
    return A, gaps, total, all_ok or bool(gaps.max() <= tol)


def _nonneg_radius(X, D):
    """l1 radius containing every NNLS minimizer, or None when no bound is available."""
    xn = np.sqrt((X * X).sum(axis=0))
    d = D.shape[1]
    if (D >= 0).all() and ((D * D).sum(axis=0) > 0).all():
        kappa = float((D * D).sum(axis=0).min()) / d
    else:
        lam_min = float(np.linalg.eigvalsh(D.T @ D)[0])
        if lam_min <= 1e-14:
            return None
        kappa = lam_min / d
    # ||D a*|| <= 2 ||x|| and kappa ||a||_1^2 <= ||D a||^2
    return 2.0 * xn / math.sqrt(kappa)


def _solve_nonneg(X, D, tol, max_iter):
    rho = _nonneg_radius(X, D)

    def gap_fn(A):
        G = D.T @ (D @ A - X)
        if rho is None:
            return np.full(A.shape[1], math.inf)
        return np.maximum((G * A).sum(axis=0) + rho * np.maximum(0.0, -G.min(axis=0)), 0.0)

    prox = lambda V: np.maximum(V, 0.0)  # noqa: E731
    A, gaps, it, ok = _fista(X, D, np.zeros((D.shape[1], X.shape[1])), prox, gap_fn, tol, max_iter)
    # support polish: least squares on the detected support, kept when feasible and better certified
    for i in np.flatnonzero(gaps > 0):
        S = np.flatnonzero(A[:, i] > 0)
        if S.size == 0:
            continue
        cand = np.zeros(D.shape[1])
        cand[S] = np.linalg.lstsq(D[:, S], X[:, i], rcond=None)[0]
        if (cand >= 0).all():
            g = gap_fn(cand[:, None])[0]
            if g < gaps[i]:
                A[:, i], gaps[i] = cand, g
    return A, gaps, it, bool(gaps.max() <= tol) and rho is not None


def code_batch(X, D, spec: PenaltySpec, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> BatchCoding:
    """Code every column of ``X`` against ``D``."""
    if not tol > 0:
        raise ContractError("tol must be > 0")
    X, D = _check_dims(X, D, spec)
    n = X.shape[1]
    v = spec.variant
    it, cert, gaps = 0, EXACT, np.zeros(n)
    if v == ZERO or (v == K_SPARSE and spec.k == spec.d):
        A = _solve_zero(X, D)
    elif v == K_SPARSE:
        if math.comb(spec.d, spec.k) <= SUPPORT_BUDGET:
            A = _solve_k_sparse_exhaustive(X, D, spec.k)
        else:
            A, cert, gaps = _solve_omp(X, D, spec.k), HEURISTIC, np.full(n, math.inf)
    elif v == KMEANS:
        A = _solve_kmeans(X, D)
    elif v == LP_POWER and (spec.p, spec.r) == (1.0, 1.0):
        A, gaps, it, ok = _solve_lasso(X, D, spec.lam, tol, max_iter)
        cert = GAP if ok else HEURISTIC
    elif v == LP_POWER and (spec.p, spec.r) == (1.0, 2.0):
        A, gaps, it, ok = _solve_l1_squared(X, D, spec.lam, tol, max_iter)
        cert = GAP if ok else HEURISTIC
    elif v == LP_POWER and (spec.p, spec.r) == (2.0, 2.0):
        A = np.linalg.solve(D.T @ D + (2.0 / spec.lam**2) * np.eye(spec.d), D.T @ X)
    elif v == LP_BALL and (spec.p in (1.0, 2.0) or math.isinf(spec.p)):
        p, lam = spec.p, spec.lam

        def gap_fn(A):
            G = D.T @ (D @ A - X)
            return np.maximum((G * A).sum(axis=0) + lam * _dual_norm(G, p), 0.0)

        A, gaps, it, ok = _fista(X, D, np.zeros((spec.d, n)), lambda V: project_lp_ball(V, p, lam), gap_fn, tol, max_iter)
        cert = GAP if ok else HEURISTIC
    elif v == NONNEG:
        A, gaps, it, ok = _solve_nonneg(X, D, tol, max_iter)
        cert = GAP if ok else HEURISTIC
    else:
        raise RefusalError(f"no solver for {spec}; supported: {SUPPORTED}")
    values = objective_values(X, D, A, spec)
    return BatchCoding(values, A, gaps, (cert,) * n, it)


def code(x, D, spec: PenaltySpec, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> CodingResult:
    """Code a single signal ``x``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ContractError("x must be a vector")
    return code_batch(x[:, None], D, spec, tol, max_iter).column(0)


def empirical_cost(X, D, spec: PenaltySpec, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> float:
    """``F_X(D)``: the mean coding cost over the columns of ``X``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ContractError("X must be an m x n matrix with n >= 1")
    return code_batch(X, D, spec, tol, max_iter).mean


# brute-force oracle -------------------------------------------------------

def _grid_box(x, D, spec):
    half_sq = 0.5 * float(x @ x)
    v = spec.variant
    if v == LP_POWER:
        b = spec.lam * half_sq ** (1.0 / spec.r)
        return -b, b
    if v == LP_BALL:
        return -spec.lam, spec.lam
    if v == NONNEG:
        rho = _nonneg_radius(x[:, None], D)
        if rho is None:
            raise RefusalError("no bounded search box for nonneg coding with a rank-deficient mixed-sign dictionary")
        return 0.0, float(rho[0])
    raise RefusalError(f"grid oracle does not handle {v}")


def brute_force_code(x, D, spec: PenaltySpec, resolution: int = 61, refine: int = 12) -> CodingResult:
    """Independent oracle: exhaustive for combinatorial penalties, refined grid for d <= 3.

    Grid values are attained by feasible points, so they upper-bound ``f_x(D)``.
    """
    x = np.asarray(x, dtype=float)
    X, D = _check_dims(x, D, spec)
    x = X[:, 0]
    d = spec.d
    v = spec.variant
    if v == KMEANS:
        dists = [float(np.sum((x - D[:, j]) ** 2)) for j in range(d)]
        j = int(np.argmin(dists))
        alpha = np.zeros(d)
        alpha[j] = 1.0
        return CodingResult(0.5 * dists[j], alpha, EXACT)
    if v in (K_SPARSE, ZERO):
        k = d if v == ZERO else spec.k
        if math.comb(d, k) > SUPPORT_BUDGET:
            raise RefusalError(f"binom({d}, {k}) supports exceed the oracle budget {SUPPORT_BUDGET}")
        best, alpha = math.inf, np.zeros(d)
        for J in itertools.combinations(range(d), k):
            DJ = D[:, list(J)]
            try:
                a = np.linalg.solve(DJ.T @ DJ, DJ.T @ x)
            except np.linalg.LinAlgError:
                a = np.linalg.pinv(DJ.T @ DJ) @ (DJ.T @ x)
            val = 0.5 * float(np.sum((x - DJ @ a) ** 2))
            if val < best:
                best, alpha = val, np.zeros(d)
                alpha[list(J)] = a
        return CodingResult(float(objective_values(X, D, alpha[:, None], spec)[0]), alpha, EXACT)
    if d > 3:
        raise RefusalError(f"grid oracle is exponential in d; refusing d={d} > 3")
    lo_b, hi_b = _grid_box(x, D, spec)
    lo, hi = np.full(d, lo_b), np.full(d, hi_b)
    res = resolution | 1
    best_val, best_pt = math.inf, np.zeros(d)
    for _ in range(refine + 1):
        axes = [np.linspace(lo[i], hi[i], res) for i in range(d)]
        step = max((hi[i] - lo[i]) / (res - 1) for i in range(d))
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=0).reshape(d, -1)
        vals = objective_values(X, D, mesh, spec)
        j = int(np.argmin(vals))
        if vals[j] < best_val:
            best_val, best_pt = float(vals[j]), mesh[:, j].copy()
        if step == 0:
            break
        lo = np.maximum(best_pt - 6 * step, lo_b)
        hi = np.minimum(best_pt + 6 * step, hi_b)
    return CodingResult(best_val, best_pt, HEURISTIC, math.nan)


# Lipschitz constants ------------------------------------------------------

def lipschitz_constant(X, spec: PenaltySpec, regime: Regime | None = None) -> tuple[float, float]:
    """``(L_X, C_X)`` for the sample ``X`` (columns are signals)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ContractError("X must be an m x n matrix with n >= 1")
    reg = _check_regime(spec, regime)
    n = X.shape[1]
    sq = (X * X).sum(axis=0)
    if reg.tag == "A":
        L = float(np.mean(sample_weights(spec, np.sqrt(sq), reg)))
        gb = np.asarray(gbar(spec, sq / 2.0, reg), dtype=float)
        return L, float(np.sum(gb * gb) / (2 * n))
    fro = float(sq.sum())
    return 2.0 * fro / (n * math.sqrt(reg.kappa)), 2.0 * fro / (n * reg.kappa)
