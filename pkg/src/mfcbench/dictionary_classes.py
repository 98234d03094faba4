"""Structured dictionary classes: samplers, validators, covering constants.

Dictionaries are plain ``m x d`` float arrays whose columns are atoms.  The
metric on dictionaries is the 1->2 operator norm (largest column l2 norm).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Any, Sequence

import numpy as np

from .errors import ConfigurationError, ContractError, RefusalError
from .penalties import K_SPARSE, NONNEG, ZERO, PenaltySpec

UNIT_NORM = "unit_norm"
BALL = "ball"
ORTHOGONAL = "orthogonal"
STIEFEL = "stiefel"
SEPARABLE = "separable"
STIEFEL_TENSOR = "stiefel_tensor"
SPARSE = "sparse"
NMF_SIMPLEX = "nmf_simplex"

CLASS_VARIANTS = (UNIT_NORM, BALL, ORTHOGONAL, STIEFEL, SEPARABLE, STIEFEL_TENSOR, SPARSE, NMF_SIMPLEX)
# 3 * pi * e^pi: covering constant of the orthogonal group and its quotients
LIE_C = 3.0 * math.pi * math.exp(math.pi)

DEFAULT_DELTA_BUDGET = 10**6


@dataclass(frozen=True)
class DictionaryClassSpec:
    """A constraint set of ``m x d`` dictionaries.

    ``factors`` lists the ``(m_i, d_i)`` of Kronecker factors for the tensor
    variants; ``theta`` is the orthogonal base of a sparse dictionary (identity
    when omitted); ``lrip`` optionally restricts to ``delta_k(D) <= delta``.
    """

    variant: str
    m: int
    d: int
    factors: tuple[tuple[int, int], ...] = ()
    s: int | None = None
    theta: tuple[tuple[float, ...], ...] | None = field(default=None, repr=False)
    lrip: tuple[int, float] | None = None

    def __post_init__(self):
        if self.variant not in CLASS_VARIANTS:
            raise ContractError(f"unknown dictionary class {self.variant!r}")
        if self.m < 1 or self.d < 1:
            raise ContractError("dimensions must be >= 1")
        if self.variant == ORTHOGONAL and self.m != self.d:
            raise ContractError("orthogonal dictionaries are square")
        if self.variant == STIEFEL and self.d > self.m:
            raise ContractError("Stiefel class requires d <= m")
        if self.variant in (SEPARABLE, STIEFEL_TENSOR):
            if not self.factors:
                raise ContractError("tensor classes need at least one factor")
            if any(mi < 1 or di < 1 for mi, di in self.factors):
                raise ContractError("factor dimensions must be >= 1")
            if self.variant == STIEFEL_TENSOR and any(di > mi for mi, di in self.factors):
                raise ContractError("Stiefel factors require d_i <= m_i")
            if math.prod(f[0] for f in self.factors) != self.m or math.prod(f[1] for f in self.factors) != self.d:
                raise ContractError("m and d must be the products of the factor dimensions")
        if self.variant == SPARSE:
            if self.s is None or not 1 <= self.s <= self.m:
                raise ContractError("sparse class requires 1 <= s <= m")
            if self.theta is not None:
                th = np.asarray(self.theta, dtype=float)
                if th.shape != (self.m, self.m) or not np.allclose(th.T @ th, np.eye(self.m), atol=1e-10):
                    raise ContractError("theta must be an m x m orthogonal matrix")
        if self.lrip is not None:
            k, delta = self.lrip
            if not 1 <= k <= min(self.m, self.d):
                raise ContractError("lrip k must satisfy 1 <= k <= min(m, d)")
            if not 0 < delta < 1:
                raise ContractError("lrip delta must lie in (0, 1)")

    # constructors --------------------------------------------------------
    @classmethod
    def unit_norm(cls, m: int, d: int) -> "DictionaryClassSpec":
        return cls(UNIT_NORM, m, d)

    @classmethod
    def ball(cls, m: int, d: int) -> "DictionaryClassSpec":
        return cls(BALL, m, d)

    @classmethod
    def orthogonal(cls, d: int) -> "DictionaryClassSpec":
        return cls(ORTHOGONAL, d, d)

    @classmethod
    def stiefel(cls, m: int, d: int) -> "DictionaryClassSpec":
        return cls(STIEFEL, m, d)

    @classmethod
    def separable(cls, factors: Sequence[tuple[int, int]]) -> "DictionaryClassSpec":
        f = tuple((int(a), int(b)) for a, b in factors)
        return cls(SEPARABLE, math.prod(a for a, _ in f), math.prod(b for _, b in f), factors=f)

    @classmethod
    def stiefel_tensor(cls, factors: Sequence[tuple[int, int]]) -> "DictionaryClassSpec":
        f = tuple((int(a), int(b)) for a, b in factors)
        return cls(STIEFEL_TENSOR, math.prod(a for a, _ in f), math.prod(b for _, b in f), factors=f)

    @classmethod
    def sparse(cls, m: int, d: int, s: int, theta=None) -> "DictionaryClassSpec":
        th = None if theta is None else tuple(tuple(float(v) for v in row) for row in np.asarray(theta))
        return cls(SPARSE, m, d, s=s, theta=th)

    @classmethod
    def nmf_simplex(cls, m: int, d: int) -> "DictionaryClassSpec":
        return cls(NMF_SIMPLEX, m, d)

    def with_lrip(self, k: int, delta: float) -> "DictionaryClassSpec":
        return DictionaryClassSpec(self.variant, self.m, self.d, self.factors, self.s, self.theta, (int(k), float(delta)))

    @property
    def theta_matrix(self) -> np.ndarray:
        if self.theta is None:
            return np.eye(self.m)
        return np.asarray(self.theta, dtype=float)

    @property
    def is_convex(self) -> bool:
        return self.variant in (BALL, NMF_SIMPLEX) and self.lrip is None

    # serialization -------------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"variant": self.variant, "m": self.m, "d": self.d}
        if self.factors:
            out["factors"] = [list(f) for f in self.factors]
        if self.s is not None:
            out["s"] = self.s
        if self.theta is not None:
            out["theta"] = [list(r) for r in self.theta]
        if self.lrip is not None:
            out["lrip"] = {"k": self.lrip[0], "delta": self.lrip[1]}
        return out

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "DictionaryClassSpec":
        v = obj["variant"]
        if v in (SEPARABLE, STIEFEL_TENSOR):
            base = (cls.separable if v == SEPARABLE else cls.stiefel_tensor)(obj["factors"])
        elif v == ORTHOGONAL:
            base = cls.orthogonal(int(obj.get("d", obj.get("m"))))
        elif v == SPARSE:
            base = cls.sparse(int(obj["m"]), int(obj["d"]), int(obj["s"]), obj.get("theta"))
        else:
            base = cls(v, int(obj["m"]), int(obj["d"]))
        lrip = obj.get("lrip")
        if lrip is not None:
            base = base.with_lrip(int(lrip["k"]), float(lrip["delta"]))
        return base


def op_norm_1to2(M: np.ndarray) -> float:
    """``||M||_{1->2}``: the largest l2 norm of a column."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0
    return float(np.sqrt((M * M).sum(axis=0)).max())


def covering_constants(cls: DictionaryClassSpec) -> tuple[int, float]:
    """``(h, C)`` with ``N(class, eps) <= (C / eps) ** h`` for 0 < eps <= 1."""
    v, m, d = cls.variant, cls.m, cls.d
    if v in (UNIT_NORM, BALL, NMF_SIMPLEX):
        return m * d, 3.0
    if v == SEPARABLE:
        return sum(mi * di for mi, di in cls.factors), 3.0
    if v == SPARSE:
        return cls.s * d, 3.0 * math.comb(m, cls.s) ** (1.0 / cls.s)
    if v == ORTHOGONAL:
        return d * (d - 1) // 2 if d > 1 else 1, LIE_C
    if v == STIEFEL:
        return max(m * d - d * (d + 1) // 2, 1), LIE_C
    h = sum(mi * di - di * (di + 1) // 2 for mi, di in cls.factors)
    return max(h, 1), LIE_C


# sampling ---------------------------------------------------------------

def _normalize_columns(M: np.ndarray) -> np.ndarray:
    norms = np.sqrt((M * M).sum(axis=0))
    return M / norms


def _haar_stiefel(rng: np.random.Generator, m: int, d: int) -> np.ndarray:
    Q, R = np.linalg.qr(rng.standard_normal((m, d)))
    signs = np.where(np.diag(R) < 0, -1.0, 1.0)
    return Q * signs


@dataclass(frozen=True)
class SparseAtoms:
    """Sparse-dictionary storage: per-column supports and values in the Theta basis."""

    supports: np.ndarray  # d x s integer rows
    values: np.ndarray  # d x s
    theta: np.ndarray  # m x m

    def dense(self) -> np.ndarray:
        m = self.theta.shape[0]
        d = self.supports.shape[0]
        coeffs = np.zeros((m, d))
        for j in range(d):
            coeffs[self.supports[j], j] = self.values[j]
        return self.theta @ coeffs


def sample_sparse_atoms(cls: DictionaryClassSpec, rng: np.random.Generator) -> SparseAtoms:
    if cls.variant != SPARSE:
        raise ContractError("sample_sparse_atoms needs a sparse dictionary class")
    supports = np.stack([np.sort(rng.choice(cls.m, size=cls.s, replace=False)) for _ in range(cls.d)])
    values = rng.standard_normal((cls.d, cls.s))
    values /= np.sqrt((values * values).sum(axis=1, keepdims=True))
    return SparseAtoms(supports, values, cls.theta_matrix)


def _sample_base(cls: DictionaryClassSpec, rng: np.random.Generator) -> np.ndarray:
    v, m, d = cls.variant, cls.m, cls.d
    if v == UNIT_NORM:
        return _normalize_columns(rng.standard_normal((m, d)))
    if v == BALL:
        radii = rng.random(d) ** (1.0 / m)
        return _normalize_columns(rng.standard_normal((m, d))) * radii
    if v == ORTHOGONAL:
        Q = _haar_stiefel(rng, d, d)
        if np.linalg.det(Q) < 0:
            Q[:, 0] = -Q[:, 0]
        return Q
    if v == STIEFEL:
        return _haar_stiefel(rng, m, d)
    if v == NMF_SIMPLEX:
        return rng.dirichlet(np.ones(m), size=d).T
    if v == SPARSE:
        return sample_sparse_atoms(cls, rng).dense()
    if v == SEPARABLE:
        parts = [_normalize_columns(rng.standard_normal(f)) for f in cls.factors]
    else:
        parts = [_haar_stiefel(rng, mi, di) for mi, di in cls.factors]
    return reduce(np.kron, parts)


def sample(cls: DictionaryClassSpec, rng: np.random.Generator, max_tries: int = 10_000) -> np.ndarray:
    """Draw a member of the class.

    With an lrip filter, draws are rejected until ``delta_k(D) <= delta``.
    """
    for _ in range(max_tries if cls.lrip else 1):
        D = _sample_base(cls, rng)
        if cls.lrip is None or delta_k(D, cls.lrip[0]) <= cls.lrip[1]:
            return D
    raise RefusalError(f"no lrip member found in {max_tries} draws; loosen delta or lower k")


# projection (used by the learning loop and by local perturbations) --------

def project_simplex(V: np.ndarray) -> np.ndarray:
    """Euclidean projection of each column onto the probability simplex."""
    V = np.asarray(V, dtype=float)
    m = V.shape[0]
    U = -np.sort(-V, axis=0)
    css = np.cumsum(U, axis=0) - 1.0
    idx = np.arange(1, m + 1)[:, None]
    cond = U - css / idx > 0
    rho = m - 1 - np.argmax(cond[::-1], axis=0)
    theta = css[rho, np.arange(V.shape[1])] / (rho + 1)
    return np.maximum(V - theta, 0.0)


def project(cls: DictionaryClassSpec, M: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
    """Map an arbitrary ``m x d`` matrix onto the class (the lrip filter is not enforced)."""
    M = np.array(M, dtype=float)
    v = cls.variant
    if v in (UNIT_NORM, BALL):
        norms = np.sqrt((M * M).sum(axis=0))
        dead = norms == 0
        if dead.any():
            gen = rng if rng is not None else np.random.default_rng(0)
            M[:, dead] = gen.standard_normal((cls.m, int(dead.sum())))
            norms = np.sqrt((M * M).sum(axis=0))
        scale = norms if v == UNIT_NORM else np.maximum(norms, 1.0)
        return M / scale
    if v in (STIEFEL, ORTHOGONAL):
        Q, R = np.linalg.qr(M)
        Q = Q * np.where(np.diag(R) < 0, -1.0, 1.0)
        if v == ORTHOGONAL and np.linalg.det(Q) < 0:
            Q[:, -1] = -Q[:, -1]
        return Q
    if v == NMF_SIMPLEX:
        return project_simplex(M)
    if v == SPARSE:
        th = cls.theta_matrix
        C = th.T @ M
        drop = np.argsort(-np.abs(C), axis=0, kind="stable")[cls.s :]
        np.put_along_axis(C, drop, 0.0, axis=0)
        return th @ project(DictionaryClassSpec.unit_norm(cls.m, cls.d), C, rng)
    raise RefusalError(f"no projection implemented for the {v} class")


# validation -------------------------------------------------------------

@dataclass
class ValidationReport:
    ok: bool
    violations: list[str]

    def __bool__(self) -> bool:
        return self.ok


def kron_factors(D: np.ndarray, shapes: Sequence[tuple[int, int]]) -> list[np.ndarray]:
    """Best Kronecker factorization ``D ~ F_1 kron ... kron F_z`` (nearest rank-one rearrangement).

    Every factor but the last is scaled so its first column has unit norm.
    """
    D = np.asarray(D, dtype=float)
    if len(shapes) == 1:
        return [D.copy()]
    (m1, d1), rest = shapes[0], shapes[1:]
    mr, dr = math.prod(s[0] for s in rest), math.prod(s[1] for s in rest)
    R = D.reshape(m1, mr, d1, dr).transpose(0, 2, 1, 3).reshape(m1 * d1, mr * dr)
    U, S, Vt = np.linalg.svd(R, full_matrices=False)
    A = (U[:, 0] * S[0]).reshape(m1, d1)
    B = Vt[0].reshape(mr, dr)
    scale = np.linalg.norm(A[:, 0])
    if scale > 0:
        A, B = A / scale, B * scale
    return [A] + kron_factors(B, rest)


def _check_columns(D, tol, what, out, target_norm=1.0, exact_norm=True):
    norms = np.sqrt((D * D).sum(axis=0))
    for j, nj in enumerate(norms):
        if exact_norm and abs(nj - target_norm) > tol:
            out.append(f"{what}column {j} has l2 norm {nj!r}, expected {target_norm}")
        elif not exact_norm and nj > target_norm + tol:
            out.append(f"{what}column {j} has l2 norm {nj!r} > {target_norm}")


def _check_orthonormal(D, tol, what, out):
    err = np.abs(D.T @ D - np.eye(D.shape[1])).max()
    if err > tol:
        out.append(f"{what}D^T D deviates from the identity by {err:.3e}")


def validate(cls: DictionaryClassSpec, D: np.ndarray, tol: float = 0.0) -> ValidationReport:
    """Check every class constraint of ``D`` within absolute tolerance ``tol``."""
    D = np.asarray(D, dtype=float)
    if D.shape != (cls.m, cls.d):
        raise ContractError(f"expected a {cls.m} x {cls.d} dictionary, got shape {D.shape}")
    out: list[str] = []
    if not np.isfinite(D).all():
        return ValidationReport(False, ["non-finite entries"])
    v = cls.variant
    if v == UNIT_NORM:
        _check_columns(D, tol, "", out)
    elif v == BALL:
        _check_columns(D, tol, "", out, exact_norm=False)
    elif v in (STIEFEL, ORTHOGONAL):
        _check_orthonormal(D, tol, "", out)
        if v == ORTHOGONAL and not out:
            det = np.linalg.det(D)
            if abs(det - 1.0) > tol:
                out.append(f"determinant {det!r} is not +1")
    elif v == NMF_SIMPLEX:
        if (D < -tol).any():
            i, j = np.argwhere(D < -tol)[0]
            out.append(f"negative entry {D[i, j]!r} at ({i}, {j})")
        l1 = np.abs(D).sum(axis=0)
        for j in np.flatnonzero(np.abs(l1 - 1.0) > tol):
            out.append(f"column {j} has l1 norm {l1[j]!r}, expected 1")
    elif v == SPARSE:
        C = cls.theta_matrix.T @ D
        counts = (np.abs(C) > tol).sum(axis=0)
        for j in np.flatnonzero(counts > cls.s):
            out.append(f"column {j} uses {counts[j]} basis elements > s={cls.s}")
        _check_columns(D, tol, "", out)
    else:
        factors = kron_factors(D, cls.factors)
        err = np.abs(reduce(np.kron, factors) - D).max()
        if err > tol:
            out.append(f"not a Kronecker product of the declared factors (residual {err:.3e})")
        else:
            for i, F in enumerate(factors):
                tag = f"factor {i}: "
                if v == SEPARABLE:
                    _check_columns(F, tol, tag, out)
                else:
                    _check_orthonormal(F, tol, tag, out)
    if cls.lrip is not None and not out:
        k, delta = cls.lrip
        dk = delta_k(D, k)
        if dk > delta + tol:
            out.append(f"delta_{k}(D) = {dk:.6g} exceeds {delta}")
    return ValidationReport(not out, out)


# restricted isometry ------------------------------------------------------

def delta_k(D: np.ndarray, k: int, budget: int = DEFAULT_DELTA_BUDGET) -> float:
    """Lower restricted isometry constant by exhaustive support enumeration.

    ``max(0, 1 - min_J lambda_min(D_J^T D_J))`` over all ``|J| = k``, clamped to [0, 1].
    """
    D = np.asarray(D, dtype=float)
    m, d = D.shape
    if not 1 <= k <= min(m, d):
        raise ContractError(f"k must satisfy 1 <= k <= min(m, d) = {min(m, d)}")
    count = math.comb(d, k)
    if count > budget:
        raise RefusalError(f"binom({d}, {k}) = {count} supports exceeds the budget {budget}; lower k or d")
    G = D.T @ D
    lam_min = math.inf
    combos = itertools.combinations(range(d), k)
    while True:
        block = np.array(list(itertools.islice(combos, 4096)), dtype=np.intp)
        if block.size == 0:
            break
        sub = G[block[:, :, None], block[:, None, :]]
        lam_min = min(lam_min, float(np.linalg.eigvalsh(sub)[:, 0].min()))
    return float(min(max(1.0 - lam_min, 0.0), 1.0))


def kappa_of(cls: DictionaryClassSpec, penalty: PenaltySpec, D: np.ndarray | None = None) -> float:
    """Restricted-eigenvalue constant kappa with ``kappa ||a||_1^2 <= ||D a||_2^2``.

    Class-level unless a specific dictionary ``D`` is given.
    """
    if penalty.is_regime_a:
        raise ConfigurationError(f"{penalty.variant} is a regime-A penalty; kappa is undefined")
    if penalty.d != cls.d:
        raise ConfigurationError(f"penalty acts on {penalty.d} coefficients but the class has {cls.d} atoms")
    v = penalty.variant
    if v in (ZERO, K_SPARSE):
        k = cls.d if v == ZERO else penalty.k
        if cls.variant in (STIEFEL, ORTHOGONAL, STIEFEL_TENSOR):
            delta = 0.0
        elif D is not None:
            delta = delta_k(D, k)
        elif cls.lrip is not None and cls.lrip[0] >= k:
            # delta_k is non-decreasing in k, so the filter also bounds smaller k
            delta = cls.lrip[1]
        else:
            raise ConfigurationError(
                f"the {v} penalty needs a class with a lower-RIP bound of order >= {k} (lrip filter or orthonormal atoms)"
            )
        if delta >= 1:
            raise ConfigurationError("delta_k(D) = 1: no restricted eigenvalue bound")
        return (1.0 - delta) / k
    if v == NONNEG:
        if cls.variant != NMF_SIMPLEX:
            raise ConfigurationError("the nonneg penalty is supported on the nmf_simplex class")
        if D is not None:
            return float((D * D).sum(axis=0).min()) / cls.d
        # ||d_j||_2 >= ||d_j||_1 / sqrt(m) = 1 / sqrt(m)
        return 1.0 / (cls.m * cls.d)
    raise ConfigurationError(f"no kappa rule for penalty {v}")


def greedy_epsilon_net(points: np.ndarray, eps: float) -> list[int]:
    """Greedy eps-net (in the 1->2 metric) of a finite cloud of ``N x m x d`` dictionaries."""
    points = np.asarray(points, dtype=float)
    net: list[int] = []
    centers = np.empty((0,) + points.shape[1:])
    for i, P in enumerate(points):
        if centers.shape[0]:
            diff = centers - P
            dist = np.sqrt((diff * diff).sum(axis=1)).max(axis=1)
            if dist.min() <= eps:
                continue
        net.append(i)
        centers = np.concatenate([centers, P[None]], axis=0)
    return net
