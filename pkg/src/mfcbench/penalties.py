"""Coefficient penalties g and their l1 envelopes.

A penalty is described by a frozen :class:`PenaltySpec`.  The envelope
``gbar(t)`` is the largest l1 norm reachable inside the sublevel set
``{alpha : g(alpha) <= t}`` (coercive penalties, regime A), or
``2 sqrt(2 t / kappa)`` for indicator penalties whose coefficient set and
dictionary class satisfy a restricted-eigenvalue bound with constant kappa
(regime B).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import ConfigurationError, ContractError, RefusalError

LP_POWER = "lp_norm_power"
LP_BALL = "lp_ball"
K_SPARSE = "k_sparse"
NONNEG = "nonneg"
KMEANS = "kmeans"
ZERO = "zero"

VARIANTS = (LP_POWER, LP_BALL, K_SPARSE, NONNEG, KMEANS, ZERO)
REGIME_A_VARIANTS = (LP_POWER, LP_BALL, KMEANS)
REGIME_B_VARIANTS = (K_SPARSE, NONNEG, ZERO)


@dataclass(frozen=True)
class Regime:
    """Assumption bundle: ``"A"`` (coercive g) or ``"B"`` (indicator g with kappa)."""

    tag: str
    kappa: float | None = None

    def __post_init__(self):
        if self.tag not in ("A", "B"):
            raise ContractError(f"regime tag must be 'A' or 'B', got {self.tag!r}")
        if self.tag == "B":
            if self.kappa is None or not self.kappa > 0:
                raise ContractError("regime B needs kappa > 0")
        elif self.kappa is not None:
            raise ContractError("regime A carries no kappa")

    @classmethod
    def a(cls) -> "Regime":
        return cls("A")

    @classmethod
    def b(cls, kappa: float) -> "Regime":
        return cls("B", float(kappa))


@dataclass(frozen=True)
class PenaltySpec:
    """Symbolic description of a penalty on coefficient vectors of length ``d``.

    ``p`` may be ``math.inf``.  Unused parameters stay ``None``.
    """

    variant: str
    d: int
    p: float | None = None
    r: float | None = None
    lam: float | None = None
    k: int | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown penalty variant {self.variant!r}")
        if not (isinstance(self.d, (int, np.integer)) and self.d >= 1):
            raise ContractError("coefficient dimension d must be a positive integer")
        if self.variant in (LP_POWER, LP_BALL):
            if self.p is None or not self.p > 0:
                raise ContractError("p must be > 0 (inf allowed)")
            if self.lam is None or not (self.lam > 0 and math.isfinite(self.lam)):
                raise ContractError("lambda must be a positive real")
        if self.variant == LP_POWER:
            if self.r is None or not (self.r > 0 and math.isfinite(self.r)):
                raise ContractError("r must be a positive real")
        if self.variant == K_SPARSE:
            if self.k is None or not 1 <= self.k <= self.d:
                raise ContractError("k must satisfy 1 <= k <= d")

    # constructors --------------------------------------------------------
    @classmethod
    def lp_power(cls, d: int, p: float, r: float, lam: float) -> "PenaltySpec":
        """``g(alpha) = ||alpha / lam||_p ** r``."""
        return cls(LP_POWER, d, p=float(p), r=float(r), lam=float(lam))

    @classmethod
    def lasso(cls, d: int, lam: float) -> "PenaltySpec":
        return cls.lp_power(d, 1.0, 1.0, lam)

    @classmethod
    def lp_ball(cls, d: int, p: float, lam: float) -> "PenaltySpec":
        return cls(LP_BALL, d, p=float(p), lam=float(lam))

    @classmethod
    def k_sparse(cls, d: int, k: int) -> "PenaltySpec":
        return cls(K_SPARSE, d, k=int(k))

    @classmethod
    def nonneg(cls, d: int) -> "PenaltySpec":
        return cls(NONNEG, d)

    @classmethod
    def kmeans(cls, d: int) -> "PenaltySpec":
        return cls(KMEANS, d)

    @classmethod
    def zero(cls, d: int) -> "PenaltySpec":
        return cls(ZERO, d)

    # serialization -------------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"variant": self.variant, "d": int(self.d)}
        if self.p is not None:
            out["p"] = "inf" if math.isinf(self.p) else self.p
        if self.r is not None:
            out["r"] = self.r
        if self.lam is not None:
            out["lambda"] = self.lam
        if self.k is not None:
            out["k"] = int(self.k)
        return out

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "PenaltySpec":
        p = obj.get("p")
        if isinstance(p, str):
            if p.lower() not in ("inf", "infinity"):
                raise ContractError(f"p must be a number or 'inf', got {p!r}")
            p = math.inf
        return cls(
            variant=obj["variant"],
            d=int(obj["d"]),
            p=None if p is None else float(p),
            r=None if obj.get("r") is None else float(obj["r"]),
            lam=None if obj.get("lambda") is None else float(obj["lambda"]),
            k=None if obj.get("k") is None else int(obj["k"]),
        )

    @property
    def is_regime_a(self) -> bool:
        return self.variant in REGIME_A_VARIANTS

    @property
    def satisfies_a4(self) -> bool:
        """True when g(0) = 0 and g is coercive (A1-A4)."""
        return self.variant in (LP_POWER, LP_BALL)

    def normalized(self) -> "PenaltySpec":
        """The zero penalty is handled as the d-sparse indicator."""
        if self.variant == ZERO:
            return PenaltySpec.k_sparse(self.d, self.d)
        return self


def norm_exponent(p: float, d: int) -> float:
    """``d ** (1 - 1/p)_+``; the constant C_g of the l^p (quasi)norm."""
    if math.isinf(p):
        return float(d)
    return float(d) ** max(1.0 - 1.0 / p, 0.0)


def lp_norms(A: np.ndarray, p: float) -> np.ndarray:
    """Column-wise l^p (quasi)norms of a ``d x n`` array."""
    absA = np.abs(A)
    if math.isinf(p):
        return absA.max(axis=0)
    if p == 1:
        return absA.sum(axis=0)
    if p == 2:
        return np.sqrt((absA * absA).sum(axis=0))
    return (absA**p).sum(axis=0) ** (1.0 / p)


def penalty_values(spec: PenaltySpec, A: np.ndarray, atol: float = 0.0) -> np.ndarray:
    """Evaluate g on each column of ``A`` (shape ``d x n``)."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != spec.d:
        raise ContractError(f"expected {spec.d} x n coefficients, got shape {A.shape}")
    n = A.shape[1]
    v = spec.variant
    if v == ZERO:
        return np.zeros(n)
    if v == LP_POWER:
        return (lp_norms(A, spec.p) / spec.lam) ** spec.r
    out = np.zeros(n)
    if v == LP_BALL:
        bad = lp_norms(A, spec.p) > spec.lam + atol
    elif v == K_SPARSE:
        bad = (np.abs(A) > atol).sum(axis=0) > spec.k
    elif v == NONNEG:
        bad = (A < -atol).any(axis=0)
    else:  # KMEANS: exactly one entry equal to one, the rest zero
        ones = np.abs(A - 1.0) <= atol
        zeros = np.abs(A) <= atol
        bad = ~((ones.sum(axis=0) == 1) & ((ones | zeros).all(axis=0)))
    out[bad] = math.inf
    return out


def eval_penalty(spec: PenaltySpec, alpha, atol: float = 0.0) -> float:
    """g(alpha); indicator membership uses exact comparisons unless ``atol`` > 0."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 1 or alpha.shape[0] != spec.d:
        raise ContractError(f"alpha must have length {spec.d}, got shape {alpha.shape}")
    return float(penalty_values(spec, alpha[:, None], atol)[0])


def _check_regime(spec: PenaltySpec, regime: Regime | None) -> Regime:
    if spec.is_regime_a:
        if regime is not None and regime.tag != "A":
            raise ConfigurationError(f"{spec.variant} is a regime-A penalty, got regime {regime.tag}")
        return Regime.a()
    if regime is None or regime.tag != "B":
        raise ConfigurationError(
            f"{spec.variant} needs regime B with a kappa supplied by the dictionary class"
        )
    return regime


def gbar(spec: PenaltySpec, t, regime: Regime | None = None):
    """Envelope of the penalty at level(s) ``t >= 0``.

    Scalars in, float out; arrays in, arrays out.
    """
    reg = _check_regime(spec, regime)
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(np.isnan(t_arr)):
        raise ContractError("gbar is defined for t >= 0")
    v = spec.variant
    if v == LP_POWER:
        out = norm_exponent(spec.p, spec.d) * spec.lam * t_arr ** (1.0 / spec.r)
    elif v == LP_BALL:
        out = np.full_like(t_arr, norm_exponent(spec.p, spec.d) * spec.lam)
    elif v == KMEANS:
        out = np.ones_like(t_arr)
    else:
        out = 2.0 * np.sqrt(2.0 * t_arr / reg.kappa)
    return float(out) if out.ndim == 0 else out


def lipschitz_weight(spec: PenaltySpec, t, regime: Regime | None = None):
    """``t * gbar(t**2 / 2)``, the per-sample weight for a sample of norm t."""
    t_arr = np.asarray(t, dtype=float)
    out = t_arr * np.asarray(gbar(spec, t_arr * t_arr / 2.0, regime))
    return float(out) if out.ndim == 0 else out


def sample_weights(spec: PenaltySpec, norms, regime: Regime | None = None) -> np.ndarray:
    """Per-sample Lipschitz weights entering L_X.

    K-means violates g(0) = 0, so ``||x|| * gbar(||x||^2/2)`` is not a valid
    weight there.  With atoms in the unit ball the cost of one sample moves
    by at most ``||x - (d_j + d'_j)/2|| <= ||x|| + 1`` per unit of
    ``||D - D'||_{1->2}``, which is what we use.
    """
    norms = np.asarray(norms, dtype=float)
    if spec.variant == KMEANS:
        _check_regime(spec, regime)
        return norms + 1.0
    return np.asarray(lipschitz_weight(spec, norms, regime), dtype=float)


def _oracle_box(spec: PenaltySpec, t: float) -> float:
    # sup-norm radius of the sublevel set, using only ||.||_inf <= ||.||_p
    if spec.variant == LP_POWER:
        return spec.lam * t ** (1.0 / spec.r)
    if spec.variant == LP_BALL:
        return spec.lam
    return 1.0


def gbar_oracle(spec: PenaltySpec, t: float, resolution: int = 41, refine: int = 8) -> float:
    """Grid estimate of ``max ||alpha||_1`` over ``{g(alpha) <= t}`` for d <= 4.

    A uniform grid of ``resolution`` points per axis covers the sup-norm box
    containing the sublevel set; each refinement pass re-grids six cells
    either side of the incumbent.  Only grid points that pass the membership
    test count, so the estimate never exceeds the true envelope.
    """
    if spec.d > 4:
        raise RefusalError(f"gbar_oracle is exponential in d; refusing d={spec.d} > 4")
    if not spec.is_regime_a:
        raise RefusalError("gbar_oracle only handles regime-A penalties")
    if t < 0:
        raise ContractError("t must be >= 0")
    if resolution < 3:
        raise ContractError("resolution must be >= 3")
    resolution = resolution | 1  # odd: keeps 0 and the box corners on the grid
    b = _oracle_box(spec, float(t))
    if b == 0:
        return 0.0
    lo = np.full(spec.d, -b)
    hi = np.full(spec.d, b)
    best_val, best_pt = -math.inf, None
    for _ in range(refine + 1):
        axes = [np.linspace(lo[i], hi[i], resolution) for i in range(spec.d)]
        step = max((hi[i] - lo[i]) / (resolution - 1) for i in range(spec.d))
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=0).reshape(spec.d, -1)
        for start in range(0, mesh.shape[1], 1 << 20):
            chunk = mesh[:, start : start + (1 << 20)]
            ok = penalty_values(spec, chunk) <= t
            if not ok.any():
                continue
            l1 = np.where(ok, np.abs(chunk).sum(axis=0), -math.inf)
            j = int(np.argmax(l1))
            if l1[j] > best_val:
                best_val, best_pt = float(l1[j]), chunk[:, j].copy()
        if best_pt is None or step == 0:
            break
        lo = np.maximum(best_pt - 6 * step, -b)
        hi = np.minimum(best_pt + 6 * step, b)
    return max(best_val, 0.0)
