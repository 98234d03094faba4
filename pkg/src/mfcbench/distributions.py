"""Training-data laws, their concentration parameters and Lipschitz moments."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import dictionary_classes as dc
from .errors import ConfigurationError, ContractError
from .penalties import PenaltySpec, Regime, _check_regime, sample_weights

SPHERE = "sphere"
BALL = "ball"
SUBGAUSSIAN_SPARSE = "subgaussian_sparse"
DIST_VARIANTS = (SPHERE, BALL, SUBGAUSSIAN_SPARSE)

# the tail bound P(||x||^2 > A t) <= exp(-t) is proven with this factor on k s_a^2 + m s_e^2
TAIL_FACTOR = 5.0
FACTOR_NOTE = "A = 5 (k sigma_alpha^2 + m sigma_eps^2): the factor 5 is the constant with a proven tail bound"


@dataclass(frozen=True, eq=False)
class DistributionSpec:
    """Signal distribution.

    ``sphere``/``ball`` are uniform on the radius-``R`` sphere/ball of R^m.
    ``subgaussian_sparse`` draws ``x = D0 a + e`` with a uniformly random
    ``k``-support, N(0, sigma_alpha^2) coefficients on it and N(0, sigma_eps^2)
    noise.  ``d0_source`` records how ``D0`` was produced (for serialization).
    """

    variant: str
    m: int
    R: float | None = None
    D0: np.ndarray | None = field(default=None, repr=False)
    k: int | None = None
    sigma_alpha: float | None = None
    sigma_eps: float = 0.0
    d0_class: dc.DictionaryClassSpec | None = None
    d0_source: dict[str, Any] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.variant not in DIST_VARIANTS:
            raise ContractError(f"unknown distribution {self.variant!r}")
        if self.m < 1:
            raise ContractError("m must be >= 1")
        if self.variant in (SPHERE, BALL):
            if self.R is None or not (self.R > 0 and math.isfinite(self.R)):
                raise ContractError("R must be a positive real")
            return
        if self.D0 is None:
            raise ContractError("the sparse model needs a generating dictionary D0")
        D0 = np.asarray(self.D0, dtype=float)
        D0.setflags(write=False)
        object.__setattr__(self, "D0", D0)
        if D0.ndim != 2 or D0.shape[0] != self.m:
            raise ContractError(f"D0 must have {self.m} rows")
        if self.k is None or not 1 <= self.k <= D0.shape[1]:
            raise ContractError("k must satisfy 1 <= k <= number of atoms of D0")
        if self.sigma_alpha is None or not self.sigma_alpha > 0:
            raise ContractError("sigma_alpha must be > 0")
        if not self.sigma_eps >= 0:
            raise ContractError("sigma_eps must be >= 0")
        if self.d0_class is not None:
            report = dc.validate(self.d0_class, D0, 1e-8)
            if not report:
                raise ContractError("D0 is not in its declared class: " + "; ".join(report.violations))

    @classmethod
    def sphere(cls, m: int, R: float = 1.0) -> "DistributionSpec":
        return cls(SPHERE, m, R=float(R))

    @classmethod
    def ball(cls, m: int, R: float = 1.0) -> "DistributionSpec":
        return cls(BALL, m, R=float(R))

    @classmethod
    def subgaussian_sparse(cls, D0, k: int, sigma_alpha: float, sigma_eps: float = 0.0, d0_class=None, d0_source=None):
        D0 = np.asarray(D0, dtype=float)
        return cls(SUBGAUSSIAN_SPARSE, D0.shape[0], D0=D0, k=int(k), sigma_alpha=float(sigma_alpha),
                   sigma_eps=float(sigma_eps), d0_class=d0_class, d0_source=d0_source)

    @property
    def bounded(self) -> bool:
        return self.variant in (SPHERE, BALL)

    def to_dict(self) -> dict[str, Any]:
        if self.bounded:
            return {"variant": self.variant, "m": self.m, "R": self.R}
        out: dict[str, Any] = {"variant": self.variant, "k": self.k, "sigma_alpha": self.sigma_alpha, "sigma_eps": self.sigma_eps}
        if self.d0_source is not None:
            out["D0"] = self.d0_source
        else:
            out["D0"] = {"matrix": self.D0.tolist()}
            if self.d0_class is not None:
                out["D0"]["class"] = self.d0_class.to_dict()
        return out

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "DistributionSpec":
        v = obj["variant"]
        if v in (SPHERE, BALL):
            return cls(v, int(obj["m"]), R=float(obj.get("R", 1.0)))
        if v != SUBGAUSSIAN_SPARSE:
            raise ContractError(f"unknown distribution {v!r}")
        src = obj["D0"]
        klass = dc.DictionaryClassSpec.from_dict(src["class"]) if "class" in src else None
        if "matrix" in src:
            D0 = np.asarray(src["matrix"], dtype=float)
        elif klass is not None and "seed" in src:
            D0 = dc.sample(klass, np.random.default_rng(int(src["seed"])))
        else:
            raise ContractError("D0 needs either 'matrix' or both 'class' and 'seed'")
        return cls.subgaussian_sparse(D0, int(obj["k"]), float(obj["sigma_alpha"]), float(obj.get("sigma_eps", 0.0)),
                                      klass, src if "seed" in src else None)


def _clamp_norms(X: np.ndarray, R: float) -> np.ndarray:
    # keep every column inside the closed radius-R ball despite rounding
    for _ in range(8):
        norms = np.sqrt((X * X).sum(axis=0))
        bad = norms > R
        if not bad.any():
            break
        X[:, bad] *= (R / norms[bad]) * (1.0 - 2.0**-52)
    return X


def sample(dist: DistributionSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` signals as the columns of an ``m x n`` matrix."""
    if n < 1:
        raise ContractError("n must be >= 1")
    m = dist.m
    if dist.bounded:
        G = rng.standard_normal((m, n))
        X = G / np.sqrt((G * G).sum(axis=0)) * dist.R
        if dist.variant == BALL:
            X *= rng.random(n) ** (1.0 / m)
        return _clamp_norms(X, dist.R)
    d = dist.D0.shape[1]
    # the first k indices of a random permutation form a uniform k-subset
    supports = np.argsort(rng.random((d, n)), axis=0)[: dist.k]
    A = np.zeros((d, n))
    A[supports, np.arange(n)] = dist.sigma_alpha * rng.standard_normal((dist.k, n))
    X = dist.D0 @ A
    if dist.sigma_eps > 0:
        X = X + dist.sigma_eps * rng.standard_normal((m, n))
    return X


@dataclass(frozen=True)
class ConcentrationParams:
    c: float
    T: float  # math.inf for bounded support
    A: float | None = None


def concentration_params(dist: DistributionSpec) -> ConcentrationParams:
    """``(c, T, A)`` with ``P(|F_X(D) - E f_x(D)| > c tau) <= 2 exp(-n tau^2)`` for ``tau <= T``."""
    if dist.bounded:
        return ConcentrationParams(dist.R**2 / math.sqrt(8.0), math.inf)
    A = TAIL_FACTOR * (dist.k * dist.sigma_alpha**2 + dist.m * dist.sigma_eps**2)
    return ConcentrationParams(12.0 * A, 1.0, A)


@dataclass(frozen=True)
class LEstimate:
    """A Lipschitz moment bound ``L`` with its provenance."""

    value: float
    method: str
    gamma_zero: bool  # True when P(L_X > L) = 0 exactly (bounded support)
    mean_estimate: float | None = None
    samples: int = 0


def _weights(X, spec, reg):
    norms = np.sqrt((X * X).sum(axis=0))
    if reg.tag == "A":
        return sample_weights(spec, norms, reg)
    return 2.0 * norms**2 / math.sqrt(reg.kappa)


def lipschitz_L(
    dist: DistributionSpec,
    spec: PenaltySpec,
    regime: Regime | None = None,
    quantile_target: float = 0.999,
    rng: np.random.Generator | None = None,
    mc_samples: int = 100_000,
    bootstrap: int = 200,
) -> LEstimate:
    """Bound on ``E ||x|| gbar(||x||^2/2)`` (regime A) or ``E 2||x||^2/sqrt(kappa)`` (regime B)."""
    reg = _check_regime(spec, regime)
    if not 0 < quantile_target < 1:
        raise ContractError("quantile_target must lie in (0, 1)")
    if dist.bounded:
        L = float(_weights(np.array([[dist.R]]), spec, reg)[0])
        return LEstimate(L, "exact: weight at the support radius R", True)
    if rng is None:
        raise ConfigurationError("an unbounded distribution needs a seeded stream to estimate L")
    w = _weights(sample(dist, mc_samples, rng), spec, reg)
    boot = np.empty(bootstrap)
    for b in range(bootstrap):
        boot[b] = w[rng.integers(0, mc_samples, mc_samples)].mean()
    L = float(np.quantile(boot, quantile_target, method="higher"))
    return LEstimate(L, f"monte-carlo mean, bootstrap {quantile_target} quantile over {bootstrap} replicates", False,
                     float(w.mean()), mc_samples)
