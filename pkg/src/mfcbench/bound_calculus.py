"""Sample-complexity arithmetic: beta, eta_n, sample-size validity, worked examples."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np

from . import dictionary_classes as dc
from . import distributions as dist_mod
from .errors import ConfigurationError, ContractError, RefusalError
from .penalties import KMEANS, PenaltySpec, Regime, norm_exponent

SCHEMA_VERSION = "1"
DEFAULT_X = 3.0
TWO_C = "two_c"
THREE_C = "three_c"
PI_E_PI = math.pi * math.exp(math.pi)


def _json_float(v: float | None):
    if v is None:
        return None
    if math.isinf(v):
        return "inf"
    return float(v)


def beta(h: float, C: float, L: float, c: float) -> float:
    """``h * max(log(2 L C / c), 1)`` (natural log)."""
    if not (h >= 1 and C >= 1 and L > 0 and c > 0):
        raise ContractError(f"beta needs h >= 1, C >= 1, L > 0, c > 0; got h={h}, C={C}, L={L}, c={c}")
    return h * max(math.log(2.0 * L * C / c), 1.0)


def eta_n(n: float, x: float, beta_value: float, c: float, flavor: str = TWO_C) -> float:
    """Uniform-deviation bound ``k c sqrt(beta log n / n) + c sqrt((beta + x) / n)``, k = 2 or 3."""
    if flavor not in (TWO_C, THREE_C):
        raise ContractError(f"flavor must be {TWO_C!r} or {THREE_C!r}")
    if not (n >= 2 and x >= 0 and beta_value >= 1 and c > 0):
        raise ContractError("eta_n needs n >= 2, x >= 0, beta >= 1, c > 0")
    lead = 2.0 if flavor == TWO_C else 3.0
    return lead * c * math.sqrt(beta_value * math.log(n) / n) + c * math.sqrt((beta_value + x) / n)


def sample_size_threshold(beta_value: float, T: float, c: float, L: float, dconst: float = 1.0) -> float:
    """Right-hand side of ``n / log n >= max(8, beta / T^2, dconst (c / 2L)^2 beta)``."""
    tail = 0.0 if math.isinf(T) else beta_value / T**2
    return max(8.0, tail, dconst * (c / (2.0 * L)) ** 2 * beta_value)


def sample_size_ok(n: float, beta_value: float, T: float, c: float, L: float, dconst: float = 1.0) -> bool:
    if n <= 1:
        return False
    return n / math.log(n) >= sample_size_threshold(beta_value, T, c, L, dconst)


def x_max(n: float, beta_value: float, T: float) -> float:
    """Largest admissible confidence parameter ``n T^2 - beta log n`` (``inf`` when T is infinite)."""
    if math.isinf(T):
        return math.inf
    return n * T**2 - beta_value * math.log(n)


def min_valid_n(beta_value: float, T: float, c: float, L: float, dconst: float = 1.0, start: int = 2) -> int:
    """Smallest integer n passing :func:`sample_size_ok` (n / log n is increasing for n >= 3)."""
    thr = sample_size_threshold(beta_value, T, c, L, dconst)
    hi = max(start, 3)
    while hi / math.log(hi) < thr:
        hi *= 2
    lo = max(3, hi // 2)
    while lo < hi:
        mid = (lo + hi) // 2
        if mid / math.log(mid) >= thr:
            hi = mid
        else:
            lo = mid + 1
    return hi


# worked examples ----------------------------------------------------------

@dataclass
class WorkedExample:
    name: str
    beta: float
    generic_beta: float
    h: float
    C: float
    L: float
    c: float
    is_upper_bound: bool
    formula: str
    params: dict[str, Any] = field(default_factory=dict)

    @property
    def consistent(self) -> bool:
        if self.is_upper_bound:
            return self.generic_beta <= self.beta * (1 + 1e-12)
        return math.isclose(self.beta, self.generic_beta, rel_tol=1e-12)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["consistent"] = self.consistent
        return out


EXAMPLES = (
    "pca", "pca_subgauss", "chi_p", "chi_0", "l1", "l1_squared", "sparse_chi_1", "sparse_chi_0",
    "nmf", "kmeans", "hosvd", "subgauss_l1_squared",
)

_SQRT8 = math.sqrt(8.0)


def _stiefel_h(m, d):
    return m * d - d * (d + 1) / 2


def worked_example_beta(example: str, **p) -> WorkedExample:
    """Closed-form beta of a named scenario, with the generic ``beta(h, C, L, c)`` alongside.

    Parameters by example: ``m, d`` (all but kmeans/hosvd), ``K`` (kmeans),
    ``k, delta`` (l0 rows), ``lam`` and ``p`` (penalty rows), ``s`` (sparse
    dictionaries), ``A`` (sub-Gaussian rows), ``dims`` (hosvd: list of (m_i, d_i)).
    """
    unit_c = 1.0 / _SQRT8
    if example == "pca":
        m, d = p["m"], p["d"]
        h = _stiefel_h(m, d)
        val = h * math.log(12 * PI_E_PI * math.sqrt(8 * d))
        gen = (h, 3 * PI_E_PI, 2 * math.sqrt(d), unit_c)
        formula, ub = "(md - d(d+1)/2) log(12 pi e^pi sqrt(8d))", False
    elif example == "pca_subgauss":
        m, d, A = p["m"], p["d"], p["A"]
        h = _stiefel_h(m, d)
        val = h * max(math.log(PI_E_PI * math.sqrt(d) / A), 1.0)
        gen = (h, 3 * PI_E_PI, 2 * math.sqrt(d), 12 * A)
        formula, ub = "(md - d(d+1)/2) max(log(pi e^pi sqrt(d) / A), 1)", False
    elif example == "chi_p":
        m, d, lam, pp = p["m"], p["d"], p["lam"], p["p"]
        cg = norm_exponent(pp, d)
        val = m * d * max(math.log(6 * _SQRT8 * lam * cg), 1.0)
        gen = (m * d, 3.0, cg * lam, unit_c)
        formula, ub = "md max(log(6 sqrt(8) lam d^(1-1/p)+), 1)", False
    elif example == "chi_0":
        m, d, k, delta = p["m"], p["d"], p["k"], p["delta"]
        val = m * d * math.log(12 * math.sqrt(8 * k / (1 - delta)))
        gen = (m * d, 3.0, 2 * math.sqrt(k / (1 - delta)), unit_c)
        formula, ub = "md log(12 sqrt(8k / (1 - delta)))", False
    elif example == "l1":
        m, d, lam = p["m"], p["d"], p["lam"]
        val = m * d * max(math.log(3 * _SQRT8 * lam), 1.0)
        gen = (m * d, 3.0, lam / 2, unit_c)
        formula, ub = "md max(log(3 sqrt(8) lam), 1)", False
    elif example == "l1_squared":
        m, d, lam = p["m"], p["d"], p["lam"]
        val = m * d * max(math.log(12 * lam), 1.0)
        gen = (m * d, 3.0, lam / math.sqrt(2), unit_c)
        formula, ub = "md max(log(12 lam), 1)", False
    elif example == "sparse_chi_1":
        m, d, s, lam = p["m"], p["d"], p["s"], p["lam"]
        val = s * d * max(math.log(6 * _SQRT8 * lam) + math.log(m * math.e / s), 1.0)
        gen = (s * d, 3 * math.comb(m, s) ** (1 / s), lam, unit_c)
        formula, ub = "sd max(log(6 sqrt(8) lam) + log(me/s), 1)", True
    elif example == "sparse_chi_0":
        m, d, s, k, delta = p["m"], p["d"], p["s"], p["k"], p["delta"]
        val = s * d * (math.log(12 * math.sqrt(8 * k / (1 - delta))) + math.log(m * math.e / s))
        gen = (s * d, 3 * math.comb(m, s) ** (1 / s), 2 * math.sqrt(k / (1 - delta)), unit_c)
        formula, ub = "sd (log(12 sqrt(8k / (1 - delta))) + log(me/s))", True
    elif example == "nmf":
        m, d = p["m"], p["d"]
        val = m * d * math.log(12 * math.sqrt(8 * m * d))
        gen = (m * d, 3.0, 2 * math.sqrt(m * d), unit_c)
        formula, ub = "md log(12 sqrt(8md))", False
    elif example == "kmeans":
        m, K = p["m"], p["K"]
        val = m * K * math.log(12 * _SQRT8)
        gen = (m * K, 3.0, 2.0, unit_c)
        formula, ub = "mK log(12 sqrt(8))", False
    elif example == "hosvd":
        dims = [(int(a), int(b)) for a, b in p["dims"]]
        h = sum(_stiefel_h(a, b) for a, b in dims)
        dprod = math.prod(b for _, b in dims)
        val = h * math.log(12 * PI_E_PI * math.sqrt(8 * dprod))
        gen = (h, 3 * PI_E_PI, 2 * math.sqrt(dprod), unit_c)
        formula, ub = "sum(m_i d_i - d_i(d_i+1)/2) log(12 pi e^pi sqrt(8 prod d_i))", False
    elif example == "subgauss_l1_squared":
        m, d, lam, A = p["m"], p["d"], p["lam"], p["A"]
        val = m * d * max(math.log(lam / (2 * math.sqrt(2) * A)), 1.0)
        gen = (m * d, 3.0, lam / math.sqrt(2), 12 * A)
        formula, ub = "md max(log(lam / (2 sqrt(2) A)), 1)", False
    else:
        raise RefusalError(f"unknown worked example {example!r}; known: {', '.join(EXAMPLES)}")
    h, C, L, c = gen
    return WorkedExample(example, val, beta(h, C, L, c), h, C, L, c, ub, formula, dict(p))


def examples_table(m: int = 10, d: int = 5, K: int = 5, k: int = 2, delta: float = 0.5, lam: float = 1.0,
                   p: float = 1.0, s: int = 2, A: float = 1.0, dims: Sequence[tuple[int, int]] = ((4, 2), (4, 2))) -> list[WorkedExample]:
    """Every worked example at one parameter setting."""
    args = {
        "pca": dict(m=m, d=d), "pca_subgauss": dict(m=m, d=d, A=A), "chi_p": dict(m=m, d=d, lam=lam, p=p),
        "chi_0": dict(m=m, d=d, k=k, delta=delta), "l1": dict(m=m, d=d, lam=lam), "l1_squared": dict(m=m, d=d, lam=lam),
        "sparse_chi_1": dict(m=m, d=d, s=s, lam=lam), "sparse_chi_0": dict(m=m, d=d, s=s, k=k, delta=delta),
        "nmf": dict(m=m, d=d), "kmeans": dict(m=m, K=K), "hosvd": dict(dims=[list(t) for t in dims]),
        "subgauss_l1_squared": dict(m=m, d=d, lam=lam, A=A),
    }
    return [worked_example_beta(name, **args[name]) for name in EXAMPLES]


# assembled report ---------------------------------------------------------

@dataclass
class BoundRow:
    n: int
    x: float
    eta: float
    sample_size_ok: bool
    x_max: float
    valid: bool


@dataclass
class BoundReport:
    scenario_id: str
    regime: str
    kappa: float | None
    L: float
    L_method: str
    gamma_zero: bool
    c: float
    T: float
    A: float | None
    h: float
    C: float
    beta: float
    flavor: str
    dconst: float
    x: float
    failure_probability: str
    rows: list[BoundRow]
    notes: list[str]

    def eta_at(self, n: int) -> float:
        return eta_n(n, self.x, self.beta, self.c, self.flavor)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "bound_report",
            "scenario_id": self.scenario_id,
            "regime": self.regime,
            "kappa": _json_float(self.kappa),
            "L": self.L,
            "L_method": self.L_method,
            "gamma_zero": self.gamma_zero,
            "c": self.c,
            "T": _json_float(self.T),
            "A": _json_float(self.A),
            "h": self.h,
            "C": self.C,
            "beta": self.beta,
            "flavor": self.flavor,
            "dconst": self.dconst,
            "x": self.x,
            "failure_probability": self.failure_probability,
            "rows": [
                {"n": r.n, "x": r.x, "eta": r.eta, "sample_size_ok": r.sample_size_ok,
                 "x_max": _json_float(r.x_max), "valid": r.valid}
                for r in self.rows
            ],
            "notes": list(self.notes),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "x", "eta", "sample_size_ok", "x_max", "valid"])
        for r in self.rows:
            w.writerow([r.n, repr(r.x), repr(r.eta), int(r.sample_size_ok), "inf" if math.isinf(r.x_max) else repr(r.x_max), int(r.valid)])
        return buf.getvalue()


def scenario_regime(cls: dc.DictionaryClassSpec, penalty: PenaltySpec) -> Regime:
    """Regime implied by the penalty; regime B takes its kappa from the class."""
    if penalty.d != cls.d:
        raise ConfigurationError(f"penalty acts on {penalty.d} coefficients but the class has {cls.d} atoms")
    if penalty.is_regime_a:
        return Regime.a()
    return Regime.b(dc.kappa_of(cls, penalty))


def bound_flavor(cls: dc.DictionaryClassSpec, penalty: PenaltySpec, regime: Regime) -> tuple[str, float]:
    """``(flavor, dconst)``: globally Lipschitz scenarios get ``2c`` and dconst 1."""
    if regime.tag == "A" or cls.is_convex:
        return TWO_C, 1.0
    return THREE_C, max(1.0 / regime.kappa, 1.0)


def assemble(
    cls: dc.DictionaryClassSpec,
    penalty: PenaltySpec,
    dist: dist_mod.DistributionSpec,
    n_grid: Sequence[int],
    x: float = DEFAULT_X,
    rng: np.random.Generator | None = None,
    scenario_id: str = "",
    quantile_target: float = 0.999,
) -> BoundReport:
    """Combine class, penalty and distribution constants into the eta_n curve."""
    if dist.m != cls.m:
        raise ConfigurationError(f"distribution lives in R^{dist.m} but dictionaries have {cls.m} rows")
    if x < 0:
        raise ConfigurationError("x must be >= 0")
    n_grid = [int(n) for n in n_grid]
    if any(n < 2 for n in n_grid) or any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ConfigurationError("n_grid must be strictly increasing integers >= 2")
    regime = scenario_regime(cls, penalty)
    if penalty.variant == KMEANS and cls.variant not in (dc.BALL, dc.UNIT_NORM):
        raise ConfigurationError("the K-means Lipschitz bound needs atoms in the unit ball (ball or unit_norm class)")
    h, C = dc.covering_constants(cls)
    conc = dist_mod.concentration_params(dist)
    Lest = dist_mod.lipschitz_L(dist, penalty, regime, quantile_target, rng)
    b = beta(h, C, Lest.value, conc.c)
    flavor, dconst = bound_flavor(cls, penalty, regime)
    rows = []
    for n in n_grid:
        ok = sample_size_ok(n, b, conc.T, conc.c, Lest.value, dconst)
        xm = x_max(n, b, conc.T)
        rows.append(BoundRow(n, float(x), eta_n(n, x, b, conc.c, flavor), ok, xm, ok and x <= xm))
    gamma = "0" if Lest.gamma_zero else "P(L_X > L) (not computed)"
    notes = [f"L: {Lest.method}", "the deviation bound holds except with probability Gamma_n(L) + 2 exp(-x)"]
    if not dist.bounded:
        notes.append(dist_mod.FACTOR_NOTE)
    if penalty.variant == KMEANS:
        notes.append("K-means weight ||x|| + 1 assumes atoms in the unit ball")
    return BoundReport(
        scenario_id=scenario_id, regime=regime.tag, kappa=regime.kappa, L=Lest.value, L_method=Lest.method,
        gamma_zero=Lest.gamma_zero, c=conc.c, T=conc.T, A=conc.A, h=float(h), C=float(C), beta=b, flavor=flavor,
        dconst=dconst, x=float(x), failure_probability=f"{gamma} + 2 exp(-{x!r}) = {2 * math.exp(-x)!r}" if Lest.gamma_zero else f"{gamma} + 2 exp(-{x!r})",
        rows=rows, notes=notes,
    )
