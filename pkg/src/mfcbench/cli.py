"""Command-line front-end: ``mfc {bounds, examples, gbar, verify ...}``.

Exit status: 0 on success, 2 when a verification check fails, 1 on a
configuration error.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
from importlib import resources
from typing import Any, Sequence

import numpy as np

from . import __version__
from . import bound_calculus as bc
from . import dictionary_classes as dc
from . import distributions as ds
from . import verification as vf
from .errors import ConfigurationError, ContractError, RefusalError
from .penalties import PenaltySpec, Regime, gbar, gbar_oracle, lipschitz_weight

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 1, 2
SEED_ENV = "MFC_SEED"

CSV_HELP = """CSV columns by command:
  bounds                 n, x, eta, sample_size_ok, x_max, valid
  examples               name, beta, generic_beta, h, C, L, c, is_upper_bound, consistent, formula
  gbar                   t, gbar, lipschitz_weight, oracle
  verify lipschitz       pair, delta, dF, bound, slack, ratio, ok
  verify concentration   tau, threshold, frequency, bound, se, ok
  verify deviation       n, deviation, deviation_max, eta, valid, ok
  verify tail            t, threshold, frequency, bound, se, ok
  verify minimizer       iteration, F
"""


class ConfigError(Exception):
    """A malformed or inconsistent scenario, reported with its location."""


def load_schema(name: str) -> dict[str, Any]:
    return json.loads(resources.files("mfcbench").joinpath("schemas", f"{name}.schema.json").read_text())


def _line_of(text: str, path: Sequence[Any]) -> int | None:
    """Best-effort line number of the innermost object key on ``path``."""
    pos, found = 0, None
    for key in (p for p in path if isinstance(p, str)):
        m = re.compile(r'"%s"\s*:' % re.escape(key)).search(text, pos)
        if m is None:
            break
        pos = found = m.start()
    return None if found is None else text.count("\n", 0, found) + 1


def _where(source: str, text: str, path: Sequence[Any]) -> str:
    line = _line_of(text, path)
    loc = "/".join(str(p) for p in path) or "<root>"
    return f"{source}:{line}: at {loc}" if line else f"{source}: at {loc}"


def load_config(path: str | None) -> tuple[dict[str, Any], str, str]:
    """Parse and schema-check a scenario file; returns (config, raw text, source name)."""
    if path is None:
        return {}, "", "<defaults>"
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg} (column {exc.colno})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}:1: the scenario must be a JSON object")
    import jsonschema

    validator = jsonschema.Draft202012Validator(load_schema("scenario"))
    errors = sorted(validator.iter_errors(cfg), key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        err = errors[0]
        raise ConfigError(f"{_where(path, text, list(err.absolute_path))}: {err.message}")
    return cfg, text, path


class Scenario:
    """Resolved scenario components with error messages tied to config locations."""

    def __init__(self, cfg: dict[str, Any], text: str, source: str):
        self.cfg, self.text, self.source = cfg, text, source

    def _build(self, key: str, builder, default=None):
        if key not in self.cfg:
            if default is None:
                raise ConfigError(f"{self.source}: missing section {key!r}")
            return default
        try:
            return builder(self.cfg[key])
        except (ContractError, KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"{_where(self.source, self.text, [key])}: invalid {key}: {exc}") from exc

    def klass(self, default=None) -> dc.DictionaryClassSpec:
        return self._build("class", dc.DictionaryClassSpec.from_dict, default)

    def penalty(self, default=None) -> PenaltySpec:
        return self._build("penalty", PenaltySpec.from_dict, default)

    def distribution(self, default=None) -> ds.DistributionSpec:
        return self._build("distribution", ds.DistributionSpec.from_dict, default)

    def check(self, key: str, override, default):
        if override is not None:
            return override
        return self.cfg.get("check", {}).get(key, default)

    def matrix(self, key: str):
        val = self.cfg.get("check", {}).get(key)
        return None if val is None else np.asarray(val, dtype=float)

    def fail(self, key: str, exc: Exception) -> ConfigError:
        return ConfigError(f"{_where(self.source, self.text, [key] if key in self.cfg else [])}: {exc}")


def resolve_seed(flag: int | None, cfg: dict[str, Any]) -> int:
    """--seed, then the config's seed, then $MFC_SEED, then 0."""
    if flag is not None:
        seed = flag
    elif "seed" in cfg:
        seed = int(cfg["seed"])
    elif os.environ.get(SEED_ENV, "").strip():
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"${SEED_ENV}: not an integer: {os.environ[SEED_ENV]!r}") from exc
    else:
        seed = 0
    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2^64)")
    return v


def _dims(text: str) -> list[tuple[int, int]]:
    try:
        return [tuple(int(v) for v in part.lower().split("x")) for part in text.split(",")]  # type: ignore[misc]
    except ValueError as exc:
        raise argparse.ArgumentTypeError("dims look like 4x2,4x2") from exc


def _p_value(text: str) -> float:
    return math.inf if text.lower() in ("inf", "infinity") else float(text)


def emit(obj: dict[str, Any], csv_text: str, fmt: str, out: str | None) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n" if fmt == "json" else csv_text
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _rows_csv(rows: list[dict[str, Any]], cols: Sequence[str]) -> str:
    return vf.TrialReport("", 0, True, 0, details=[{c: r.get(c) for c in cols} for r in rows]).to_csv()


# default scenarios --------------------------------------------------------

DEFAULTS = {
    "lipschitz": lambda: (dc.DictionaryClassSpec.unit_norm(3, 4), PenaltySpec.kmeans(4), ds.DistributionSpec.sphere(3)),
    "concentration": lambda: (dc.DictionaryClassSpec.ball(3, 4), PenaltySpec.kmeans(4), ds.DistributionSpec.sphere(3)),
    "deviation": lambda: (dc.DictionaryClassSpec.ball(2, 3), PenaltySpec.kmeans(3), ds.DistributionSpec.sphere(2)),
    "minimizer": lambda: (dc.DictionaryClassSpec.ball(1, 2), PenaltySpec.kmeans(2), ds.DistributionSpec.sphere(1)),
}


def default_tail_distribution() -> ds.DistributionSpec:
    klass = dc.DictionaryClassSpec.unit_norm(8, 10)
    return ds.DistributionSpec.subgaussian_sparse(
        dc.sample(klass, np.random.default_rng(0)), 2, 1.0, 0.1, klass, {"class": klass.to_dict(), "seed": 0}
    )


def origin_atom_dictionary(cls: dc.DictionaryClassSpec, rng) -> np.ndarray:
    """A class sample whose first atom sits at the origin (keeps K-means costs within [0, R^2/2])."""
    D = dc.sample(cls, rng)
    D[:, 0] = 0.0
    return D


# commands -----------------------------------------------------------------

def cmd_bounds(args, sc: Scenario, seed: int) -> int:
    cls, pen, dist = sc.klass(), sc.penalty(), sc.distribution()
    n_grid = args.n_grid or sc.cfg.get("n_grid") or [2**i for i in range(7, 18)]
    x = args.x if args.x is not None else float(sc.cfg.get("x", bc.DEFAULT_X))
    try:
        report = bc.assemble(cls, pen, dist, n_grid, x, vf.trial_rng(seed, 0), scenario_id=args.scenario_id or sc.source)
    except (ConfigurationError, ContractError) as exc:
        raise sc.fail("penalty", exc) from exc
    emit(report.to_dict(), report.to_csv(), args.format, args.out)
    return EXIT_OK


def cmd_examples(args, sc: Scenario, seed: int) -> int:
    params = dict(m=args.m, d=args.d, K=args.K, k=args.k, delta=args.delta, lam=args.lam, p=args.p, s=args.s, A=args.A,
                  dims=args.dims)
    try:
        rows = bc.examples_table(**params)
    except (ContractError, ValueError) as exc:
        raise ConfigError(f"examples: {exc}") from exc
    obj = {"schema_version": bc.SCHEMA_VERSION, "kind": "examples",
           "params": vf._clean({**params, "dims": [list(t) for t in args.dims]}), "rows": [r.to_dict() for r in rows]}
    cols = ["name", "beta", "generic_beta", "h", "C", "L", "c", "is_upper_bound", "consistent", "formula"]
    emit(vf._clean(obj), _rows_csv(obj["rows"], cols), args.format, args.out)
    return EXIT_OK if all(r.consistent for r in rows) else EXIT_FAILED


def cmd_gbar(args, sc: Scenario, seed: int) -> int:
    if args.penalty:
        try:
            pen = PenaltySpec.from_dict(json.loads(args.penalty))
        except (json.JSONDecodeError, ContractError, KeyError, ValueError) as exc:
            raise ConfigError(f"--penalty: {exc}") from exc
    else:
        pen = sc.penalty()
    regime = None
    if not pen.is_regime_a:
        if args.kappa is not None:
            regime = Regime.b(args.kappa)
        elif "class" in sc.cfg:
            try:
                regime = Regime.b(dc.kappa_of(sc.klass(), pen))
            except ConfigurationError as exc:
                raise sc.fail("class", exc) from exc
        else:
            raise ConfigError(f"{pen.variant} needs --kappa or a class section supplying kappa")
    ts = args.t or sc.check("t", None, [0.0, 0.5, 1.0, 2.0])
    oracle = args.oracle or bool(sc.check("oracle", None, False))
    rows = []
    for t in ts:
        row = {"t": float(t), "gbar": gbar(pen, t, regime), "lipschitz_weight": lipschitz_weight(pen, t, regime)}
        if oracle:
            try:
                row["oracle"] = gbar_oracle(pen, t)
            except RefusalError as exc:
                raise ConfigError(f"--oracle: {exc}") from exc
        rows.append(row)
    obj = {"schema_version": bc.SCHEMA_VERSION, "kind": "gbar", "penalty": pen.to_dict(),
           "regime": {"tag": (regime or Regime.a()).tag, "kappa": regime.kappa if regime else None}, "rows": rows}
    emit(vf._clean(obj), _rows_csv(rows, ["t", "gbar", "lipschitz_weight", "oracle"]), args.format, args.out)
    return EXIT_OK


def cmd_verify(args, sc: Scenario, seed: int) -> int:
    check, jobs = args.check, args.jobs
    try:
        if check == "tail":
            dist = sc.distribution(default_tail_distribution())
            report = vf.check_tail(dist, sc.check("ts", args.ts, [1.0, 2.0, 4.0]), sc.check("trials", args.trials, 100_000), seed)
        else:
            cls0, pen0, dist0 = DEFAULTS[check]()
            cls, pen, dist = sc.klass(cls0), sc.penalty(pen0), sc.distribution(dist0)
            if check == "lipschitz":
                report = vf.check_lipschitz(cls, pen, dist, sc.check("n", args.n, 50), sc.check("pairs", args.pairs, 100), seed,
                                            jobs=jobs, ambient=sc.check("ambient", args.ambient or None, False))
            elif check == "concentration":
                D = sc.matrix("D_fixed")
                if D is None and pen.variant == "kmeans":
                    D = origin_atom_dictionary(cls, vf.trial_rng(seed, 99))
                report = vf.check_concentration(dist, cls, pen, D, sc.check("n", args.n, 100),
                                                sc.check("taus", args.taus, [0.1, 0.2, 0.4]),
                                                sc.check("trials", args.trials, 10_000), seed, jobs=jobs)
            elif check == "deviation":
                n_grid = args.n_grid or sc.cfg.get("n_grid") or [2**i for i in range(7, 14)]
                x = args.x if args.x is not None else float(sc.cfg.get("x", bc.DEFAULT_X))
                report = vf.check_deviation(cls, pen, dist, n_grid, sc.check("ensemble", args.ensemble, 200), x, seed,
                                            replicates=sc.check("replicates", args.replicates, 1), jobs=jobs)
            else:
                report = run_minimizer(args, sc, cls, pen, dist, seed)
    except (ConfigurationError, ContractError, RefusalError) as exc:
        raise ConfigError(f"{sc.source}: {exc}") from exc
    emit(report.to_dict(), report.to_csv(), args.format, args.out)
    return EXIT_OK if report.passed else EXIT_FAILED


def run_minimizer(args, sc: Scenario, cls, pen, dist, seed: int) -> vf.TrialReport:
    n = sc.check("n", args.n, 1000)
    X = ds.sample(dist, n, vf.trial_rng(seed, 0))
    res = vf.empirical_minimizer(cls, pen, X, sc.check("iters", args.iters, 100), sc.check("restarts", args.restarts, 5),
                                 seed=int(np.random.SeedSequence(seed, spawn_key=(1,)).generate_state(1)[0]))
    bound = bc.assemble(cls, pen, dist, [n], sc.cfg.get("x", bc.DEFAULT_X), vf.trial_rng(seed, 2), scenario_id="minimizer")
    inject = [np.asarray(M, dtype=float) for M in sc.cfg.get("check", {}).get("inject", [])]
    gap = vf.generalization_gap(res.D, cls, pen, dist, n, bound, seed, inject=inject)
    metrics = {"F_hat": res.value, "non_monotone_steps": res.non_monotone_steps, "restart": res.restart,
               "iterations": len(res.history) - 1, "D_hat": res.D.tolist(), **{f"gap_{k}": v for k, v in gap.metrics.items()}}
    return vf.TrialReport("minimizer", 1, gap.passed, seed, metrics,
                          [{"iteration": i, "F": F} for i, F in enumerate(res.history)], gap.notes)


# parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="scenario JSON (flags override its fields)")
    common.add_argument("--seed", type=_u64, metavar="U64", help=f"master seed (fallbacks: config 'seed', ${SEED_ENV}, 0)")
    common.add_argument("--out", metavar="PATH", help="write the report here instead of stdout")
    common.add_argument("--format", choices=("json", "csv"), default=None, help="report format (default json)")
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1, metavar="N",
                        help="worker threads for verification trials; results do not depend on N")

    parser = argparse.ArgumentParser(
        prog="mfc", description="Sample-complexity bounds for matrix factorization and their Monte Carlo checks.",
        epilog=CSV_HELP, formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bounds", parents=[common], help="assemble beta and the eta_n curve for a scenario",
                       epilog=CSV_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--n-grid", type=int, nargs="+", help="sample sizes (strictly increasing)")
    p.add_argument("--x", type=float, help="confidence parameter (default 3)")
    p.add_argument("--scenario-id", help="identifier recorded in the report")

    p = sub.add_parser("examples", parents=[common], help="closed-form beta of every worked example",
                       epilog=CSV_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--m", type=int, default=10)
    p.add_argument("--d", type=int, default=5)
    p.add_argument("--K", type=int, default=5)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--p", type=_p_value, default=1.0)
    p.add_argument("--s", type=int, default=2)
    p.add_argument("--A", type=float, default=1.0)
    p.add_argument("--dims", type=_dims, default=[(4, 2), (4, 2)], help="tensor factor shapes, e.g. 4x2,4x2")

    p = sub.add_parser("gbar", parents=[common], help="evaluate the l1 envelope of a penalty",
                       epilog=CSV_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--penalty", help="penalty JSON, e.g. '{\"variant\": \"lp_ball\", \"d\": 2, \"p\": 2, \"lambda\": 1}'")
    p.add_argument("--t", type=float, nargs="+", help="levels t >= 0")
    p.add_argument("--kappa", type=float, help="restricted-eigenvalue constant for indicator penalties")
    p.add_argument("--oracle", action="store_true", help="also report the grid oracle (d <= 4)")

    p = sub.add_parser("verify", help="Monte Carlo checks", epilog=CSV_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    vsub = p.add_subparsers(dest="check", required=True)
    for name, helptext in (
        ("lipschitz", "Lipschitz inequality on random dictionary pairs"),
        ("concentration", "Hoeffding-type concentration at a fixed dictionary"),
        ("deviation", "ensemble sup-deviation against eta_n"),
        ("tail", "norm tail of the sub-Gaussian sparse model"),
        ("minimizer", "alternating minimization and its generalization gap"),
    ):
        q = vsub.add_parser(name, parents=[common], help=helptext, epilog=CSV_HELP,
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        if name in ("lipschitz", "concentration", "minimizer"):
            q.add_argument("--n", type=int, help="training-set size")
        if name == "lipschitz":
            q.add_argument("--pairs", type=int, help="number of dictionary pairs (default 100)")
            q.add_argument("--ambient", action="store_true", help="perturb outside the class (coercive penalties)")
        if name == "concentration":
            q.add_argument("--taus", type=float, nargs="+")
        if name in ("concentration", "tail"):
            q.add_argument("--trials", type=int)
        if name == "tail":
            q.add_argument("--ts", type=float, nargs="+")
        if name == "deviation":
            q.add_argument("--n-grid", type=int, nargs="+")
            q.add_argument("--x", type=float)
            q.add_argument("--ensemble", type=int)
            q.add_argument("--replicates", type=int)
        if name == "minimizer":
            q.add_argument("--iters", type=int)
            q.add_argument("--restarts", type=int)
    return parser


def _fill_missing(args) -> None:
    for name in ("n", "pairs", "ambient", "taus", "trials", "ts", "n_grid", "x", "ensemble", "replicates", "iters", "restarts"):
        if not hasattr(args, name):
            setattr(args, name, None)


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _fill_missing(args)
    try:
        cfg, text, source = load_config(args.config)
        sc = Scenario(cfg, text, source)
        out_cfg = cfg.get("output", {})
        args.out = args.out or out_cfg.get("path")
        args.format = args.format or out_cfg.get("format", "json")
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        seed = resolve_seed(args.seed, cfg)
        handler = {"bounds": cmd_bounds, "examples": cmd_examples, "gbar": cmd_gbar, "verify": cmd_verify}[args.command]
        return handler(args, sc, seed)
    except ConfigError as exc:
        print(f"mfc: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(run())
