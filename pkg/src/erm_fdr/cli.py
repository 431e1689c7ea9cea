"""Command-line entry point: ``erm-fdr {solve,sweep,generr,verify}``.

Configuration files are flat ``key = value`` text with ``#`` comments.
Relative paths inside a config resolve against the config's directory.

Exit codes: 0 success, 1 configuration error, 2 inadmissible lambda,
3 generalization-error routes disagree, 4 property failure (verify).
"""

from __future__ import annotations

import argparse
import io
import json
import math
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Optional, Sequence

import numpy as np

from .divergence import DivergenceGenerator, parse_generator
from .generr import (
    AssumptionError,
    ROUTE_TOL,
    generalization_error_report,
    write_generr_csv,
)
from .learning import DataGeneratingLaw, StochasticAlgorithm, load_algorithm_csv, load_law_csv, load_loss_csv
from .model_space import LossTable, ModelSupport, load_support_csv
from .oracle import OracleTrace, brute_force_regularized
from .solver import (
    DEFAULT_TOL,
    InfeasibleLambdaError,
    InternalConsistencyError,
    NonseparableWarning,
    dual_value,
    feasibility,
    n_direction,
    n_monotone,
    normalization_derivative,
    normalization_derivative_fd,
    posterior,
    sweep,
    write_sweep_csv,
)

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_ROUTES, EXIT_PROPERTY = 0, 1, 2, 3, 4

CONFIG_KEYS = frozenset({
    "divergence", "lambda", "lambda_grid", "support_csv", "law_csv", "loss_csv",
    "algorithm", "algorithm_csv", "out", "tol",
})


class ConfigError(ValueError):
    pass


# -- configuration ---------------------------------------------------------

@dataclass
class Config:
    values: dict[str, str]
    base: Path

    def get(self, key: str, default: Optional[str] = None) -> Optional[str]:
        return self.values.get(key, default)

    def require(self, key: str) -> str:
        if key not in self.values:
            raise ConfigError(f"missing required key {key!r}")
        return self.values[key]

    def path(self, key: str, required: bool = True) -> Optional[Path]:
        raw = self.require(key) if required else self.get(key)
        if raw is None:
            return None
        p = Path(raw)
        return p if p.is_absolute() else self.base / p

    def number(self, key: str, default: Optional[float] = None) -> float:
        raw = self.get(key)
        if raw is None:
            if default is None:
                raise ConfigError(f"missing required key {key!r}")
            return default
        try:
            v = float(raw)
        except ValueError:
            raise ConfigError(f"{key} = {raw!r} is not a number") from None
        if not math.isfinite(v):
            raise ConfigError(f"{key} must be finite")
        return v

    def generator(self) -> DivergenceGenerator:
        try:
            return parse_generator(self.require("divergence"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def parse_config(text: str, base: Path = Path(".")) -> Config:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
            value = value[1:-1]
        if not value:
            raise ConfigError(f"line {lineno}: empty value for {key!r}")
        values[key] = value
    return Config(values, base)


def load_config(path: str | Path) -> Config:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path.parent)


def parse_lambda_grid(spec: str) -> np.ndarray:
    """``start:stop:count`` -> ``count`` log-spaced values, both ends included."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise ConfigError(f"lambda_grid {spec!r} must be start:stop:count")
    try:
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ConfigError(f"lambda_grid {spec!r} has a malformed field") from None
    if count < 1:
        raise ConfigError("lambda_grid count must be >= 1")
    if not (0 < start <= stop and math.isfinite(stop)):
        raise ConfigError("lambda_grid needs 0 < start <= stop")
    return np.geomspace(start, stop, count)


def _open_out(cfg: Config, override: Optional[str]):
    target = override if override is not None else cfg.get("out")
    if target is None or target == "-":
        return _Borrowed(sys.stdout)
    p = Path(target)
    if override is None and not p.is_absolute():
        p = cfg.base / p
    return open(p, "w", encoding="utf-8", newline="")


class _Borrowed:
    """Context manager that leaves an already-open stream open."""

    def __init__(self, stream):
        self.stream = stream

    def __enter__(self):
        return self.stream

    def __exit__(self, *exc):
        self.stream.flush()
        return False


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.17g}"


def _load_support(cfg: Config, require_loss: bool):
    try:
        return load_support_csv(cfg.path("support_csv"), require_loss=require_loss)
    except (OSError, KeyError) as exc:
        raise ConfigError(f"support_csv: {exc}") from None


# -- subcommands -----------------------------------------------------------

def run_solve(cfg: Config, out: Optional[str] = None, oracle_trace: Optional[str] = None) -> int:
    gen = cfg.generator()
    lam = cfg.number("lambda")
    tol = cfg.number("tol", DEFAULT_TOL)
    support, loss = _load_support(cfg, require_loss=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonseparableWarning)
        post = posterior(lam, gen, support, loss, tol)
    dual = dual_value(post, gen, support, loss)
    with _open_out(cfg, out) as fh:
        fh.write("atom_id,q,loss,rnd,weight\n")
        for a, q, l, r, w in zip(support.atoms, support.weights, loss.values, post.rnd, post.weights):
            fh.write(f"{a},{_fmt(q)},{_fmt(l)},{_fmt(r)},{_fmt(w)}\n")
        fh.write("N,risk,divergence,eta,primal,dual,gap\n")
        fh.write(",".join(_fmt(v) for v in (post.n_of_lambda, post.risk, post.divergence, post.eta,
                                             post.primal, dual, abs(post.primal - dual))) + "\n")
    if oracle_trace is not None:
        if len(support) > 12:
            raise ConfigError("oracle trace needs at most 12 atoms")
        trace = OracleTrace(reference=post.weights)
        brute_force_regularized(support, loss, gen, lam, trace=trace)
        with open(oracle_trace, "w", encoding="utf-8", newline="") as fh:
            trace.write_csv(fh)
    return EXIT_OK


def run_sweep(cfg: Config, out: Optional[str] = None) -> int:
    gen = cfg.generator()
    grid = parse_lambda_grid(cfg.require("lambda_grid"))
    tol = cfg.number("tol", DEFAULT_TOL)
    support, loss = _load_support(cfg, require_loss=True)
    records = sweep(grid, gen, support, loss, tol)
    with _open_out(cfg, out) as fh:
        write_sweep_csv(records, fh)
        fh.write(f"# N_monotone={'true' if n_monotone(records) else 'false'}\n")
        fh.write(f"# N_direction={n_direction(records)}\n")
    return EXIT_OK


def run_generr(cfg: Config, out: Optional[str] = None) -> int:
    gen = cfg.generator()
    lam = cfg.number("lambda")
    support, _ = _load_support(cfg, require_loss=False)
    try:
        law = load_law_csv(cfg.path("law_csv"))
        tables = load_loss_csv(cfg.path("loss_csv"), support, law)
    except (OSError, KeyError) as exc:
        raise ConfigError(str(exc)) from None
    algorithm = cfg.get("algorithm")
    alg_csv = cfg.path("algorithm_csv", required=False)
    if (algorithm is None) == (alg_csv is None):
        raise ConfigError("set exactly one of algorithm = fdr or algorithm_csv")
    if algorithm is not None and algorithm != "fdr":
        raise ConfigError(f"algorithm must be 'fdr', got {algorithm!r}")
    alg = None
    if alg_csv is not None:
        try:
            alg = load_algorithm_csv(alg_csv, support)
        except OSError as exc:
            raise ConfigError(str(exc)) from None
        missing = [z for z in law.ids if z not in alg.conditionals]
        if missing:
            raise ConfigError(f"algorithm_csv has no conditional for datasets {missing}")
    try:
        report = generalization_error_report(lam, gen, law, support, tables, alg)
    except AssumptionError as exc:
        raise ConfigError(str(exc)) from None
    except InternalConsistencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ROUTES
    with _open_out(cfg, out) as fh:
        write_generr_csv(report, fh)
    if not report.consistent:
        print(f"error: routes disagree (spread {report.spread:.3e} > {ROUTE_TOL:g})", file=sys.stderr)
        return EXIT_ROUTES
    return EXIT_OK


# -- randomized property harness -------------------------------------------

GENERATOR_POOL = ("kl", "reverse_kl", "chi_squared", "hellinger_sq",
                  "alpha:0.5", "alpha:2", "alpha:-1", "alpha:3")

DEFAULT_THRESHOLDS = {
    "fenchel": 1e-9,
    "duality_gap": 1e-8,
    "dual_root_agreement": 1e-9,
    "oracle_tv": 1e-4,
    "sensitivity": 1e-4,
    "route_agreement": ROUTE_TOL,
}


@dataclass
class Instance:
    """Fully explicit verify instance; replay needs nothing else."""

    index: int
    generator: str
    q: list[float]
    loss: list[float]
    lam: float
    fenchel_points: list[float]
    law: list[float]
    tables: list[list[float]]
    ge_lambda: float
    thresholds: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Instance":
        data = json.loads(text)
        return cls(**data)


def _admissible_lambda(gen, support, L, rng) -> float:
    lam_star = feasibility(1.0, gen, support, L).lambda_star
    if lam_star > 0:
        return float(lam_star * (1.5 + 3.0 * rng.random()))
    return float(math.exp(rng.uniform(-1.0, 1.5)))


def make_instance(seed: int, index: int, max_atoms: int, max_datasets: int) -> Instance:
    rng = np.random.default_rng([seed, index])
    key = GENERATOR_POOL[int(rng.integers(len(GENERATOR_POOL)))]
    gen = parse_generator(key)
    n = int(rng.integers(1, max_atoms + 1))
    q = rng.dirichlet(np.ones(n))
    q = q / q.sum()
    loss = rng.uniform(0.0, 1.0, n)
    support = ModelSupport.finite(q)
    lam = _admissible_lambda(gen, support, loss, rng)
    points = np.exp(rng.uniform(math.log(1e-3), math.log(1e3), 5))
    d = int(rng.integers(1, max_datasets + 1))
    law = rng.dirichlet(np.ones(d))
    law = law / math.fsum(law)
    tables = rng.uniform(0.0, 1.0, (d, n))
    ge_lam = max(_admissible_lambda(gen, support, t, rng) for t in tables)
    return Instance(index, key, q.tolist(), loss.tolist(), lam, points.tolist(),
                    law.tolist(), tables.tolist(), ge_lam)


def check_instance(inst: Instance) -> list[tuple[str, float, float, bool]]:
    """Run every property on one instance; returns (name, value, threshold, ok)."""
    gen = parse_generator(inst.generator)
    support = ModelSupport.finite(inst.q)
    L = np.asarray(inst.loss, dtype=float)
    th = {**DEFAULT_THRESHOLDS, **inst.thresholds}
    results = []

    def record(name, thunk):
        try:
            value = float(thunk())
            ok = value <= th[name]
        except Exception:  # noqa: BLE001 -- any failure is a property failure
            value, ok = math.nan, False
        results.append((name, value, th[name], ok))

    def fenchel():
        x = np.asarray(inst.fenchel_points)
        s = gen.fdot(x)
        lhs = gen.conjugate(s) + gen.f(x)
        return float(np.max(np.abs(lhs - x * s) / np.maximum(1.0, np.abs(x * s))))

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonseparableWarning)
        record("fenchel", fenchel)
        try:
            post = posterior(inst.lam, gen, support, L)
        except Exception:  # noqa: BLE001
            results.append(("posterior", math.nan, 0.0, False))
            return results
        record("duality_gap", lambda: abs(post.primal - dual_value(post, gen, support, L)))
        record("dual_root_agreement",
               lambda: 0.0 if post.diagnostics is None else post.diagnostics.agreement)
        if len(support) <= 12:
            record("oracle_tv", lambda: 0.5 * float(np.abs(
                brute_force_regularized(support, L, gen, inst.lam) - post.weights).sum()))

        def sensitivity():
            a = normalization_derivative(inst.lam, gen, support, L)
            b = normalization_derivative_fd(inst.lam, gen, support, L)
            return abs(a - b) / max(abs(b), 1e-4)
        record("sensitivity", sensitivity)

        def routes():
            law = DataGeneratingLaw(tuple(f"z{i}" for i in range(len(inst.law))), inst.law)
            tables = [LossTable(t) for t in inst.tables]
            return generalization_error_report(inst.ge_lambda, gen, law, support, tables).spread
        record("route_agreement", routes)
    return results


def _write_report_rows(inst: Instance, results, stream: IO[str]) -> int:
    failed = 0
    for name, value, threshold, ok in results:
        failed += not ok
        stream.write(f"{inst.index},{inst.generator},{len(inst.q)},{inst.lam:.6g},{name},"
                     f"{value:.3e},{threshold:g},{'PASS' if ok else 'FAIL'}\n")
    return failed


def run_verify(seed: int, instances: int, max_atoms: int, max_datasets: int,
               stream: IO[str], dump_dir: Optional[Path] = None,
               replay: Optional[Path] = None) -> int:
    if replay is not None:
        try:
            batch = [Instance.from_json(Path(replay).read_text(encoding="utf-8"))]
        except (OSError, ValueError, TypeError) as exc:
            raise ConfigError(f"cannot replay {replay}: {exc}") from None
        stream.write(f"# verify replay={Path(replay).name}\n")
    else:
        if instances < 1 or max_atoms < 1 or max_datasets < 1:
            raise ConfigError("instances, max_atoms and max_datasets must be >= 1")
        batch = [make_instance(seed, i, max_atoms, max_datasets) for i in range(instances)]
        stream.write(f"# verify seed={seed} instances={instances} max_atoms={max_atoms} "
                     f"max_datasets={max_datasets}\n")
    stream.write("instance,generator,atoms,lambda,property,value,threshold,status\n")
    passed = failed = 0
    for inst in batch:
        results = check_instance(inst)
        bad = _write_report_rows(inst, results, stream)
        failed += bad
        passed += len(results) - bad
        if bad:
            stream.write(f"# failing instance: {inst.to_json()}\n")
            if dump_dir is not None:
                dump_dir.mkdir(parents=True, exist_ok=True)
                (dump_dir / f"instance_{seed}_{inst.index}.json").write_text(
                    inst.to_json() + "\n", encoding="utf-8")
    stream.write(f"# passed={passed} failed={failed}\n")
    return EXIT_PROPERTY if failed else EXIT_OK


# -- entry point -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="erm-fdr",
                                     description="ERM with f-divergence regularization.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("solve", "posterior table and summary for one lambda"),
                       ("sweep", "normalization function over a lambda grid"),
                       ("generr", "generalization error by every available route")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config", help="flat key = value configuration file")
        p.add_argument("--out", help="output CSV path (overrides the config; '-' for stdout)")
        if name == "solve":
            p.add_argument("--oracle-trace", metavar="CSV",
                           help="also run the mirror-descent oracle and write its trace")
    v = sub.add_parser("verify", help="randomized property suite")
    v.add_argument("--seed", type=int, default=1)
    v.add_argument("--instances", type=int, default=25)
    v.add_argument("--max-atoms", type=int, default=6)
    v.add_argument("--max-datasets", type=int, default=3)
    v.add_argument("--out", help="report path (default stdout)")
    v.add_argument("--dump-dir", type=Path, help="write failing instances here as JSON")
    v.add_argument("--replay", type=Path, help="re-run one serialized instance")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            buf = io.StringIO()
            code = run_verify(args.seed, args.instances, args.max_atoms, args.max_datasets,
                              buf, args.dump_dir, args.replay)
            if args.out:
                Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
            else:
                sys.stdout.write(buf.getvalue())
            return code
        cfg = load_config(args.config)
        if args.command == "solve":
            return run_solve(cfg, args.out, args.oracle_trace)
        if args.command == "sweep":
            return run_sweep(cfg, args.out)
        return run_generr(cfg, args.out)
    except InfeasibleLambdaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
