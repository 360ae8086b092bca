"""Experiment harness and command line interface.

Subcommands:
  solve <config.json>    run the solver, write history/result/certificate/report files
  check <result.json>    recompute optimality and regularity reports from a result
  kr-norm <measure.json> evaluate the norm of a measure, print value and witness
  certify <result.json>  dump certificate grids (q and Psi) to CSV
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .agcg import ActiveSet, SolveResult, SolverConfig, run
from .certificate import (
    DualCertificate,
    MaximizerSettings,
    QuadraticFidelity,
    build_certificate,
)
from .diagnostics import check_first_order, check_linear_assumptions, fit_tail_rate, InsufficientDataError
from .kr_oracle import kr_norm
from .measures import (
    DiscreteMeasure,
    Domain,
    KRParams,
    atom_from_json,
    atom_to_json,
)
from .operators import GaussianFieldOperator, GaussianSensorOperator

CONFIG_VERSION = 1
_FLOAT_FMT = ".17g"


class ConfigError(ValueError):
    """Configuration problem, with the offending field in the message."""


def _require(obj: dict, key: str, context: str):
    if key not in obj:
        raise ConfigError(f"{context}: missing field {key!r}")
    return obj[key]


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative description of one solver run."""

    domain: dict
    operator: dict
    kr: dict
    gamma: float
    reference_measure: list
    data: dict
    solver: dict = field(default_factory=dict)
    output_dir: str | None = None
    version: int = CONFIG_VERSION

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config: expected a JSON object")
        version = obj.get("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"config.version: unsupported version {version}")
        return cls(
            domain=_require(obj, "domain", "config"),
            operator=_require(obj, "operator", "config"),
            kr=_require(obj, "kr", "config"),
            gamma=float(_require(obj, "gamma", "config")),
            reference_measure=obj.get("reference_measure", []),
            data=_require(obj, "data", "config"),
            solver=obj.get("solver", {}),
            output_dir=obj.get("output_dir"),
            version=version,
        )

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_json_obj(json.load(fh))

    def to_json_obj(self) -> dict:
        return asdict(self)


def _build_domain(cfg: dict) -> Domain:
    try:
        return Domain(lower=tuple(_require(cfg, "lower", "domain")),
                      upper=tuple(_require(cfg, "upper", "domain")))
    except ValueError as exc:
        raise ConfigError(f"domain: {exc}") from exc


def _build_operator(cfg: dict, domain: Domain):
    kind = _require(cfg, "type", "operator")
    T = float(_require(cfg, "T", "operator"))
    if kind == "gauss_sensors":
        spec = _require(cfg, "sensors", "operator")
        try:
            if "locations" in spec:
                return GaussianSensorOperator(T, np.asarray(spec["locations"], dtype=float), domain)
            count = int(_require(spec, "count", "operator.sensors"))
            layout = spec.get("layout", "even")
            if layout != "even":
                raise ConfigError(f"operator.sensors.layout: unknown layout {layout!r}")
            return GaussianSensorOperator.evenly_spaced(T, count, domain)
        except ValueError as exc:
            raise ConfigError(f"operator: {exc}") from exc
    if kind == "gauss_field":
        try:
            return GaussianFieldOperator(T, domain, int(cfg.get("grid", 2001)))
        except ValueError as exc:
            raise ConfigError(f"operator: {exc}") from exc
    raise ConfigError(f"operator.type: unknown type {kind!r}")


def _build_params(cfg: dict) -> KRParams:
    try:
        return KRParams(
            alpha=float(_require(cfg, "alpha", "kr")),
            beta=float(_require(cfg, "beta", "kr")),
            p=float(cfg.get("p", 1.0)),
        )
    except ValueError as exc:
        raise ConfigError(f"kr: {exc}") from exc


_DATA_FUNCTIONS = {
    "sinusoid": lambda x, prm: float(prm.get("amplitude", 1.0))
    * np.sin(float(prm.get("angular_frequency", 1.0)) * x)
    + float(prm.get("offset", 0.0)),
}


def _synthesize_data(cfg: dict, op, domain: Domain) -> np.ndarray:
    kind = _require(cfg, "kind", "data")
    if kind == "forward_of":
        measure = DiscreteMeasure.from_json_obj(_require(cfg, "measure", "data"))
        if not domain.contains(measure.locations, tol=1e-12):
            raise ConfigError("data.measure: atoms must lie inside the domain")
        return op.apply(measure)
    if kind == "vector":
        values = np.asarray(_require(cfg, "values", "data"), dtype=float)
        if values.shape != (op.y_dim,):
            raise ConfigError(
                f"data.values: length {values.shape[0]} does not match the "
                f"operator's {op.y_dim} measurement(s)"
            )
        return values
    if kind == "function":
        if op.kind != "field":
            raise ConfigError("data.kind: 'function' data requires a field operator")
        name = _require(cfg, "name", "data")
        fn = _DATA_FUNCTIONS.get(name)
        if fn is None:
            raise ConfigError(f"data.name: unknown function {name!r}")
        nodes = op._grid[:, 0]
        return fn(nodes, cfg.get("params", {}))
    raise ConfigError(f"data.kind: unknown kind {kind!r}")


def _build_solver_config(cfg: dict, params: KRParams) -> SolverConfig:
    maximizer = MaximizerSettings(**cfg.get("maximizer", {}))
    keys = {
        "epsilon",
        "max_outer_iterations",
        "subproblem_tol",
        "subproblem_max_iter",
        "prune_threshold",
        "coalesce_radius",
        "seed",
    }
    unknown = set(cfg) - keys - {"maximizer"}
    if unknown:
        raise ConfigError(f"solver: unknown field(s) {sorted(unknown)}")
    kwargs = {k: cfg[k] for k in keys if k in cfg}
    try:
        return SolverConfig(kr=params, maximizer=maximizer, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"solver: {exc}") from exc


def build_problem(config: ExperimentConfig):
    """Materialize (operator, fidelity, solver_config, domain, mu_r) from a config."""
    domain = _build_domain(config.domain)
    op = _build_operator(config.operator, domain)
    params = _build_params(config.kr)
    if config.gamma <= 0:
        raise ConfigError(f"gamma: must be positive, got {config.gamma}")
    mu_r = DiscreteMeasure.from_json_obj(config.reference_measure)
    if not mu_r.is_empty and not domain.contains(mu_r.locations, tol=1e-12):
        raise ConfigError("reference_measure: atoms must lie inside the domain")
    y = _synthesize_data(config.data, op, domain)
    target = y - op.apply(mu_r) if not mu_r.is_empty else y.copy()
    fidelity = QuadraticFidelity(gamma=config.gamma, target=target)
    solver = _build_solver_config(dict(config.solver), params)
    return op, fidelity, solver, domain, mu_r, y


def _fmt(v: float) -> str:
    return format(float(v), _FLOAT_FMT)


def _write_history_csv(path: Path, history) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["k", "surrogate", "max_abs_q_over_alpha", "max_psi", "N_k", "inserted_kind", "r_hat", "time_s"]
        )
        for rec in history:
            writer.writerow(
                [
                    rec.k,
                    _fmt(rec.surrogate),
                    _fmt(rec.max_abs_q_over_alpha),
                    _fmt(rec.max_psi),
                    rec.n_atoms,
                    rec.inserted_kind,
                    _fmt(rec.r_hat),
                    _fmt(rec.time_s),
                ]
            )


def _write_certificate_grids(
    out_dir: Path, cert: DualCertificate, params: KRParams, domain: Domain,
    q_points: int = 1001, psi_points: int = 161,
) -> None:
    if domain.dim != 1:
        raise ConfigError("certificate grids are written for 1-d domains only")
    lo, hi = domain.lower[0], domain.upper[0]
    zs = np.linspace(lo, hi, q_points)
    qvals = cert.q_value(zs[:, None]) / params.alpha
    with open(out_dir / "q.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["z", "q_over_alpha"])
        for z, v in zip(zs, qvals):
            writer.writerow([_fmt(z), _fmt(v)])

    grid = np.linspace(lo, hi, psi_points)
    X, Y = np.meshgrid(grid, grid, indexing="ij")
    pairs_x = X.ravel()[:, None]
    pairs_y = Y.ravel()[:, None]
    psi = cert.psi_value(params, pairs_x, pairs_y)
    with open(out_dir / "psi.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "psi"])
        for x, y, v in zip(pairs_x[:, 0], pairs_y[:, 0], psi):
            writer.writerow([_fmt(x), _fmt(y), _fmt(v)])


def _result_json_obj(
    config: ExperimentConfig, result: SolveResult, op, fidelity: QuadraticFidelity, y: np.ndarray
) -> dict:
    atoms = [
        {**atom_to_json(atom), "weight": float(lam)}
        for atom, lam in zip(result.active_set.atoms, result.active_set.lambdas)
    ]
    obs_nodes = op.sensors[:, 0] if op.kind == "sensor" else op._grid[:, 0]
    return {
        "version": CONFIG_VERSION,
        "termination": result.termination,
        "iterations": result.iterations,
        "objective_surrogate": result.history[-1].surrogate,
        "atoms": atoms,
        "final_measure": result.measure.to_json_obj(),
        "observations": {
            "kind": op.kind,
            "nodes": [float(v) for v in obs_nodes],
            "K_mu": [float(v) for v in op.apply(result.measure)],
            "target": [float(v) for v in fidelity.target],
            "y": [float(v) for v in y],
        },
        "seed": result_seed(config),
        "config": config.to_json_obj(),
    }


def result_seed(config: ExperimentConfig) -> int:
    return int(config.solver.get("seed", 0))


def load_result(path: str | Path) -> tuple[ExperimentConfig, SolveResult, dict]:
    """Rebuild a (config, result) pair from a result.json file; history stays empty."""
    with open(path) as fh:
        obj = json.load(fh)
    config = ExperimentConfig.from_json_obj(obj["config"])
    atoms = [atom_from_json(a) for a in obj["atoms"]]
    lams = np.array([a["weight"] for a in obj["atoms"]], dtype=float)
    active = ActiveSet(atoms=atoms, lambdas=lams)
    measure = DiscreteMeasure.from_json_obj(obj["final_measure"])
    result = SolveResult(
        active_set=active, measure=measure, history=[], termination=obj["termination"]
    )
    return config, result, obj


def run_experiment(config: ExperimentConfig, out_dir: str | Path | None = None) -> int:
    """Solve the configured problem and write all artifacts; returns an exit status."""
    out = Path(out_dir if out_dir is not None else (config.output_dir or "out"))
    op, fidelity, solver, domain, mu_r, y = build_problem(config)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        print(f"error: output directory {out} is not writable: {exc}", file=sys.stderr)
        return 1

    result = run(solver, op, fidelity)

    _write_history_csv(out / "history.csv", result.history)
    cert = build_certificate(op, fidelity, result.measure)
    _write_certificate_grids(out, cert, solver.kr, domain)
    with open(out / "result.json", "w") as fh:
        json.dump(_result_json_obj(config, result, op, fidelity, y), fh, indent=1)

    check_tol = max(10 * solver.epsilon, 1e-12)
    first_order = check_first_order(
        result, op, fidelity, solver.kr, tol=check_tol, settings=solver.maximizer
    )
    assumptions = check_linear_assumptions(
        result, op, fidelity, solver.kr, settings=solver.maximizer
    )
    try:
        slope, r_sq = fit_tail_rate(result.history)
        rate = {"tail_slope": slope, "r_squared": r_sq}
    except InsufficientDataError as exc:
        rate = {"error": str(exc)}
    with open(out / "reports.json", "w") as fh:
        json.dump(
            {
                "first_order": first_order.to_json_obj(),
                "assumptions": assumptions.to_json_obj(),
                "rate": rate,
            },
            fh,
            indent=1,
        )

    ok = result.termination == "converged" and first_order.passed
    print(
        f"{result.termination} after {result.iterations} iterations, "
        f"{result.active_set.size} atoms, surrogate {result.history[-1].surrogate:.6f}, "
        f"first-order {'pass' if first_order.passed else 'FAIL'} (tol {check_tol:g}) -> {out}"
    )
    return 0 if ok else 1


def _cmd_solve(args) -> int:
    config = ExperimentConfig.load(args.config)
    solver = dict(config.solver)
    if args.seed is not None:
        solver["seed"] = args.seed
    if args.epsilon is not None:
        solver["epsilon"] = args.epsilon
    if args.max_iter is not None:
        solver["max_outer_iterations"] = args.max_iter
    config = replace(config, solver=solver)
    return run_experiment(config, out_dir=args.out)


def _cmd_check(args) -> int:
    config, result, _ = load_result(args.result)
    op, fidelity, solver, domain, mu_r, y = build_problem(config)
    tol = args.tol if args.tol is not None else max(10 * solver.epsilon, 1e-12)
    first_order = check_first_order(
        result, op, fidelity, solver.kr, tol=tol, settings=solver.maximizer
    )
    assumptions = check_linear_assumptions(
        result, op, fidelity, solver.kr, settings=solver.maximizer
    )
    json.dump(
        {"first_order": first_order.to_json_obj(), "assumptions": assumptions.to_json_obj()},
        sys.stdout,
        indent=1,
    )
    print()
    return 0 if first_order.passed else 1


def _cmd_kr_norm(args) -> int:
    with open(args.measure) as fh:
        mu = DiscreteMeasure.from_json_obj(json.load(fh))
    params = KRParams(alpha=args.alpha, beta=args.beta, p=args.p)
    value, witness = kr_norm(mu, params)
    json.dump({"value": value, "witness": witness.to_json_obj()}, sys.stdout, indent=1)
    print()
    return 0


def _cmd_certify(args) -> int:
    config, result, _ = load_result(args.result)
    op, fidelity, solver, domain, mu_r, y = build_problem(config)
    out = Path(args.out) if args.out else Path(args.result).parent
    out.mkdir(parents=True, exist_ok=True)
    cert = build_certificate(op, fidelity, result.measure)
    _write_certificate_grids(out, cert, solver.kr, domain)
    print(f"wrote {out / 'q.csv'} and {out / 'psi.csv'}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="krsolve", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run an experiment from a config file")
    p_solve.add_argument("config")
    p_solve.add_argument("--out", default=None, help="output directory override")
    p_solve.add_argument("--seed", type=int, default=None)
    p_solve.add_argument("--epsilon", type=float, default=None)
    p_solve.add_argument("--max-iter", type=int, default=None)
    p_solve.set_defaults(fn=_cmd_solve)

    p_check = sub.add_parser("check", help="recompute reports from a result.json")
    p_check.add_argument("result")
    p_check.add_argument("--tol", type=float, default=None)
    p_check.set_defaults(fn=_cmd_check)

    p_norm = sub.add_parser("kr-norm", help="evaluate the norm of a measure file")
    p_norm.add_argument("measure")
    p_norm.add_argument("--alpha", type=float, required=True)
    p_norm.add_argument("--beta", type=float, required=True)
    p_norm.add_argument("--p", type=float, default=1.0)
    p_norm.set_defaults(fn=_cmd_kr_norm)

    p_cert = sub.add_parser("certify", help="dump certificate grids for a result.json")
    p_cert.add_argument("result")
    p_cert.add_argument("--out", default=None)
    p_cert.set_defaults(fn=_cmd_certify)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
