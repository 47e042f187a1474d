"""Command-line front end: ``fisherlab <subcommand> ...``.

Exit codes: 0 success, 1 validation failure, 2 numeric failure, 64 usage
error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bump import smoothness_audit
from .diagnostics import (
    DomainTooSmallError,
    PreconditionError,
    SupportMismatchError,
    divergence,
    export_csv,
    grid_from_potential,
    holley_stroock_bound,
    muckenhoupt_B,
)
from .experiments import (
    ConfigError,
    csv_text,
    fano_bound,
    load_config,
    optimal_embed_dim,
    packing_count_bound,
    run_equivalence_demo,
    run_equivalence_sweep,
    run_identification_game,
    run_scaling_study,
    write_csv,
    write_game_csv,
    write_scaling_csv,
    write_sidecar,
)
from .instance import (
    DEFAULT_C_PI,
    DEFAULT_C_R,
    EpsilonTooLargeError,
    QuadratureError,
    SchemaError,
    instance_from_radius,
    load_instance,
    packing_is_valid,
    serialize_instance,
    solve_instance,
)
from .oracle import BudgetExhausted, CountingOracle, pi_init_oracle
from .samplers import (
    EnvelopeError,
    EnvelopeViolation,
    averaged_lmc_batch,
    exact_target_sample,
    grid_envelope,
    rejection_sample,
)

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2, 64

VALIDATION_ERRORS = (ConfigError, SchemaError, EpsilonTooLargeError, SupportMismatchError,
                     PreconditionError, EnvelopeError, BudgetExhausted, FileNotFoundError)
NUMERIC_ERRORS = (QuadratureError, DomainTooSmallError, EnvelopeViolation, FloatingPointError,
                  ArithmeticError, RuntimeError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Parser whose usage errors exit with code 64."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(obj, out=None):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _cmd_solve(args):
    if args.R is not None:
        inst = instance_from_radius(args.d, args.R)
    elif args.eps is not None:
        inst = solve_instance(args.d, args.eps, args.c_pi, args.c_R)
    else:
        raise ConfigError("solve-instance needs --eps or --R")
    serialize_instance(inst, args.out)
    print(f"d={inst.d} r={inst.r:.10g} R={inst.R:.10g} M={inst.M} -> {args.out}")
    return EXIT_OK


def audit_instance(inst, pairs: int = 2000, seed: int = 0) -> dict:
    """Half-mass residual, packing validity and a 1-smoothness audit."""
    rng = np.random.default_rng(seed)
    scale = inst.R + 2 * inst.r
    X = rng.uniform(-scale, scale, size=(pairs, inst.d))
    Y = X + rng.normal(scale=0.5, size=X.shape)
    report = smoothness_audit(inst.potential(), zip(X, Y), 1.0)
    residual = inst.equation_residual()
    return {
        "d": inst.d, "r": inst.r, "R": inst.R, "M": inst.M,
        "equation_residual": residual,
        "packing_valid": bool(packing_is_valid(inst.centers, inst.r, inst.R)),
        "max_gradient_ratio": report.max_ratio,
        "smoothness_passed": report.passed,
        "bump_mass": inst.bump_mass(),
        "passed": bool(residual <= 1e-6 and report.passed
                       and packing_is_valid(inst.centers, inst.r, inst.R)),
    }


def _cmd_audit(args):
    rep = audit_instance(load_instance(args.instance), args.pairs, args.seed)
    _emit(rep, args.out)
    return EXIT_OK if rep["passed"] else EXIT_INVALID


def _cmd_sample(args):
    inst = load_instance(args.instance)
    if args.omega is not None:
        inst = inst.with_omega(args.omega)
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    oracle = CountingOracle(inst.potential())
    if args.method == "exact":
        X = exact_target_sample(inst, rng, args.n)
        queries = np.zeros(args.n, dtype=np.int64)
    elif args.method == "averaged_lmc":
        X, queries = averaged_lmc_batch(oracle, pi_init_oracle(inst.d, inst.R), args.h, args.N,
                                        rng, args.n)
    else:
        env = grid_envelope(oracle, inst.d, inst.R)
        pts, queries = [], []
        for _ in range(args.n):
            before = oracle.count
            x, _, _ = rejection_sample(oracle, env, args.max_iter, rng)
            pts.append(x)
            queries.append(oracle.count - before)
        X, queries = np.array(pts), np.array(queries)
    header = tuple(f"x{i}" for i in range(inst.d)) + ("queries",)
    rows = [tuple(x) + (int(q),) for x, q in zip(X, queries)]
    if args.out:
        write_csv(args.out, header, rows)
    else:
        sys.stdout.write(csv_text(header, rows))
    return EXIT_OK


def _cmd_diagnose(args):
    inst = load_instance(args.instance)
    if inst.d != 1:
        raise ConfigError("diagnose works on one-dimensional instances")
    lo, hi = -(inst.R + 12), inst.R + 12
    pi = grid_from_potential(inst.potential(), lo, hi, args.grid)
    pinit = grid_from_potential(inst.init_potential(), lo, hi, args.grid)
    B = muckenhoupt_B(pi)
    rep = {
        "muckenhoupt_B": B,
        "cpi_upper": 4 * B,
        "holley_stroock": holley_stroock_bound(2 * DEFAULT_C_PI * inst.R**2, inst.log_peak),
        "kl_init_to_target": divergence(pinit, pi, "KL"),
        "tv_init_to_target": divergence(pinit, pi, "TV"),
        "bump_mass": inst.bump_mass(),
    }
    if args.density_csv:
        export_csv(pi, args.density_csv)
    _emit(rep, args.out)
    return EXIT_OK


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, output=args.out)
    if args.timing:
        cfg = replace(cfg, timing=True)
    if not cfg.output:
        raise ConfigError("no output path: set 'output' in the config or pass --out")
    return cfg


def _cmd_game(args):
    cfg = _load(args)
    res = run_identification_game(cfg)
    write_game_csv(cfg.output, res.records)
    write_sidecar(cfg.output, cfg, res.summary)
    print(f"{res.strategy}: success {res.success_rate:.4f} "
          f"(95% CI {res.ci[0]:.4f}..{res.ci[1]:.4f}), mean queries {res.mean_queries:.2f}")
    return EXIT_OK


def _cmd_equivalence(args):
    cfg = _load(args)
    rep = run_equivalence_demo(cfg)
    eps_values = cfg.params.get("sweep_eps")
    summary = rep.to_dict()
    if eps_values:
        table, slope = run_equivalence_sweep(eps_values, trials=int(cfg.params.get(
            "sweep_trials", 400)), seed=cfg.seed)
        summary["sweep_slope"] = slope
    else:
        table = [(rep.eps, rep.direction2_fraction, rep.direction2_stderr)]
    write_scaling_csv(cfg.output, table)
    write_sidecar(cfg.output, cfg, summary)
    ok1 = rep.direction1_fi <= rep.direction1_bound
    ok2 = rep.direction2_fraction >= 0.5 - 3 * rep.direction2_stderr
    print(f"direction 1: FI {rep.direction1_fi:.6g} <= {rep.direction1_bound:.6g}: {ok1}")
    print(f"direction 2: stationary fraction {rep.direction2_fraction:.4f}: {ok2}")
    return EXIT_OK if ok1 and ok2 else EXIT_INVALID


def _cmd_scaling(args):
    cfg = _load(args)
    res = run_scaling_study(cfg)
    write_scaling_csv(cfg.output, res.table)
    summary = dict(res.summary, slope=res.slope, intercept=res.intercept,
                   r_squared=res.r_squared)
    write_sidecar(cfg.output, cfg, summary)
    print(f"{res.kind}: slope {res.slope:.6g}, R^2 {res.r_squared:.6g}")
    return EXIT_OK


def _cmd_bounds(args):
    chosen = [args.fano, args.packing, args.embed_dim]
    if sum(chosen) != 1:
        raise UsageError("choose exactly one of --fano, --packing, --embed-dim")
    if args.fano:
        if args.M is None or args.N is None:
            raise UsageError("--fano needs --M and --N")
        value = fano_bound(args.M, args.N)
    elif args.packing:
        if args.d is None or args.eps is None:
            raise UsageError("--packing needs --d and --eps")
        value = packing_count_bound(args.d, args.eps, args.c)
    else:
        if args.eps is None:
            raise UsageError("--embed-dim needs --eps")
        value = optimal_embed_dim(args.eps)
    print(value if isinstance(value, int) else f"{value:.12g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fisherlab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve-instance", help="solve (r, R) and build the packing")
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--eps", type=float)
    s.add_argument("--R", type=float)
    s.add_argument("--c-pi", dest="c_pi", type=float, default=DEFAULT_C_PI)
    s.add_argument("--c-R", dest="c_R", type=float, default=DEFAULT_C_R)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_solve)

    s = sub.add_parser("audit-instance", help="check an instance file")
    s.add_argument("instance")
    s.add_argument("--pairs", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=_cmd_audit)

    s = sub.add_parser("sample", help="draw samples from an instance")
    s.add_argument("instance")
    s.add_argument("--method", choices=("exact", "averaged_lmc", "rejection_grid"),
                   default="averaged_lmc")
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--h", type=float, default=0.5)
    s.add_argument("--N", type=int, default=100)
    s.add_argument("--max-iter", dest="max_iter", type=int, default=1000)
    s.add_argument("--omega", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=_cmd_sample)

    s = sub.add_parser("diagnose", help="grid diagnostics of a 1-D instance")
    s.add_argument("instance")
    s.add_argument("--grid", type=int, default=8192)
    s.add_argument("--density-csv", dest="density_csv")
    s.add_argument("--out")
    s.set_defaults(func=_cmd_diagnose)

    for name, func, text in (("game", _cmd_game, "identification game"),
                             ("equivalence", _cmd_equivalence, "optimization/sampling demo"),
                             ("scaling", _cmd_scaling, "scaling study")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", required=True)
        s.add_argument("--out")
        s.add_argument("--seed", type=int)
        s.add_argument("--timing", action="store_true", help="record wall time per trial")
        s.set_defaults(func=func)

    s = sub.add_parser("bounds", help="evaluate lower-bound formulas")
    s.add_argument("--fano", action="store_true")
    s.add_argument("--packing", action="store_true")
    s.add_argument("--embed-dim", dest="embed_dim", action="store_true")
    s.add_argument("--M", type=int)
    s.add_argument("--N", type=float)
    s.add_argument("--d", type=int)
    s.add_argument("--eps", type=float)
    s.add_argument("--c", type=float, default=1.0)
    s.set_defaults(func=_cmd_bounds)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with np.errstate(over="raise", invalid="raise", divide="ignore", under="ignore"):
            return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"fisherlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except VALIDATION_ERRORS as exc:
        print(f"fisherlab: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NUMERIC_ERRORS as exc:
        print(f"fisherlab: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"fisherlab: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


def cli_dispatch(argv) -> int:
    """Run the CLI and return its exit code (usage errors included)."""
    try:
        return main(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
