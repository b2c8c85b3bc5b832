"""Command-line entry point.

Exit status: 0 on success, 1 on a usage error (bad flag, id or value),
2 on a numerical failure or when results cannot be written.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bilevel import NumericalFailure
from .harness import (
    ConfigError,
    ExperimentConfig,
    build_params,
    emit_results,
    monte_carlo,
    resolve_problem,
    worker_count,
)
from .multiscale import drift_recurrence_check, eps_sweep

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting, so usage errors map to status 1."""

    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _param(text: str):
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    return key.strip(), value.strip()


def _float_list(text: str):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _common(sub, problem_flag="--problem", problem_help="benchmark id or JSON problem file"):
    sub.add_argument(problem_flag, dest="problem", default=None, help=problem_help)
    sub.add_argument("--dim", type=int, default=None, help="dimension of every level (default 10)")
    sub.add_argument("--param", action="append", type=_param, default=[], metavar="KEY=VALUE",
                     help="override a solver parameter; repeatable")
    sub.add_argument("--config", default=None, help="JSON file with settings and parameter overrides")
    sub.add_argument("--seed", type=int, default=None, help="base seed (default 0)")
    sub.add_argument("--out", default=None, help="output file (default: standard output)")
    sub.add_argument("--format", choices=("csv", "json"), default=None)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mscbo", description="Multiscale consensus-based optimization experiments.")
    subs = parser.add_subparsers(dest="command", parser_class=_Parser)
    subs.required = True

    for name, helptext in (("bilevel", "Monte Carlo runs of the bi-level solver"),
                           ("trilevel", "Monte Carlo runs of the tri-level solver")):
        s = subs.add_parser(name, help=helptext)
        _common(s)
        s.add_argument("--runs", type=int, default=None, help="number of seeds (default 20)")
        s.add_argument("--workers", type=int, default=None,
                       help="parallel processes (default MSCBO_THREADS, 0 = all CPUs)")

    s = subs.add_parser("minmax", help="Monte Carlo runs on a min-max problem")
    _common(s, "--function", "function id a-d or JSON problem file")
    s.add_argument("--runs", type=int, default=None)
    s.add_argument("--workers", type=int, default=None)

    s = subs.add_parser("converge", help="compare the coupled system with the averaged solver")
    _common(s)
    s.add_argument("--eps", type=_float_list, default=[0.5, 0.1, 0.02], help="decreasing list")
    s.add_argument("--seeds", type=int, default=10, help="number of common seeds")
    s.add_argument("--horizon", type=float, default=5.0)
    s.add_argument("--kappa", type=_float_list, default=[1.0, 0.1], help="one report per value")

    s = subs.add_parser("diagnose-recurrence", help="check the fast drift bound on random states")
    _common(s)
    s.add_argument("--samples", type=int, default=1000)
    return parser


def _load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


_SETTINGS = ("problem", "function", "dim", "runs", "seed", "out", "format")


def _experiment(args, mode: str, defaults: dict) -> tuple:
    """Layer defaults < config file < command line; returns (config, file params, cli params)."""
    cfg = _load_config(args.config)
    file_params = dict(cfg.get("params", {}))
    file_params.update({k: v for k, v in cfg.items() if k not in _SETTINGS + ("params", "mode")})
    settings = dict(defaults)
    settings.update({k: cfg[k] for k in _SETTINGS if k in cfg})
    if "function" in settings:
        settings["problem"] = settings.pop("function")
    for k in ("problem", "dim", "runs", "seed", "out", "format"):
        val = getattr(args, k, None)
        if val is not None:
            settings[k] = val
    cli_params = dict(args.param)
    try:
        config = ExperimentConfig(
            mode=mode,
            problem=settings["problem"],
            dim=settings["dim"],
            params={},
            runs=settings.get("runs", 20),
            seed=settings["seed"],
            out=settings.get("out"),
            format=settings["format"],
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return config, file_params, cli_params


def _run_mc(args, mode: str):
    problem_default = {"bilevel": "i", "trilevel": "A", "minmax": "a"}[mode]
    defaults = {"problem": problem_default, "dim": 10, "runs": 20, "seed": 0, "format": "csv"}
    config, file_params, cli_params = _experiment(args, mode, defaults)
    params = build_params(mode, file_params, cli_params)
    # resolved values travel with the config so worker processes rebuild them exactly
    config.params = {k: getattr(params, k) for k in type(params).field_names()}
    summary = monte_carlo(config, args.workers)
    if summary.failures:
        print(f"{summary.failures} of {summary.runs} runs failed", file=sys.stderr)
    return summary, config


def _run_converge(args):
    defaults = {"problem": "i", "dim": 2, "seed": 0, "format": "json"}
    config, file_params, cli_params = _experiment(args, "converge", defaults)
    base = {"N": 20, "M": 5}
    reports = []
    problem = resolve_problem("converge", config.problem, config.dim)
    if args.seeds < 1:
        raise ConfigError("--seeds must be at least 1")
    for kappa in args.kappa:
        params = build_params("converge", base, file_params, {**cli_params, "kappa": kappa})
        seeds = range(config.seed, config.seed + args.seeds)
        try:
            reports.append(eps_sweep(problem, params, args.eps, args.horizon, seeds))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return reports, config


def _run_recurrence(args):
    defaults = {"problem": "i", "dim": 10, "seed": 0, "format": "json"}
    config, file_params, cli_params = _experiment(args, "bilevel", defaults)
    if args.samples < 1:
        raise ConfigError("--samples must be at least 1")
    layered = {**file_params, **cli_params}
    base = build_params("bilevel", layered)
    if "kappa" not in layered:
        # largest drift-strengthening factor the bound can certify when no
        # component is clamped
        layered["kappa"] = 0.99 / math.sqrt(base.M)
    params = build_params("bilevel", layered)
    problem = resolve_problem("bilevel", config.problem, config.dim)
    rng = np.random.default_rng(config.seed)
    holds = certified = 0
    worst = -math.inf
    for _ in range(args.samples):
        X = rng.uniform(params.init_lo, params.init_hi, size=(1, problem.n))
        Y = rng.uniform(params.init_lo, params.init_hi, size=(1, params.M, problem.m))
        inner, bound, ok = drift_recurrence_check(problem, X, Y, params)
        holds += ok
        certified += bound <= 0
        worst = max(worst, inner - bound)
    report = {
        "samples": args.samples,
        "kappa": params.kappa,
        "M": params.M,
        "satisfied": holds,
        "satisfied_fraction": holds / args.samples,
        "negative_bound": certified,
        "max_inner_minus_bound": worst,
    }
    return report, config


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        if args.command in ("bilevel", "trilevel", "minmax"):
            if args.workers is not None:
                worker_count(args.workers)
            result, config = _run_mc(args, args.command)
        elif args.command == "converge":
            result, config = _run_converge(args)
        else:
            result, config = _run_recurrence(args)
    except (UsageError, ConfigError) as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailure, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE

    try:
        text = emit_results(result, config.out, config.format)
    except OSError as exc:
        print(f"cannot write results: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    if config.out is None:
        sys.stdout.write(text)
    if getattr(result, "failures", 0):
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
