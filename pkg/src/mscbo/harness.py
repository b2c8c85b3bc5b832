"""Monte Carlo driver, parameter plumbing and result serialization.

An :class:`ExperimentConfig` names a solver mode, a problem and parameter
overrides.  :func:`monte_carlo` runs it for consecutive seeds and folds the
per-run records into a :class:`McSummary`.  :func:`emit_results` writes a
summary (or any other report) as CSV or JSON; the matching loaders read
them back bit-exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import re
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .bilevel import BiLevelParams, run_bilevel
from .metrics import SUCCESS_THRESHOLD
from .objectives import (
    BILEVEL_IDS,
    MINMAX_IDS,
    TRILEVEL_IDS,
    BiLevelProblem,
    TriLevelProblem,
    ackley,
    builtin_problem,
    levy,
    minmax_as_bilevel,
    rastrigin,
)
from .trilevel import TriLevelParams, run_trilevel

__all__ = [
    "MODES",
    "RunRecord",
    "McSummary",
    "ExperimentConfig",
    "ConfigError",
    "build_params",
    "resolve_problem",
    "problem_from_spec",
    "summarize",
    "monte_carlo",
    "emit_results",
    "load_summary_json",
    "load_summary_csv",
    "worker_count",
]

MODES = ("bilevel", "trilevel", "minmax", "converge")
CSV_HEADER = ("seed", "error", "success", "wall_time_s")


class ConfigError(ValueError):
    """Invalid experiment configuration (unknown key, id or value)."""


@dataclass
class RunRecord:
    seed: int
    error: Optional[float]
    success: Optional[bool]
    wall_time: float
    failure: Optional[str] = None


@dataclass
class McSummary:
    runs: int
    success_rate: float
    mean_error: float
    mean_wall_time: float
    per_run: list = field(default_factory=list)

    @property
    def failures(self) -> int:
        return sum(r.failure is not None for r in self.per_run)


@dataclass
class ExperimentConfig:
    mode: str = "bilevel"
    problem: Union[str, dict] = "i"
    dim: int = 10
    params: dict = field(default_factory=dict)
    runs: int = 20
    seed: int = 0
    out: Optional[str] = None
    format: str = "csv"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if int(self.runs) < 1:
            raise ConfigError("runs must be at least 1")
        if int(self.dim) < 1:
            raise ConfigError("dim must be positive")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"unknown format {self.format!r}")
        self.runs, self.dim, self.seed = int(self.runs), int(self.dim), int(self.seed)


# ---------------------------------------------------------------- parameters

_INT_KEYS = {"N", "M", "P"}

# shorthand keys that set several fields at once
_BILEVEL_ALIASES = {
    "lambda": ("lambda1", "lambda2"),
    "sigma": ("sigma1", "sigma2"),
    "delta": ("delta1", "delta2"),
    "R": ("R1", "R2"),
    "Q": ("R1", "R2"),
}
_TRILEVEL_ALIASES = {
    "alpha": ("alpha1", "alpha2", "alpha3"),
    "lambda": ("lam",),
    "lambda1": ("lam",),
    "sigma1": ("sigma",),
    "delta1": ("delta",),
    "R": ("Q",),
    "R1": ("Q",),
}


def _params_class(mode: str):
    return TriLevelParams if mode == "trilevel" else BiLevelParams


def _expand(mode: str, key: str):
    cls = _params_class(mode)
    aliases = _TRILEVEL_ALIASES if cls is TriLevelParams else _BILEVEL_ALIASES
    if key in cls.field_names():
        return (key,)
    return aliases.get(key)


def _known_anywhere(key: str) -> bool:
    return any(_expand(m, key) for m in ("bilevel", "trilevel"))


def _coerce(key: str, value):
    try:
        if key in _INT_KEYS:
            f = float(value)
            if not f.is_integer():
                raise ValueError
            return int(f)
        out = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value {value!r} for parameter {key!r}") from None
    if not math.isfinite(out):
        raise ConfigError(f"parameter {key!r} must be finite")
    return out


def build_params(mode: str, *layers: dict, strict_last: bool = True):
    """Merge override layers (lowest precedence first) onto the defaults.

    Keys may be dataclass field names or the shorthands ``lambda``,
    ``sigma``, ``delta``, ``R`` (and ``alpha`` for three levels).  A key
    that belongs to the other solver is ignored in every layer but the last
    when ``strict_last`` is set; unknown keys are always an error.
    """
    cls = _params_class(mode)
    merged = {}
    for depth, layer in enumerate(layers):
        strict = strict_last and depth == len(layers) - 1
        for key, value in (layer or {}).items():
            targets = _expand(mode, key)
            if targets is None:
                if strict or not _known_anywhere(key):
                    raise ConfigError(f"unknown parameter {key!r} for mode {mode!r}")
                continue
            for t in targets:
                merged[t] = _coerce(t, value)
    try:
        return cls(**merged)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------- problems

_VAR = re.compile(r"\s*([+-]?)\s*(\d*\.?\d*)\s*\*?\s*([xyr])\s*")


def _linear_arg(expr: str, names: tuple):
    """Parse a signed sum of variables such as ``"x-y"`` or ``"2*r - y"``."""
    expr = expr.replace(" ", "")
    if not expr:
        raise ConfigError("empty argument expression")
    coefs = {}
    pos = 0
    while pos < len(expr):
        m = _VAR.match(expr, pos)
        if not m or m.end() == pos:
            raise ConfigError(f"cannot parse argument expression {expr!r}")
        sign, num, var = m.groups()
        if pos > 0 and not sign:
            raise ConfigError(f"cannot parse argument expression {expr!r}")
        if var not in names:
            raise ConfigError(f"variable {var!r} is not available in {expr!r}")
        c = float(num) if num else 1.0
        coefs[var] = coefs.get(var, 0.0) + (-c if sign == "-" else c)
        pos = m.end()
    return coefs


_BENCH = {
    "sphere": lambda v: np.sum(v * v, axis=-1),
    "ackley": ackley,
    "rastrigin": rastrigin,
    "levy": levy,
}


def _compile_terms(terms, names):
    """Turn a list of term specs into ``f(*args)`` summing the terms."""
    if not isinstance(terms, list) or not terms:
        raise ConfigError("an objective must be a nonempty list of terms")
    compiled = []
    for term in terms:
        if not isinstance(term, dict) or "fn" not in term:
            raise ConfigError(f"malformed term {term!r}")
        fn, coef = term["fn"], float(term.get("coef", 1.0))
        if fn == "dot":
            a, b = (_linear_arg(s, names) for s in term.get("args", ()))
            compiled.append(("dot", coef, (a, b), 0.0))
        elif fn in _BENCH:
            compiled.append((fn, coef, (_linear_arg(term.get("arg", "x"), names),), float(term.get("offset", 0.0))))
        else:
            raise ConfigError(f"unknown term function {fn!r}")

    def evaluate(*vals):
        env = dict(zip(names, vals))

        def lin(coefs):
            return sum(c * np.asarray(env[k], dtype=float) for k, c in coefs.items())

        total = 0.0
        for fn, coef, args, offset in compiled:
            if fn == "dot":
                a, b = (lin(c) for c in args)
                total = total + coef * np.sum(a * b, axis=-1)
            else:
                total = total + coef * _BENCH[fn](lin(args[0]) - offset)
        return total

    return evaluate


def problem_from_spec(spec: dict, dim: int):
    """Build a problem from a declarative JSON spec.

    ``{"type": "bilevel" | "minmax" | "trilevel", "F": [terms], "G": [...],
    "E": [...], "optimum": [[...], [...]]}``; a term is
    ``{"fn": "sphere" | "ackley" | "rastrigin" | "levy", "arg": "x-y",
    "offset": 0, "coef": 1}`` or ``{"fn": "dot", "args": ["x", "y"]}``.
    A scalar optimum entry is broadcast to the dimension.
    """
    if not isinstance(spec, dict):
        raise ConfigError("a problem spec must be a JSON object")
    kind = spec.get("type", "bilevel")
    name = str(spec.get("name", "custom"))
    names = ("x", "y", "r") if kind == "trilevel" else ("x", "y")
    blocks = 3 if kind == "trilevel" else 2
    optimum = spec.get("optimum")
    if optimum is not None:
        if len(optimum) != blocks:
            raise ConfigError(f"optimum must have {blocks} blocks")
        optimum = tuple(np.broadcast_to(np.asarray(o, dtype=float), (dim,)).copy() for o in optimum)
    try:
        if kind == "bilevel":
            return BiLevelProblem(_compile_terms(spec.get("F"), names), _compile_terms(spec.get("G"), names),
                                  dim, dim, optimum, name)
        if kind == "minmax":
            return minmax_as_bilevel(_compile_terms(spec.get("F"), names), dim, dim, optimum, name)
        if kind == "trilevel":
            return TriLevelProblem(*(_compile_terms(spec.get(k), names) for k in "FGE"),
                                   dim, dim, dim, optimum, name)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    raise ConfigError(f"unknown problem type {kind!r}")


def resolve_problem(mode: str, problem, dim: int):
    """Map a benchmark id, a spec dict or a path to a JSON spec onto a problem."""
    if isinstance(problem, dict):
        prob = problem_from_spec(problem, dim)
    else:
        ids = {"bilevel": BILEVEL_IDS, "converge": BILEVEL_IDS, "trilevel": TRILEVEL_IDS,
               "minmax": MINMAX_IDS}[mode]
        if problem in ids:
            return builtin_problem(problem, dim)
        path = Path(str(problem))
        if not path.is_file():
            raise ConfigError(f"unknown {mode} problem {problem!r}; expected one of {ids} or a JSON file")
        try:
            spec = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read problem file {path}: {exc}") from None
        prob = problem_from_spec(spec, dim)
    want = TriLevelProblem if mode == "trilevel" else BiLevelProblem
    if not isinstance(prob, want):
        raise ConfigError(f"problem spec does not describe a {mode} problem")
    return prob


# ---------------------------------------------------------------- Monte Carlo

def worker_count(requested: Optional[int] = None) -> int:
    """Pool size from the argument, else ``MSCBO_THREADS`` (0 or unset means all CPUs)."""
    if requested is None:
        raw = os.environ.get("MSCBO_THREADS", "0").strip() or "0"
        try:
            requested = int(raw)
        except ValueError:
            raise ConfigError(f"MSCBO_THREADS must be an integer, got {raw!r}") from None
    if requested < 0:
        raise ConfigError("worker count must be nonnegative")
    return requested if requested > 0 else (os.cpu_count() or 1)


def _solve(config: ExperimentConfig, seed: int) -> RunRecord:
    """Run one seed; numerical failures are caught and recorded."""
    problem = resolve_problem(config.mode, config.problem, config.dim)
    params = build_params(config.mode, config.params)
    runner = run_trilevel if config.mode == "trilevel" else run_bilevel
    try:
        res = runner(problem, params, seed)
    except FloatingPointError as exc:
        return RunRecord(seed, None, None, float("nan"), failure=str(exc))
    return RunRecord(seed, res.error, res.success, res.wall_time)


def _mean(values: list) -> float:
    """Correctly rounded mean that survives sums beyond the float range."""
    if not values:
        return float("nan")
    try:
        return math.fsum(values) / len(values)
    except OverflowError:
        return math.fsum(v / len(values) for v in values)


def summarize(records) -> McSummary:
    """Fold run records into a summary; the result does not depend on their order."""
    records = sorted(records, key=lambda r: r.seed)
    ok = [r for r in records if r.failure is None]
    if len(ok) < len(records):
        warnings.warn(
            f"{len(records) - len(ok)} of {len(records)} runs failed and are excluded from the means",
            RuntimeWarning,
            stacklevel=2,
        )
    scored = [r for r in ok if r.error is not None]
    nan = float("nan")
    # failed runs count as unsuccessful; runs without a known optimum are not scored
    denom = len(scored) + (len(records) - len(ok))
    rate = sum(r.error <= SUCCESS_THRESHOLD for r in scored) / denom if denom else nan
    mean_err = _mean([r.error for r in scored])
    mean_wall = _mean([r.wall_time for r in ok])
    return McSummary(len(records), rate, mean_err, mean_wall, records)


def monte_carlo(config: ExperimentConfig, workers: Optional[int] = None) -> McSummary:
    """Run ``config.runs`` seeds ``config.seed, config.seed + 1, ...`` and summarize.

    ``workers`` processes execute independent seeds (default from
    ``MSCBO_THREADS``); results are identical for any worker count.
    """
    if config.mode == "converge":
        raise ConfigError("the converge mode is run through eps_sweep, not monte_carlo")
    # validate before spawning anything
    resolve_problem(config.mode, config.problem, config.dim)
    build_params(config.mode, config.params)
    seeds = [config.seed + k for k in range(config.runs)]
    n = min(worker_count(workers), len(seeds))
    if n > 1:
        with ProcessPoolExecutor(n) as pool:
            records = list(pool.map(_solve, [config] * len(seeds), seeds))
    else:
        records = [_solve(config, s) for s in seeds]
    return summarize(records)


# ---------------------------------------------------------------- output

def _fmt(x) -> str:
    if x is None:
        return "nan"
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def _summary_csv(summary: McSummary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in summary.per_run:
        w.writerow([r.seed, _fmt(r.error), _fmt(r.success), _fmt(r.wall_time)])
    w.writerow(["aggregate", _fmt(summary.mean_error), _fmt(summary.success_rate),
                _fmt(summary.mean_wall_time)])
    return buf.getvalue()


def _table_csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if rows:
        keys = list(rows[0])
        w.writerow(keys)
        for row in rows:
            w.writerow([_fmt(row[k]) if not isinstance(row[k], str) else row[k] for k in keys])
    return buf.getvalue()


def _sweep_rows(report) -> list:
    return [
        {"kappa": report.kappa, "eps": e, "discrepancy": d, "std_error": s, "coupled_mean": c,
         "reference_mean": report.reference_mean}
        for e, d, s, c in zip(report.eps_values, report.discrepancies, report.std_errors,
                              report.coupled_means)
    ]


def render(obj, fmt: str) -> str:
    """Serialize a summary, an eps-sweep report (or a list of them) or a plain dict."""
    from .multiscale import EpsSweepReport

    if fmt == "json":
        return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"
    if fmt != "csv":
        raise ConfigError(f"unknown format {fmt!r}")
    if isinstance(obj, McSummary):
        return _summary_csv(obj)
    reports = obj if isinstance(obj, list) else [obj]
    if reports and all(isinstance(r, EpsSweepReport) for r in reports):
        return _table_csv([row for r in reports for row in _sweep_rows(r)])
    if isinstance(obj, dict):
        return _table_csv([{"key": k, "value": v} for k, v in obj.items()
                           if not isinstance(v, (list, dict))])
    raise ConfigError(f"cannot write {type(obj).__name__} as CSV")


def emit_results(obj, path: Optional[str], fmt: str = "csv") -> str:
    """Write ``obj`` to ``path`` (or return the text only when ``path`` is None).

    Raises ``OSError`` when the file cannot be written.
    """
    text = render(obj, fmt)
    if path is not None:
        Path(path).write_text(text)
    return text


def _float_or_none(x):
    return None if x is None else float(x)


def load_summary_json(text: str) -> McSummary:
    data = json.loads(text)
    nan = float("nan")
    per_run = [
        RunRecord(int(r["seed"]), _float_or_none(r["error"]), r["success"],
                  nan if r["wall_time"] is None else float(r["wall_time"]), r.get("failure"))
        for r in data["per_run"]
    ]
    def num(k):
        return nan if data[k] is None else float(data[k])
    return McSummary(int(data["runs"]), num("success_rate"), num("mean_error"),
                     num("mean_wall_time"), per_run)


def load_summary_csv(text: str) -> McSummary:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError("not a summary CSV")
    if rows[-1][0] != "aggregate":
        raise ValueError("summary CSV lacks the aggregate row")
    per_run = []
    for seed, err, ok, wall in rows[1:-1]:
        e = float(err)
        per_run.append(RunRecord(int(seed), None if math.isnan(e) else e,
                                 None if ok == "nan" else ok == "true", float(wall)))
    _, err, rate, wall = rows[-1]
    return McSummary(len(per_run), float(rate), float(err), float(wall), per_run)
