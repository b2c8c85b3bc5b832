"""Multiscale CBO for bi-level (and min-max) problems.

The upper population ``X`` (``N`` particles) moves on the slow scale.  Each
``X[i]`` owns a persistent lower population ``Y[i]`` of ``M`` particles that
is advanced for a short fast-scale horizon between two slow steps, while a
forward-looking average ``z[i]`` of the upper consensus is accumulated.  The
inner phases of different ``i`` only read the frozen ``X`` and are therefore
independent; they may be split across threads without changing the result.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .consensus import (
    NonFiniteObjectiveError,
    fla_update,
    stabilized_weights,
    weighted_mean,
    x_consensus,
    y_consensus,
)
from .dynamics import StepParams, cbo_em_step, step_count, substreams
from .metrics import compute_error, is_success
from .objectives import BiLevelProblem

__all__ = ["BiLevelParams", "BiLevelResult", "run_bilevel", "NumericalFailure"]


class NumericalFailure(FloatingPointError):
    """A solver produced a non-finite objective value or particle state."""


@dataclass
class BiLevelParams:
    alpha: float = 1e15
    beta: float = 1e15
    lambda1: float = 1.0
    lambda2: float = 1.0
    sigma1: float = 2.0
    sigma2: float = 2.0
    gamma: float = 0.75
    delta1: float = 1e-5
    delta2: float = 1e-5
    R1: float = 10.0
    R2: float = 10.0
    kappa: float = 1.0
    dt: float = 0.1
    dtau: float = 0.1
    Tx: float = 50.0
    Ty: float = 0.5
    N: int = 100
    M: int = 25
    init_lo: float = -1.0
    init_hi: float = 3.0

    def __post_init__(self):
        self.N = int(self.N)
        self.M = int(self.M)
        if self.N < 2 or self.M < 1:
            raise ValueError("need N >= 2 and M >= 1")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.dt <= 0 or self.dtau <= 0:
            raise ValueError("time steps must be positive")
        if self.Tx < self.dt or self.Ty < self.dtau:
            raise ValueError("horizons must be at least one time step")
        if self.init_hi < self.init_lo:
            raise ValueError("empty initialization box")
        # validates the remaining rates
        self.x_step()
        self.y_step()

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    def x_step(self) -> StepParams:
        return StepParams(self.lambda1, self.sigma1, self.delta1, self.R1, self.dt)

    def y_step(self) -> StepParams:
        return StepParams(self.lambda2, self.sigma2, self.delta2, self.R2, self.dtau)


@dataclass
class BiLevelResult:
    x_star: np.ndarray
    y_star: np.ndarray
    error: Optional[float]
    success: Optional[bool]
    wall_time: float
    X_final: np.ndarray = field(repr=False)
    v_final: np.ndarray = field(repr=False)
    trace: Optional[dict] = field(default=None, repr=False)


def _inner_phase(X, idx, Y, z, noise, problem, p: BiLevelParams, n_inner, t):
    """Advance the lower populations ``Y`` (rows ``idx``) and their averaged consensus ``z``."""
    Xi = X[idx]
    ystep = p.y_step()
    kappa = p.kappa
    try:
        v = y_consensus(Xi, Y, problem.G, p.beta)
        for s in range(n_inner):
            Y = cbo_em_step(Y, kappa * v[:, None, :], ystep, noise[:, s])
            v = y_consensus(Xi, Y, problem.G, p.beta)
            z_aux = x_consensus(X, v, problem.F, p.alpha, kappa)
            z = fla_update(z, z_aux, p.gamma)
    except NonFiniteObjectiveError as exc:
        row = exc.index[0] if isinstance(exc.index, tuple) else exc.index
        raise NumericalFailure(
            f"non-finite objective at outer iteration {t}, inner phase of X-particle {idx[row]}: {exc}"
        ) from exc
    return Y, v, z


def run_bilevel(
    problem: BiLevelProblem,
    params: Optional[BiLevelParams] = None,
    seed: int = 0,
    *,
    workers: int = 1,
    trace: bool = False,
) -> BiLevelResult:
    """Solve a bi-level problem with multiscale CBO.

    Parameters
    ----------
    problem : BiLevelProblem
    params : BiLevelParams, optional
        Defaults reproduce the benchmark settings.
    seed : int
        Seeds the initialization stream and one noise stream per ``X``
        particle; identical seeds give bitwise identical results for any
        ``workers``.
    workers : int
        Threads used for the independent inner phases.
    trace : bool
        Record per-outer-iteration diagnostics in ``result.trace``.
    """
    p = params if params is not None else BiLevelParams()
    n, m, N, M = problem.n, problem.m, p.N, p.M
    n_outer = step_count(p.Tx, p.dt, "Tx") + 1
    n_inner = step_count(p.Ty, p.dtau, "Ty") + 1
    sq_dt, sq_dtau = math.sqrt(p.dt), math.sqrt(p.dtau)
    xstep = p.x_step()

    init_rng, *streams = substreams(seed, N + 1)
    started = time.perf_counter()
    X = init_rng.uniform(p.init_lo, p.init_hi, size=(N, n))
    Y = init_rng.uniform(p.init_lo, p.init_hi, size=(N, M, m))
    z = X.copy()
    v = np.empty((N, m))

    y_block = n_inner * M * m
    chunks = [c for c in np.array_split(np.arange(N), max(1, min(workers, N))) if c.size]
    pool = ThreadPoolExecutor(len(chunks)) if len(chunks) > 1 else None
    log = {"mean_x": [], "mean_z": [], "best_f": [], "max_abs": [], "max_abs_x": []} if trace else None

    buf = np.empty((N, y_block + n))

    try:
        for t in range(n_outer):
            for k, g in enumerate(streams):
                g.standard_normal(out=buf[k])
            y_noise = buf[:, :y_block].reshape(N, n_inner, M, m) * sq_dtau
            x_noise = buf[:, y_block:] * sq_dt

            def work(idx):
                return _inner_phase(X, idx, Y[idx], z[idx], y_noise[idx], problem, p, n_inner, t)

            outs = pool.map(work, chunks) if pool else map(work, chunks)
            for idx, (Yc, vc, zc) in zip(chunks, outs):
                Y[idx], v[idx], z[idx] = Yc, vc, zc

            X = cbo_em_step(X, z, xstep, x_noise)
            if not (np.isfinite(X).all() and np.isfinite(Y).all()):
                raise NumericalFailure(f"non-finite particle state at outer iteration {t}")
            if log is not None:
                log["mean_x"].append(X.mean(axis=0))
                log["mean_z"].append(z.mean(axis=0))
                log["best_f"].append(float(np.min(problem.F(X, v / p.kappa))))
                log["max_abs_x"].append(float(np.abs(X).max()))
                log["max_abs"].append(max(log["max_abs_x"][-1], float(np.abs(Y).max())))
    finally:
        if pool:
            pool.shutdown()

    x_bar = X.mean(axis=0)
    v_bar = v.mean(axis=0)
    try:
        x_star = x_consensus(X, v_bar, problem.F, p.alpha, p.kappa)
        w = stabilized_weights(problem.G(x_bar, v / p.kappa), p.beta)
    except NonFiniteObjectiveError as exc:
        raise NumericalFailure(f"non-finite objective in the final extraction: {exc}") from exc
    y_star = weighted_mean(v, w) / p.kappa
    wall = time.perf_counter() - started

    error = success = None
    if problem.optimum is not None:
        error = compute_error((x_star, y_star), problem.optimum)
        success = is_success(error)
    if log is not None:
        log = {k: np.asarray(val) for k, val in log.items()}
    return BiLevelResult(x_star, y_star, error, success, wall, X, v, log)
