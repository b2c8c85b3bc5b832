"""Multiscale CBO for tri-level problems with a shared lower-level representative.

Each upper particle ``X[i]`` owns ``M`` middle-level particles ``Y[i]`` and
``P`` bottom-level particles ``R[i]``.  The bottom population is attached to
the consensus ``v[i]`` of ``Y[i]`` rather than to every middle particle, so
the particle counts are ``N``, ``N*M`` and ``N*P``.

One outer step runs, for every ``i`` and with ``X`` frozen, a middle loop in
which the bottom population is advanced, its consensus is folded into ``v[i]``
by forward-looking averaging, ``Y[i]`` moves one step toward ``v[i]`` and the
upper consensus is folded into ``z[i]``.  ``X`` then moves one step toward
``z``.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .bilevel import NumericalFailure
from .consensus import NonFiniteObjectiveError, fla_update, stabilized_weights, weighted_mean
from .dynamics import StepParams, cbo_em_step, step_count, substreams
from .metrics import compute_error, is_success
from .objectives import TriLevelProblem

__all__ = ["TriLevelParams", "TriLevelResult", "run_trilevel"]


@dataclass
class TriLevelParams:
    alpha1: float = 1e15
    alpha2: float = 1e15
    alpha3: float = 1e15
    lam: float = 1.0
    sigma: float = 2.0
    gamma: float = 0.75
    delta: float = 1e-5
    Q: float = 10.0
    dt: float = 0.1
    Tx: float = 50.0
    Ty: float = 0.5
    Tr: float = 0.5
    N: int = 100
    M: int = 50
    P: int = 25
    init_lo: float = -1.0
    init_hi: float = 3.0

    def __post_init__(self):
        self.N, self.M, self.P = int(self.N), int(self.M), int(self.P)
        if self.N < 2 or self.M < 1 or self.P < 1:
            raise ValueError("need N >= 2, M >= 1 and P >= 1")
        if min(self.alpha1, self.alpha2, self.alpha3) < 0:
            raise ValueError("sharpness parameters must be nonnegative")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if min(self.Tx, self.Ty, self.Tr) < self.dt:
            raise ValueError("horizons must be at least one time step")
        if self.init_hi < self.init_lo:
            raise ValueError("empty initialization box")
        self.step()

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    def step(self) -> StepParams:
        return StepParams(self.lam, self.sigma, self.delta, self.Q, self.dt)


@dataclass
class TriLevelResult:
    x_star: np.ndarray
    y_star: np.ndarray
    r_star: np.ndarray
    error: Optional[float]
    success: Optional[bool]
    wall_time: float
    X_final: np.ndarray = field(repr=False)
    Y_final: np.ndarray = field(repr=False)
    R_final: np.ndarray = field(repr=False)
    v_final: np.ndarray = field(repr=False)
    r_final: np.ndarray = field(repr=False)
    trace: Optional[dict] = field(default=None, repr=False)


def _bottom_consensus(problem, Xi, vi, R, a3):
    w = stabilized_weights(problem.E(Xi[:, None, :], vi[:, None, :], R), a3)
    return weighted_mean(R, w), w


def _middle_consensus(problem, Xi, Y, ri, a2):
    w = stabilized_weights(problem.G(Xi[:, None, :], Y, ri[:, None, :]), a2)
    return weighted_mean(Y, w), w


def _upper_consensus(problem, X, vi, ri, a1):
    w = stabilized_weights(problem.F(X[None, :, :], vi[:, None, :], ri[:, None, :]), a1)
    return weighted_mean(X, w), w


def _inner_phase(X, idx, Y, R, z, y_noise, r_noise, problem, p: TriLevelParams, t, check):
    """Middle and bottom loops for the rows ``idx``; returns updated ``Y, R, v, r, z``."""
    Xi = X[idx]
    st = p.step()
    n_mid, n_bot = y_noise.shape[1], r_noise.shape[2]
    try:
        v, _ = _middle_consensus(problem, Xi, Y, R.mean(axis=1), p.alpha2)
        for tau in range(n_mid):
            r, _ = _bottom_consensus(problem, Xi, v, R, p.alpha3)
            for s in range(n_bot):
                R = cbo_em_step(R, r[:, None, :], st, r_noise[:, tau, s])
                r, w3 = _bottom_consensus(problem, Xi, v, R, p.alpha3)
                v_new, w2 = _middle_consensus(problem, Xi, Y, r, p.alpha2)
                v = fla_update(v, v_new, p.gamma)
            Y = cbo_em_step(Y, v[:, None, :], st, y_noise[:, tau])
            v, w2 = _middle_consensus(problem, Xi, Y, r, p.alpha2)
            z_new, w1 = _upper_consensus(problem, X, v, r, p.alpha1)
            z = fla_update(z, z_new, p.gamma)
            if check:
                _check_level(w3, R, r)
                _check_level(w2, Y, v)
                _check_level(w1, np.broadcast_to(X, (len(idx),) + X.shape), z_new)
    except NonFiniteObjectiveError as exc:
        row = exc.index[0] if isinstance(exc.index, tuple) else exc.index
        raise NumericalFailure(
            f"non-finite objective at outer iteration {t}, inner phase of X-particle {idx[row]}: {exc}"
        ) from exc
    return Y, R, v, r, z


def _check_level(w, particles, point):
    """Debug assertions: normalized weights and a consensus inside the bounding box."""
    if not np.allclose(w.sum(axis=-1), 1.0, rtol=0, atol=1e-12) or (w < 0).any():
        raise AssertionError("consensus weights are not a probability vector")
    tol = 1e-12 * (1.0 + np.abs(particles).max())
    lo, hi = particles.min(axis=-2), particles.max(axis=-2)
    if (point < lo - tol).any() or (point > hi + tol).any():
        raise AssertionError("consensus point left the bounding box of its population")


def run_trilevel(
    problem: TriLevelProblem,
    params: Optional[TriLevelParams] = None,
    seed: int = 0,
    *,
    workers: int = 1,
    trace: bool = False,
    debug: bool = False,
) -> TriLevelResult:
    """Solve a tri-level problem with multiscale CBO.

    Parameters
    ----------
    problem : TriLevelProblem
    params : TriLevelParams, optional
        Defaults reproduce the benchmark settings.
    seed : int
        Determines every draw; results do not depend on ``workers``.
    workers : int
        Threads used for the independent per-particle inner phases.
    trace : bool
        Record per-outer-iteration diagnostics.
    debug : bool
        Check weight normalization and the bounding-box property of every
        consensus point at every middle step (slow).
    """
    p = params if params is not None else TriLevelParams()
    n, m, q = problem.n, problem.m, problem.p
    N, M, P = p.N, p.M, p.P
    n_outer = step_count(p.Tx, p.dt, "Tx") + 1
    n_mid = step_count(p.Ty, p.dt, "Ty") + 1
    n_bot = step_count(p.Tr, p.dt, "Tr") + 1
    sq_dt = math.sqrt(p.dt)
    st = p.step()

    init_rng, *streams = substreams(seed, N + 1)
    started = time.perf_counter()
    X = init_rng.uniform(p.init_lo, p.init_hi, size=(N, n))
    Y = init_rng.uniform(p.init_lo, p.init_hi, size=(N, M, m))
    R = init_rng.uniform(p.init_lo, p.init_hi, size=(N, P, q))
    z = X.copy()
    v = np.empty((N, m))
    r = np.empty((N, q))

    r_block = n_mid * n_bot * P * q
    y_block = n_mid * M * m
    chunks = [c for c in np.array_split(np.arange(N), max(1, min(workers, N))) if c.size]
    pool = ThreadPoolExecutor(len(chunks)) if len(chunks) > 1 else None
    log = {"mean_x": [], "mean_z": [], "best_f": [], "max_abs": [], "max_abs_x": []} if trace else None
    buf = np.empty((N, r_block + y_block + n))

    try:
        for t in range(n_outer):
            for k, g in enumerate(streams):
                g.standard_normal(out=buf[k])
            draws = buf * sq_dt
            r_noise = draws[:, :r_block].reshape(N, n_mid, n_bot, P, q)
            y_noise = draws[:, r_block : r_block + y_block].reshape(N, n_mid, M, m)
            x_noise = draws[:, r_block + y_block :]

            def work(idx):
                return _inner_phase(
                    X, idx, Y[idx], R[idx], z[idx], y_noise[idx], r_noise[idx], problem, p, t, debug
                )

            outs = pool.map(work, chunks) if pool else map(work, chunks)
            for idx, (Yc, Rc, vc, rc, zc) in zip(chunks, outs):
                Y[idx], R[idx], v[idx], r[idx], z[idx] = Yc, Rc, vc, rc, zc

            X = cbo_em_step(X, z, st, x_noise)
            if not (np.isfinite(X).all() and np.isfinite(Y).all() and np.isfinite(R).all()):
                raise NumericalFailure(f"non-finite particle state at outer iteration {t}")
            if log is not None:
                log["mean_x"].append(X.mean(axis=0))
                log["mean_z"].append(z.mean(axis=0))
                log["best_f"].append(float(np.min(problem.F(X, v, r))))
                log["max_abs_x"].append(float(np.abs(X).max()))
                log["max_abs"].append(max(log["max_abs_x"][-1], float(np.abs(Y).max()), float(np.abs(R).max())))
    finally:
        if pool:
            pool.shutdown()

    x_bar, v_bar, r_bar = X.mean(axis=0), v.mean(axis=0), r.mean(axis=0)
    try:
        x_star = weighted_mean(X, stabilized_weights(problem.F(X, v_bar, r_bar), p.alpha1))
        y_star = weighted_mean(v, stabilized_weights(problem.G(x_bar, v, r_bar), p.alpha2))
        r_star = weighted_mean(r, stabilized_weights(problem.E(x_bar, v_bar, r), p.alpha3))
    except NonFiniteObjectiveError as exc:
        raise NumericalFailure(f"non-finite objective in the final extraction: {exc}") from exc
    wall = time.perf_counter() - started

    error = success = None
    if problem.optimum is not None:
        error = compute_error((x_star, y_star, r_star), problem.optimum)
        success = is_success(error)
    if log is not None:
        log = {k: np.asarray(val) for k, val in log.items()}
    return TriLevelResult(x_star, y_star, r_star, error, success, wall, X, Y, R, v, r, log)
