"""Benchmark objectives and the composite multi-level test problems.

All scalar benchmarks reduce over the last axis, so a single call can
evaluate a whole particle ensemble: an array of shape ``(..., d)`` maps to
an array of shape ``(...)``.  Composite objectives ``F(x, y)`` (and
``F(x, y, r)``) broadcast their arguments the same way, which is what the
solvers rely on when they score every pair of particles at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "ObjectiveFn",
    "BiLevelProblem",
    "TriLevelProblem",
    "ackley",
    "rastrigin",
    "levy",
    "builtin_problem",
    "minmax_as_bilevel",
    "BILEVEL_IDS",
    "TRILEVEL_IDS",
    "MINMAX_IDS",
]

BILEVEL_IDS = ("i", "ii", "iii", "iv", "v", "vi")
TRILEVEL_IDS = ("A", "B", "C")
MINMAX_IDS = ("a", "b", "c", "d")

TWO_PI = 2.0 * np.pi


def _as_finite(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ValueError(f"{name}: expected a vector argument, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name}: non-finite input")
    return x


def ackley(x) -> np.ndarray:
    r"""Ackley function, reduced over the last axis.

    .. math::

        A(x) = -20 e^{-0.2\sqrt{\frac1d\sum x_i^2}}
               - e^{\frac1d\sum\cos(2\pi x_i)} + e + 20
    """
    x = _as_finite(x, "ackley")
    d = x.shape[-1]
    rms = np.sqrt(np.sum(x * x, axis=-1) / d)
    cos_mean = np.sum(np.cos(TWO_PI * x), axis=-1) / d
    return -20.0 * np.exp(-0.2 * rms) - np.exp(cos_mean) + np.e + 20.0


def rastrigin(x) -> np.ndarray:
    """Rastrigin function with amplitude 1.5: ``sum(x**2 + 1.5*(1 - cos(2*pi*x)))``."""
    x = _as_finite(x, "rastrigin")
    return np.sum(x * x + 1.5 * (1.0 - np.cos(TWO_PI * x)), axis=-1)


def levy(x) -> np.ndarray:
    r"""Levy-type function on :math:`\mathbb{R}^d`, ``d >= 2``.

    With :math:`w_i = 1 + x_i/4`,

    .. math::

        L(x) = \sin^2(\pi w_1)
             + \sum_{i<d} (x_i/4)^2 \, [1 + 10\sin^2(\pi w_i + 1)]
             + (x_d/4)^2 \, [1 + \sin^2(2\pi w_d)]

    The global minimum is ``L(0) = 0``.
    """
    x = _as_finite(x, "levy")
    if x.shape[-1] < 2:
        raise ValueError("levy: dimension must be at least 2")
    u = 0.25 * x
    head = np.sin(np.pi * (1.0 + u[..., 0])) ** 2
    # sin dominates the cost of the whole tri-level solver, so it is only
    # evaluated on the coordinates each term needs, with in-place updates
    ub = u[..., :-1]
    s = np.sin(np.pi * (1.0 + ub) + 1.0)
    s *= s
    s *= 10.0
    s += 1.0
    s *= ub * ub
    body = s.sum(axis=-1)
    ul = u[..., -1]
    tail = ul * ul * (1.0 + np.sin(TWO_PI * (1.0 + ul)) ** 2)
    return head + body + tail


@dataclass(frozen=True)
class ObjectiveFn:
    """A named scalar objective on R^dim."""

    eval: Callable[[np.ndarray], np.ndarray]
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")

    def __call__(self, x):
        return self.eval(x)


@dataclass(frozen=True)
class BiLevelProblem:
    """``min_x F(x, y)`` subject to ``y in argmin_y G(x, y)``.

    ``F`` and ``G`` take broadcastable arrays with trailing sizes ``n`` and
    ``m`` and return the broadcast leading shape.
    """

    F: Callable
    G: Callable
    n: int
    m: int
    optimum: Optional[tuple] = None
    name: str = ""

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("problem dimensions must be positive")
        if self.optimum is not None:
            xs, ys = (np.asarray(o, dtype=float) for o in self.optimum)
            if xs.shape != (self.n,) or ys.shape != (self.m,):
                raise ValueError("optimum does not match the problem dimensions")
            object.__setattr__(self, "optimum", (xs, ys))


@dataclass(frozen=True)
class TriLevelProblem:
    """``min_x F`` s.t. ``y in argmin G`` s.t. ``r in argmin E``, all of ``(x, y, r)``."""

    F: Callable
    G: Callable
    E: Callable
    n: int
    m: int
    p: int
    optimum: Optional[tuple] = None
    name: str = ""

    def __post_init__(self):
        if min(self.n, self.m, self.p) < 1:
            raise ValueError("problem dimensions must be positive")
        if self.optimum is not None:
            parts = tuple(np.asarray(o, dtype=float) for o in self.optimum)
            if [q.shape for q in parts] != [(self.n,), (self.m,), (self.p,)]:
                raise ValueError("optimum does not match the problem dimensions")
            object.__setattr__(self, "optimum", parts)


def minmax_as_bilevel(F: Callable, n: int, m: int, optimum=None, name: str = "") -> BiLevelProblem:
    """Recast ``min_x max_y F`` as a bi-level problem with lower objective ``-F``."""

    def G(x, y):
        return -F(x, y)

    return BiLevelProblem(F=F, G=G, n=n, m=m, optimum=optimum, name=name)


def _sq(x):
    return np.sum(x * x, axis=-1)


def _dot(x, y):
    return np.sum(x * y, axis=-1)


def _bilevel(key: str):
    # (F, G, optimum value per coordinate)
    table = {
        "i": (lambda x, y: _sq(x) + _sq(y), lambda x, y: _sq(x - y), 0.0),
        "ii": (lambda x, y: _sq(x - 1.0) + _sq(y - 1.0), lambda x, y: _sq(x - y), 1.0),
        "iii": (lambda x, y: _sq(x) + _sq(y) + 2.0 * _dot(x, y), lambda x, y: _sq(x - y), 0.0),
        "iv": (lambda x, y: ackley(x) + ackley(y), lambda x, y: _sq(x - y), 0.0),
        "v": (
            lambda x, y: rastrigin(x) + rastrigin(y) + 2.0 * _dot(x, y),
            lambda x, y: ackley(x - y),
            0.0,
        ),
        "vi": (lambda x, y: levy(x) + levy(y), lambda x, y: ackley(x - y), 0.0),
    }
    return table[key]


def _minmax(key: str):
    table = {
        "a": lambda x, y: ackley(x) - ackley(y),
        "b": lambda x, y: rastrigin(x) - rastrigin(y) - 2.0 * _dot(x, y),
        "c": lambda x, y: levy(x) - levy(y),
        "d": lambda x, y: _sq(x) - _sq(y) - 2.0 * _dot(x, y),
    }
    return table[key]


def _trilevel(key: str):
    table = {
        "A": (
            lambda x, y, r: _sq(x) + _sq(y),
            lambda x, y, r: levy(x - y),
            lambda x, y, r: levy(r - y),
            0.0,
        ),
        "B": (
            lambda x, y, r: _sq(x) + _sq(y) + _sq(r - x),
            lambda x, y, r: levy(x - y),
            lambda x, y, r: rastrigin(r - y),
            0.0,
        ),
        "C": (
            lambda x, y, r: _sq(x - 1.0) + _sq(y - 1.0) + _sq(r - 1.0),
            lambda x, y, r: _sq(y - x),
            lambda x, y, r: _sq(r - y),
            1.0,
        ),
    }
    return table[key]


def builtin_problem(pid: str, dim: int = 10):
    """Return the benchmark problem with identifier ``pid`` at dimension ``dim``.

    Identifiers ``i``..``vi`` are the bi-level tests, ``A``..``C`` the
    tri-level tests and ``a``..``d`` the min-max functions (returned in
    their bi-level form).  Every problem carries its known optimum.
    """
    dim = int(dim)
    if dim < 1:
        raise ValueError("dim must be positive")
    if pid in BILEVEL_IDS:
        F, G, c = _bilevel(pid)
        opt = np.full(dim, c)
        return BiLevelProblem(F=F, G=G, n=dim, m=dim, optimum=(opt, opt.copy()), name=pid)
    if pid in MINMAX_IDS:
        zero = np.zeros(dim)
        return minmax_as_bilevel(_minmax(pid), dim, dim, optimum=(zero, zero.copy()), name=pid)
    if pid in TRILEVEL_IDS:
        F, G, E, c = _trilevel(pid)
        opt = np.full(dim, c)
        return TriLevelProblem(
            F=F, G=G, E=E, n=dim, m=dim, p=dim, optimum=(opt, opt.copy(), opt.copy()), name=pid
        )
    raise KeyError(f"unknown benchmark identifier {pid!r}")
