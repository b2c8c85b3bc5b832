"""Truncation operators and the anisotropic Euler-Maruyama CBO step."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "StepParams",
    "psi_truncate",
    "phi_truncate",
    "noise_scale",
    "cbo_em_step",
    "sample_increment",
    "substreams",
    "step_count",
]


@dataclass(frozen=True)
class StepParams:
    """Coefficients of one CBO update: drift rate, noise strength, noise floor,
    truncation radius and time step."""

    lam: float
    sigma: float
    delta: float
    R: float
    dt: float

    def __post_init__(self):
        if self.R <= 0 or self.dt <= 0:
            raise ValueError("R and dt must be strictly positive")
        # lam = 0 (no drift) is allowed so that a zero vector field can be simulated
        if self.lam < 0 or self.sigma < 0 or self.delta < 0:
            raise ValueError("lam, sigma and delta must be nonnegative")


def psi_truncate(v, R: float) -> np.ndarray:
    """Clamp every component of ``v`` to ``[-R, R]``."""
    return np.clip(v, -R, R)


def phi_truncate(v, R: float) -> np.ndarray:
    """Componentwise ``min(|v_k|, R)``."""
    return np.minimum(np.abs(v), R)


def noise_scale(v, delta: float, R: float) -> np.ndarray:
    """Diagonal of the truncated diffusion matrix, ``delta + min(|v_k|, R)``."""
    return delta + phi_truncate(v, R)


def cbo_em_step(particle, consensus, p: StepParams, noise) -> np.ndarray:
    """One Euler-Maruyama step of anisotropic CBO toward ``consensus``.

    ``noise`` is the Brownian increment (variance ``p.dt`` per component),
    sampled by the caller.  ``particle`` may be a whole ensemble; ``consensus``
    must broadcast against it and ``noise`` must match it exactly.
    """
    particle = np.asarray(particle, dtype=float)
    consensus = np.asarray(consensus, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if noise.shape != particle.shape:
        raise ValueError(f"noise shape {noise.shape} != particle shape {particle.shape}")
    try:
        if np.broadcast_shapes(particle.shape, consensus.shape) != particle.shape:
            raise ValueError
    except ValueError:
        raise ValueError(
            f"consensus shape {consensus.shape} does not fit particle shape {particle.shape}"
        ) from None
    diff = particle - consensus
    drift = np.clip(diff, -p.R, p.R) * (p.lam * p.dt)
    diffusion = (p.delta + np.minimum(np.abs(diff), p.R)) * noise
    if p.sigma != 1.0:
        diffusion = p.sigma * diffusion
    return particle - drift + diffusion


def sample_increment(shape, dt: float, stream: np.random.Generator) -> np.ndarray:
    """Gaussian increment with independent ``N(0, dt)`` components."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return stream.standard_normal(shape) * math.sqrt(dt)


def substreams(seed: int, count: int) -> list:
    """``count`` statistically independent generators derived from ``seed``.

    Stream ``k`` depends only on ``(seed, k)``, so work can be split across
    workers without changing any draw.
    """
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def step_count(T: float, dt: float, name: str = "T") -> int:
    """Number of steps ``floor(T / dt)``; warns when ``T`` is not a multiple of ``dt``."""
    if dt <= 0 or T <= 0:
        raise ValueError("horizon and step must be positive")
    ratio = T / dt
    k = math.floor(ratio + 1e-9)
    if abs(ratio - round(ratio)) > 1e-9:
        warnings.warn(
            f"{name}={T} is not an integer multiple of the step {dt}; using {k} steps",
            RuntimeWarning,
            stacklevel=2,
        )
    return k
