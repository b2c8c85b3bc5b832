"""Exponentially weighted consensus points.

The weights ``exp(-a * f)`` are computed after subtracting the minimum
objective value, so the best particle always carries unnormalized weight
exactly 1 and the normalizer never vanishes, even at ``a = 1e15``.

Every function accepts leading batch axes; the particle axis is the
second-to-last axis of an ensemble and the last axis of a weight vector.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "NonFiniteObjectiveError",
    "stabilized_weights",
    "weighted_mean",
    "y_consensus",
    "x_consensus",
    "fla_update",
]

# exp(x) is subnormal or zero below this
_EXP_FLOOR = -745.0


class NonFiniteObjectiveError(FloatingPointError):
    """An objective returned NaN or +-Inf for some particle.

    ``index`` is the position of the first offending entry in the array of
    objective values (a tuple when the values carry batch axes).
    """

    def __init__(self, message: str, index=None):
        super().__init__(message)
        self.index = index


def stabilized_weights(values, sharpness: float) -> np.ndarray:
    """Normalized weights proportional to ``exp(-sharpness * (values - min(values)))``.

    Parameters
    ----------
    values : array_like, shape (..., K)
        Objective evaluations; the last axis indexes particles.
    sharpness : float
        Nonnegative inverse temperature (``alpha`` or ``beta``).

    Returns
    -------
    ndarray, shape (..., K)
        Nonnegative weights summing to one along the last axis.
    """
    values = np.asarray(values, dtype=float)
    if sharpness < 0:
        raise ValueError("sharpness must be nonnegative")
    finite = np.isfinite(values)
    if not finite.all():
        bad = np.argwhere(~finite)[0]
        index = int(bad[0]) if bad.size == 1 else tuple(int(b) for b in bad)
        raise NonFiniteObjectiveError(f"non-finite objective value at particle {index}", index)
    shifted = values - values.min(axis=-1, keepdims=True)
    with np.errstate(over="ignore", under="ignore"):
        expo = -sharpness * shifted
        live = expo >= _EXP_FLOOR
        # exp is only evaluated where it can be nonzero; subnormal work is slow
        w = np.zeros_like(expo)
        w[live] = np.exp(expo[live])
    return w / w.sum(axis=-1, keepdims=True)


def weighted_mean(particles, weights) -> np.ndarray:
    """``sum_k weights[k] * particles[k]`` over the particle axis."""
    particles = np.asarray(particles, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if particles.ndim < 2 or weights.shape[-1] != particles.shape[-2]:
        raise ValueError(
            f"weights of length {weights.shape[-1:]} do not match "
            f"ensemble of shape {particles.shape}"
        )
    # Offsets from the heaviest particle: coinciding particles and a pure argmin
    # selection then reproduce that particle exactly instead of up to rounding.
    batch = np.broadcast_shapes(weights.shape[:-1], particles.shape[:-2])
    particles = np.broadcast_to(particles, batch + particles.shape[-2:])
    lead = np.argmax(weights, axis=-1)[..., None, None]
    anchor = np.take_along_axis(particles, np.broadcast_to(lead, batch + (1, 1)), axis=-2)
    return anchor[..., 0, :] + np.einsum("...k,...kd->...d", weights, particles - anchor)


def y_consensus(x, Y, G, beta: float) -> np.ndarray:
    """Consensus of the lower-level ensemble ``Y`` attached to the upper state ``x``.

    ``x`` has shape ``(..., n)`` and ``Y`` shape ``(..., M, m)``; the result
    has shape ``(..., m)``.
    """
    x = np.asarray(x, dtype=float)
    Y = np.asarray(Y, dtype=float)
    w = stabilized_weights(G(x[..., None, :], Y), beta)
    return weighted_mean(Y, w)


def x_consensus(X, y_ref, F, alpha: float, kappa: float = 1.0) -> np.ndarray:
    """Consensus of the upper ensemble ``X`` (shape ``(N, n)``) scored at ``y_ref / kappa``.

    ``y_ref`` may carry batch axes ``(..., m)``: one consensus point is
    returned per reference, with shape ``(..., n)``.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y_ref, dtype=float)
    if kappa != 1.0:
        y = y / kappa
    w = stabilized_weights(F(X, y[..., None, :]), alpha)
    return weighted_mean(X, w)


def fla_update(prev, fresh, gamma: float) -> np.ndarray:
    """Forward-looking average ``(1 - gamma) * prev + gamma * fresh``."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    prev = np.asarray(prev, dtype=float)
    fresh = np.asarray(fresh, dtype=float)
    if prev.shape != fresh.shape:
        raise ValueError(f"shape mismatch: {prev.shape} vs {fresh.shape}")
    if gamma == 1.0:
        return fresh.copy()
    # same value as (1 - gamma) * prev + gamma * fresh, but a fixed point
    # (prev == fresh) is reproduced exactly
    return prev + gamma * (fresh - prev)
