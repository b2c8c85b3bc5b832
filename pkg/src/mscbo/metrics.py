"""Error metric and success criterion shared by the solvers and the harness."""

import numpy as np

SUCCESS_THRESHOLD = 0.25


def compute_error(solution, optimum) -> float:
    """Sum of Euclidean distances between matching solution and optimum blocks.

    ``solution`` and ``optimum`` are sequences of vectors, e.g. ``(X*, Y*)``
    and ``(x*, y*)`` for bi-level problems or triples for tri-level ones.
    """
    if len(solution) != len(optimum):
        raise ValueError("solution and optimum have a different number of blocks")
    total = 0.0
    for got, want in zip(solution, optimum):
        got = np.asarray(got, dtype=float)
        want = np.asarray(want, dtype=float)
        if got.shape != want.shape:
            raise ValueError(f"dimension mismatch: {got.shape} vs {want.shape}")
        total += float(np.linalg.norm(got - want))
    return total


def is_success(error: float) -> bool:
    return bool(error <= SUCCESS_THRESHOLD)
