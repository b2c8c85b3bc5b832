import numpy as np
import pytest

from mscbo.bilevel import NumericalFailure
from mscbo.objectives import TriLevelProblem, builtin_problem
from mscbo.trilevel import TriLevelParams, run_trilevel

SMALL = dict(N=10, M=6, P=4, Tx=1.0, Ty=0.2, Tr=0.2)


def test_defaults_match_benchmark_settings():
    p = TriLevelParams()
    assert (p.alpha1, p.alpha2, p.alpha3) == (1e15, 1e15, 1e15)
    assert (p.Tx, p.Ty, p.Tr, p.dt) == (50.0, 0.5, 0.5, 0.1)
    assert (p.N, p.M, p.P) == (100, 50, 25)
    assert (p.lam, p.sigma, p.gamma, p.delta, p.Q) == (1.0, 2.0, 0.75, 1e-5, 10.0)
    assert (p.init_lo, p.init_hi) == (-1.0, 3.0)


@pytest.mark.parametrize("bad", [dict(N=1), dict(P=0), dict(Tr=0.01), dict(gamma=1.5), dict(Q=0.0)])
def test_params_validation(bad):
    with pytest.raises(ValueError):
        TriLevelParams(**bad)


def test_population_counts_follow_the_shared_representative_layout():
    p = TriLevelParams(**SMALL)
    res = run_trilevel(builtin_problem("A", 3), p, seed=0)
    assert res.X_final.shape == (10, 3)
    assert res.Y_final.shape == (10, 6, 3)  # N * M middle particles
    assert res.R_final.shape == (10, 4, 3)  # N * P bottom particles, not N * M * P
    assert res.r_final.shape == (10, 3) and res.v_final.shape == (10, 3)


def test_zero_noise_start_at_optimum_is_fixed():
    p = TriLevelParams(sigma=0.0, init_lo=1.0, init_hi=1.0, **SMALL)
    res = run_trilevel(builtin_problem("C", 4), p, seed=5)
    for block in (res.x_star, res.y_star, res.r_star):
        np.testing.assert_array_equal(block, np.ones(4))
    assert res.error == 0.0 and res.success


def test_debug_checks_hold_along_a_run():
    # every weight vector is a probability vector and every consensus stays in its hull
    p = TriLevelParams(alpha1=3.0, alpha2=3.0, alpha3=3.0, **SMALL)
    for pid in ("A", "B", "C"):
        run_trilevel(builtin_problem(pid, 2), p, seed=1, debug=True)
    run_trilevel(builtin_problem("B", 2), TriLevelParams(**SMALL), seed=1, debug=True)


def test_seeded_determinism_across_workers():
    p = TriLevelParams(**SMALL)
    prob = builtin_problem("B", 3)
    a = run_trilevel(prob, p, seed=9)
    b = run_trilevel(prob, p, seed=9, workers=3)
    for name in ("x_star", "y_star", "r_star", "X_final", "Y_final", "R_final"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_error_sums_three_blocks():
    p = TriLevelParams(**SMALL)
    res = run_trilevel(builtin_problem("C", 2), p, seed=2, trace=True)
    expected = sum(np.linalg.norm(b - 1.0) for b in (res.x_star, res.y_star, res.r_star))
    assert res.error == pytest.approx(expected, rel=1e-15)
    assert res.trace["mean_x"].shape == (11, 2)


def test_quadratic_cascade_converges_at_small_scale():
    p = TriLevelParams(N=30, M=10, P=8, Tx=10.0)
    res = run_trilevel(builtin_problem("C", 2), p, seed=0)
    assert res.error <= 0.25


def test_non_finite_objective_is_reported():
    def E(x, y, r):
        return np.where(np.sum(r, axis=-1) > 0.0, np.inf, 0.0)

    prob = TriLevelProblem(F=lambda x, y, r: np.sum(x * x, axis=-1), G=lambda x, y, r: np.sum(y * y, axis=-1),
                           E=E, n=2, m=2, p=2)
    with pytest.raises(NumericalFailure, match="outer iteration 0"):
        run_trilevel(prob, TriLevelParams(**SMALL), seed=0)
