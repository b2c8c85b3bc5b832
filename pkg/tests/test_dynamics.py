import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mscbo.dynamics import (
    StepParams,
    cbo_em_step,
    noise_scale,
    phi_truncate,
    psi_truncate,
    sample_increment,
    step_count,
    substreams,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)
vecs = arrays(np.float64, st.integers(1, 8), elements=finite)
radius = st.floats(1e-3, 1e3)


def test_truncation_examples():
    np.testing.assert_array_equal(psi_truncate(np.array([3.0, -15.0]), 10.0), [3.0, -10.0])
    np.testing.assert_array_equal(psi_truncate(np.zeros(3), 10.0), np.zeros(3))
    np.testing.assert_array_equal(psi_truncate(np.array([10.0, -10.0]), 10.0), [10.0, -10.0])
    np.testing.assert_array_equal(phi_truncate(np.array([-3.0, 15.0]), 10.0), [3.0, 10.0])
    np.testing.assert_array_equal(phi_truncate(np.zeros(2), 10.0), np.zeros(2))
    np.testing.assert_array_equal(phi_truncate(np.array([10.0]), 10.0), [10.0])


def test_noise_scale_examples():
    np.testing.assert_array_equal(noise_scale(np.zeros(3), 1e-5, 10.0), np.full(3, 1e-5))
    np.testing.assert_array_equal(noise_scale(np.array([2.0]), 0.0, 10.0), [2.0])
    np.testing.assert_allclose(noise_scale(np.array([20.0]), 0.1, 10.0), [10.1])


@given(vecs, radius)
def test_psi_idempotent_and_bounded(v, R):
    once = psi_truncate(v, R)
    np.testing.assert_array_equal(psi_truncate(once, R), once)
    assert np.abs(once).max() <= R


@given(vecs, radius)
def test_phi_range(v, R):
    out = phi_truncate(v, R)
    assert np.all(out >= 0) and np.all(out <= R)


@given(vecs, st.floats(0.0, 10.0), radius)
def test_noise_scale_floor(v, delta, R):
    out = noise_scale(v, delta, R)
    assert np.all(out >= delta)
    if delta > 0:
        assert np.all(out > 0)


def test_step_params_validation():
    for bad in (dict(lam=-1.0), dict(R=0.0), dict(dt=0.0), dict(sigma=-0.1), dict(delta=-1.0)):
        kw = dict(lam=1.0, sigma=1.0, delta=0.0, R=1.0, dt=0.1) | bad
        with pytest.raises(ValueError):
            StepParams(**kw)


def test_em_step_examples():
    p = StepParams(lam=1.0, sigma=3.0, delta=0.0, R=10.0, dt=0.1)
    x = np.array([0.4, -1.3])
    np.testing.assert_array_equal(cbo_em_step(x, x, p, np.array([0.7, -2.0])), x)
    q = StepParams(lam=1.0, sigma=0.0, delta=0.0, R=10.0, dt=0.1)
    assert cbo_em_step(np.array([1.0]), np.zeros(1), q, np.zeros(1))[0] == pytest.approx(0.9, abs=1e-16)
    q = StepParams(lam=1.0, sigma=0.0, delta=0.0, R=0.5, dt=0.1)
    assert cbo_em_step(np.array([1.0]), np.zeros(1), q, np.zeros(1))[0] == pytest.approx(0.95, abs=1e-16)


def test_em_step_diffusion_is_componentwise():
    p = StepParams(lam=0.5, sigma=2.0, delta=0.1, R=1.0, dt=0.2)
    x, c, w = np.array([3.0, 0.2]), np.array([0.0, 0.0]), np.array([1.0, -1.0])
    expected = x - 0.5 * np.array([1.0, 0.2]) * 0.2 + 2.0 * np.array([1.1, 0.3]) * w
    np.testing.assert_allclose(cbo_em_step(x, c, p, w), expected, rtol=1e-15)


def test_em_step_shape_errors():
    p = StepParams(1.0, 1.0, 0.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        cbo_em_step(np.zeros(3), np.zeros(2), p, np.zeros(3))
    with pytest.raises(ValueError):
        cbo_em_step(np.zeros(3), np.zeros(3), p, np.zeros(2))
    # a single consensus broadcast over a whole ensemble is fine
    assert cbo_em_step(np.ones((4, 3)), np.zeros(3), p, np.zeros((4, 3))).shape == (4, 3)


@given(st.integers(-2**10, 2**10), st.integers(-2**10, 2**10), st.sampled_from([1, 2, 3, 5, 9]))
def test_zero_noise_contraction_exact(a, b, k):
    # lam * dt = 1/4 and dyadic coordinates: every operation is exact
    p = StepParams(lam=0.5, sigma=0.0, delta=0.0, R=4096.0, dt=0.5)
    x, c = np.array([a / 8.0, b / 8.0]), np.array([b / 16.0, -a / 16.0])
    for _ in range(k):
        out = cbo_em_step(x, c, p, np.zeros(2))
        np.testing.assert_array_equal(out - c, 0.75 * (x - c))
        x = out


@given(arrays(np.float64, 3, elements=st.floats(-50, 50)), arrays(np.float64, 3, elements=st.floats(-50, 50)),
       st.floats(0.01, 5.0), st.floats(0.001, 0.19))
def test_zero_noise_contraction_generic(x, c, lam, dt):
    p = StepParams(lam=lam, sigma=0.0, delta=0.3, R=1e3, dt=dt)
    out = cbo_em_step(x, c, p, np.ones(3))
    lhs = np.linalg.norm(out - c)
    assert lhs == pytest.approx((1 - lam * dt) * np.linalg.norm(x - c), rel=1e-12, abs=1e-12)


@given(arrays(np.float64, 4, elements=st.floats(-20, 20)), arrays(np.float64, 4, elements=st.floats(-20, 20)),
       arrays(np.float64, 4, elements=st.floats(-3, 3)))
def test_em_step_odd_symmetry(x, c, w):
    p = StepParams(lam=1.0, sigma=2.0, delta=1e-5, R=10.0, dt=0.1)
    np.testing.assert_array_equal(cbo_em_step(-x, -c, p, -w), -cbo_em_step(x, c, p, w))


def test_increment_moments():
    for dt in (0.1, 1e-3):
        g = substreams(5, 1)[0]
        w = sample_increment(100_000, dt, g)
        assert w.var() == pytest.approx(dt, rel=0.05)
        assert abs(w.mean()) <= 4 * np.sqrt(dt / 100_000)
    with pytest.raises(ValueError):
        sample_increment(3, 0.0, substreams(0, 1)[0])


def test_substreams_are_reproducible_and_distinct():
    a = [g.standard_normal(4) for g in substreams(11, 3)]
    b = [g.standard_normal(4) for g in substreams(11, 3)]
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u, v)
    assert not np.array_equal(a[0], a[1])
    # stream k does not depend on how many streams were requested
    np.testing.assert_array_equal(substreams(11, 7)[2].standard_normal(4), a[2])


def test_step_count():
    assert step_count(50.0, 0.1) == 500
    assert step_count(0.5, 0.1) == 5
    with pytest.warns(RuntimeWarning):
        assert step_count(0.55, 0.1) == 5
