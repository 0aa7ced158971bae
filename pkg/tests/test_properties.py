import math

import numpy as np
from hypothesis import given, settings, strategies as st

from polya_efron import efron_engine as ee
from polya_efron import theorem_suite as ts
from polya_efron.density_core import check_log_concave, make_pmf
from polya_efron.numerics import det_sign_scaled, integrate, sample_ordered_tuples
from polya_efron.polya_checks import Sampling, check_pf_n

from conftest import density

FAST = settings(max_examples=25, deadline=None)

matrices = st.integers(2, 5).flatmap(
    lambda n: st.lists(st.lists(st.floats(-10, 10), min_size=n, max_size=n),
                       min_size=n, max_size=n))


@FAST
@given(matrices, st.lists(st.floats(-200, 200), min_size=5, max_size=5))
def test_det_sign_invariant_under_positive_row_scaling(rows, logs):
    a = np.array(rows)
    base = det_sign_scaled(a)
    scale = np.exp(np.array(logs[:a.shape[0]]))
    scaled = det_sign_scaled(a * scale[:, None])
    if abs(base.normalized_det) > 1e-8:
        assert scaled.sign == base.sign


@FAST
@given(matrices)
def test_det_matches_numpy(rows):
    a = np.array(rows)
    ref = np.linalg.det(a)
    got = det_sign_scaled(a).value
    assert abs(got - ref) <= 1e-9 * max(1.0, np.abs(a).max() ** a.shape[0])


@FAST
@given(st.floats(-5, 5), st.floats(0.1, 5), st.integers(0, 6))
def test_polynomial_integrals(lo, width, k):
    res = integrate(lambda x: x**k, (lo, lo + width))
    exact = ((lo + width) ** (k + 1) - lo ** (k + 1)) / (k + 1)
    assert abs(res.value - exact) <= 1e-9 * max(1.0, abs(exact))


@FAST
@given(st.integers(2, 5), st.integers(0, 10_000), st.floats(0, 0.2))
def test_sampled_tuples_respect_gap(n, seed, gap):
    for t in sample_ordered_tuples(n, (-1.0, 1.0), 5, seed, gap):
        assert np.all(np.diff(t.as_array()) >= gap)


@FAST
@given(st.floats(0.2, 20))
def test_poisson_log_concave_and_thinning(lam):
    p = make_pmf("poisson", {"lam": lam})
    assert check_log_concave(p).passed
    s = int(lam) + 3
    c = ee.discrete_conditional(ee.identity_x(), p, p, s)
    assert abs(c.phi_value - s / 2) <= 1e-12 * max(1, s)


@FAST
@given(st.floats(0.3, 3), st.floats(-2, 2))
def test_gaussian_conditional_mean_is_linear(sigma, s):
    # X ~ N(0, sigma^2), Y ~ N(0, 1): E[X | s] = s sigma^2 / (1 + sigma^2)
    f, g = density("gaussian", mu=0.0, sigma=sigma), density("gaussian", mu=0.0, sigma=1.0)
    c = ee.conditional_expectation_2d(ee.identity_x(), f, g, s)
    assert abs(c.phi_value - s * sigma**2 / (1 + sigma**2)) <= 1e-9


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_staircase_efron_random_seed(seed):
    gauss = density("gaussian", mu=0.0, sigma=1.0)
    rep = ts.verify_strong_efron(ee.staircase(seed, 6), gauss, gauss, np.linspace(-4, 4, 17))
    assert rep.passed


@settings(max_examples=10, deadline=None)
@given(st.floats(0.2, 4), st.integers(0, 1000))
def test_laplace_pf2_any_scale(b, seed):
    assert check_pf_n(density("laplace", mu=0.0, b=b), 2, Sampling(100, seed)).passed


@FAST
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=12),
       st.floats(0, 1e-3), st.floats(1e-3, 1))
def test_tolerance_monotone(gs, atol, extra):
    s = np.arange(len(gs), dtype=float)
    z = np.zeros(len(gs))
    _, p1, *_ = ts.assess_monotone(s, gs, z, z.astype(bool), atol, 0.0)
    _, p2, *_ = ts.assess_monotone(s, gs, z, z.astype(bool), atol + extra, 0.0)
    assert p2 or not p1


@FAST
@given(st.floats(0.05, 3))
def test_exp_tilt_fiber_is_constant(a):
    lap = density("laplace", mu=0.0, b=1.0)
    for s in (-1.0, 0.5, 2.0):
        c = ee.conditional_expectation_2d(ee.exp_tilt(a), lap, lap, s)
        assert math.isclose(c.phi_value * math.exp(-a * s), 1.0, rel_tol=1e-12)
