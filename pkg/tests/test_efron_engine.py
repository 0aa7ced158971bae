import math

import numpy as np
import pytest
from scipy import integrate as sci
from scipy import stats

from polya_efron import efron_engine as ee
from polya_efron.density_core import make_pmf

from conftest import density


def quad_conditional(phi, f, g, s, lo, hi, points=None):
    """Independent oracle: scipy's QUADPACK on numerator and denominator."""
    w = lambda x: f.pdf(x) * g.pdf(s - x)
    num, _ = sci.quad(lambda x: phi(x, s - x) * w(x), lo, hi, points=points, limit=400,
                      epsabs=0, epsrel=1e-12)
    den, _ = sci.quad(w, lo, hi, points=points, limit=400, epsabs=0, epsrel=1e-12)
    return num / den


# -- exact oracles ---------------------------------------------------------------

def test_iid_exponential_conditional_law_is_uniform(exp1):
    # given X + Y = s, X is uniform on [0, s]: E[X] = s/2, E[XY] = s^2/6
    for s in (0.3, 3.0, 9.5):
        assert ee.conditional_expectation_2d(ee.identity_x(), exp1, exp1, s).phi_value == \
            pytest.approx(s / 2, abs=1e-12)
        assert ee.conditional_expectation_2d(ee.product(), exp1, exp1, s).phi_value == \
            pytest.approx(s * s / 6, rel=1e-10)


def test_gaussian_conditional_moments(gauss):
    # X | X+Y=s ~ N(s/2, 1/2)
    for s in (-3.0, 0.0, 2.0):
        assert ee.conditional_expectation_2d(ee.of_x(lambda x: x * x), gauss, gauss, s) \
            .phi_value == pytest.approx(s * s / 4 + 0.5, abs=1e-10)
        assert ee.conditional_expectation_2d(ee.product(), gauss, gauss, s).phi_value == \
            pytest.approx(s * s / 4 - 0.5, abs=1e-10)


def test_exp_tilt_fiber_constancy(unif):
    curve = ee.conditional_curve(ee.exp_tilt(0.7), unif, unif, np.linspace(0.05, 1.95, 11))
    np.testing.assert_allclose([c.phi_value * math.exp(-0.7 * c.s) for c in curve], 1.0,
                               atol=1e-12)


def test_constant_phi(lap, logis):
    c = ee.conditional_expectation_2d(ee.constant(2.5), lap, logis, 0.7)
    assert c.phi_value == pytest.approx(2.5, abs=1e-13)


def test_matches_quadpack_on_mixed_pair(lap, gamma2):
    phi = ee.staircase(7, 6, (-2, 6))
    s = 2.3
    ours = ee.conditional_expectation_2d(phi, gamma2, lap, s)
    pts = sorted(set([0.0, s] + list(phi.kinks(s))))
    ref = quad_conditional(phi, gamma2, lap, s, 0.0, 80.0, [p for p in pts if 0 < p < 80])
    assert ours.phi_value == pytest.approx(ref, abs=1e-8)
    assert ours.err_estimate < 1e-8


def test_mass_is_convolution_density(exp1, gauss):
    # Exp * Exp = Gamma(2): density s e^{-s}; N * N = N(0, 2)
    assert ee.conditional_expectation_2d(ee.constant(), exp1, exp1, 2.0).denominator_mass == \
        pytest.approx(2 * math.exp(-2), rel=1e-10)
    assert ee.conv_density_at(gauss, gauss, 1.3).value == \
        pytest.approx(stats.norm(0, math.sqrt(2)).pdf(1.3), rel=1e-10)


def test_skip_below_mass_floor_and_outside_support(unif):
    out = ee.conditional_expectation_2d(ee.identity_x(), unif, unif, 2.5)
    assert out.skipped and out.phi_value != out.phi_value
    assert ee.conv_density_at(unif, unif, 3.0).empty


def test_empty_curve_raises(unif):
    with pytest.raises(ee.EmptyCurveError, match="empty curve"):
        ee.conditional_curve(ee.identity_x(), unif, unif, [2.5, 3.0])


def test_curve_skips_are_recorded_not_fatal(unif):
    curve = ee.conditional_curve(ee.identity_x(), unif, unif, [0.5, 1.0, 2.5])
    assert [c.skipped for c in curve] == [False, False, True]
    assert curve[2].to_json()["phi"] is None


def test_super_exponential_phi_needs_compact_support(gauss, unif):
    with pytest.raises(ee.PhiError):
        ee.conditional_curve(ee.cubic(1, 2), gauss, gauss, [0.0])
    ee.conditional_curve(ee.cubic(1, 2), unif, unif, [1.0])


def test_grid_must_increase(exp1):
    with pytest.raises(ValueError):
        ee.conditional_curve(ee.identity_x(), exp1, exp1, [1.0, 1.0])


def test_thread_pool_gives_identical_curve(gauss, monkeypatch):
    grid = np.linspace(-3, 3, 13)
    phi = ee.staircase(3, 5)
    serial = ee.conditional_curve(phi, gauss, gauss, grid, workers=1)
    pooled = ee.conditional_curve(phi, gauss, gauss, grid, workers=4)
    assert serial == pooled
    monkeypatch.setenv("POLYA_EFRON_THREADS", "3")
    assert ee.thread_count() == 3


# -- phi catalog -------------------------------------------------------------------

def test_phi_json_round_trip():
    for phi in (ee.identity_x(), ee.product(), ee.exp_tilt(0.4), ee.cubic(1, 2),
                ee.staircase(42, 8), ee.tilted(ee.staircase(1, 3, (0, 9), True), 0.3)):
        back = ee.phi_from_json(phi.to_json())
        x, y = np.meshgrid(np.linspace(-1, 2, 7), np.linspace(-1, 2, 7))
        np.testing.assert_array_equal(back(x, y), phi(x, y))


def test_unknown_phi_lists_catalog():
    with pytest.raises(ee.PhiError, match="valid: identity_x"):
        ee.phi_from_json({"name": "nope"})


def test_tabulated_phi_is_bilinear():
    phi = ee.tabulated_phi([0, 1], [0, 1], [[0, 1], [2, 3]])
    assert phi(0.5, 0.5) == pytest.approx(1.5)
    assert phi(5.0, -5.0) == pytest.approx(2.0)  # clamped to the corner


# -- discrete path ---------------------------------------------------------------

def test_poisson_binomial_thinning_is_exact(pois3):
    # X | X+Y=s ~ Bin(s, 1/2)
    for s in range(0, 41):
        c = ee.discrete_conditional(ee.identity_x(), pois3, pois3, s)
        assert c.err_estimate == 0.0
        assert abs(c.phi_value - s / 2) <= 1e-12
    assert ee.discrete_conditional(ee.identity_x(), pois3, pois3, 10).phi_value == 5.0


def test_discrete_outside_sumset(pois3):
    c = ee.discrete_conditional(ee.identity_x(), pois3, pois3, -1)
    assert c.skipped and c.flag == "outside sumset"


def test_discrete_convolution_of_fair_coins():
    b = make_pmf("binomial", {"m": 1, "p": 0.5})
    assert ee.convolve_discrete(b, b).weights == (0.25, 0.5, 0.25)


def test_poisson_convolution_is_poisson(pois3):
    r = ee.convolve_discrete(pois3, pois3)
    k = np.arange(r.k_min, 21)
    np.testing.assert_allclose(r.as_array()[:k.size], stats.poisson(6.0).pmf(k), rtol=1e-11)


def test_unequal_rates_closed_form():
    e1, e2 = density("exponential", rate=1.0), density("exponential", rate=2.0)
    cont = ee.conditional_expectation_2d(ee.identity_x(), e1, e2, 3.0).phi_value
    # X | X+Y=s has density proportional to e^{x} on [0, s]
    oracle = 3.0 / (1 - math.exp(-3.0)) - 1.0
    assert cont == pytest.approx(oracle, rel=1e-10)


# -- continuous convolution --------------------------------------------------------

def test_convolve_exponentials_matches_gamma(exp1):
    grid = np.linspace(0.0, 20.0, 401)
    r = ee.convolve(exp1, exp1, grid)
    s = grid[grid >= 0.05]
    np.testing.assert_allclose(r.pdf(s), s * np.exp(-s), atol=1e-12)


def test_convolve_uniforms_is_triangle(unif):
    grid = np.linspace(0.0, 2.0, 41)
    r = ee.convolve(unif, unif, grid)
    np.testing.assert_allclose(r.pdf(grid), 1 - np.abs(grid - 1), atol=1e-12)


def test_lattice_exponentials_converge_to_continuous():
    # h * geometric(1 - e^{-rate h}) tends to Exp(rate); E[X | s] converges at O(h)
    e1, e2 = density("exponential", rate=1.0), density("exponential", rate=2.0)
    cont = ee.conditional_expectation_2d(ee.identity_x(), e1, e2, 3.0).phi_value
    errs = []
    for h in (0.02, 0.01):
        k1 = make_pmf("geometric", {"p": -math.expm1(-h)})
        k2 = make_pmf("geometric", {"p": -math.expm1(-2 * h)})
        disc = ee.discrete_conditional(ee.identity_x(), k1, k2, round(3.0 / h)).phi_value * h
        errs.append(abs(disc - cont))
    assert errs[1] < 0.01
    assert errs[1] < 0.6 * errs[0]
