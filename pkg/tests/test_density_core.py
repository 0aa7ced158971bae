import json
import math

import numpy as np
import pytest
from scipy import integrate as sci
from scipy import stats

from polya_efron.density_core import (DensityError, DensitySpec, Pmf, check_log_concave,
                                      check_log_concave_continuous, load_spec, make_density,
                                      make_pmf, tabulate, tabulated_mass)

from conftest import density

SCIPY_REF = [
    ("gaussian", {"mu": 0.5, "sigma": 2.0}, stats.norm(0.5, 2.0)),
    ("exponential", {"rate": 1.5}, stats.expon(scale=1 / 1.5)),
    ("laplace", {"mu": -1.0, "b": 0.5}, stats.laplace(-1.0, 0.5)),
    ("uniform", {"lo": -1.0, "hi": 2.0}, stats.uniform(-1.0, 3.0)),
    ("logistic", {"mu": 0.0, "scale": 2.0}, stats.logistic(0.0, 2.0)),
    ("gamma", {"shape": 2.5, "rate": 2.0}, stats.gamma(2.5, scale=0.5)),
]


@pytest.mark.parametrize("family, params, ref", SCIPY_REF)
def test_logpdf_matches_scipy(family, params, ref):
    d = density(family, **params)
    x = np.linspace(d.central[0] + 1e-3, d.central[1] - 1e-3, 57)
    np.testing.assert_allclose(d.logpdf(x), ref.logpdf(x), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("family, params, ref", SCIPY_REF)
def test_window_keeps_all_but_negligible_mass(family, params, ref):
    d = density(family, **params)
    lo, hi = d.window
    assert ref.cdf(lo) + ref.sf(hi) <= 1e-25
    mass, _ = sci.quad(d.pdf, lo, hi, points=list(d.kinks) or None, limit=200)
    assert mass == pytest.approx(1.0, abs=1e-8)


def test_zero_outside_support(exp1, unif):
    assert exp1.logpdf(-0.1) == -np.inf
    assert unif.pdf(1.5) == 0.0 and unif.pdf(0.5) == 1.0


@pytest.mark.parametrize("family, params, field", [
    ("gaussian", {"sigma": -1.0}, "sigma"),
    ("exponential", {"rate": 0.0}, "rate"),
    ("uniform", {"lo": 1.0, "hi": 0.0}, "lo"),
    ("gamma", {"shape": 0.5}, "shape"),
    ("gaussian", {"mu": math.nan}, "mu"),
])
def test_invalid_params_name_the_field(family, params, field):
    with pytest.raises(DensityError) as info:
        make_density(DensitySpec(family, params))
    assert info.value.field == field


def test_unknown_family_lists_valid_names():
    with pytest.raises(DensityError, match="valid: gaussian"):
        make_density({"family": "cauchy"})


def test_tabulated_mass_exact_for_log_linear_pieces():
    # exp(-x) on [0, 2] is log-linear: the tabulated mass is exact
    grid = np.linspace(0.0, 2.0, 5)
    assert tabulated_mass(grid, -grid) == pytest.approx(1 - math.exp(-2.0), rel=1e-14)


def test_tabulated_density_mass_validation():
    grid = np.linspace(-1, 1, 11)
    with pytest.raises(DensityError, match="total mass"):
        make_density(DensitySpec("tabulated", grid=tuple(grid), log_values=tuple(0 * grid)))
    d = make_density(tabulate(lambda x: 0 * x, grid))
    assert d.mass == pytest.approx(1.0, abs=1e-14)
    assert d.pdf(0.3) == pytest.approx(0.5)


def test_tabulated_grid_too_short():
    with pytest.raises(DensityError, match="grid too short"):
        make_density(DensitySpec("tabulated", grid=(0.0, 1.0), log_values=(0.0, 0.0)))


def test_tabulated_interpolates_log_linearly():
    grid = np.linspace(0.0, 30.0, 301)
    d = make_density(tabulate(lambda x: -x, grid))
    x = np.array([0.05, 3.333, 17.77])
    np.testing.assert_allclose(d.pdf(x), np.exp(-x) / (1 - math.exp(-30)), rtol=1e-12)


def test_json_round_trip(tmp_path):
    d = density("laplace", mu=0.0, b=2.0)
    path = tmp_path / "lap.json"
    path.write_text(json.dumps(d.to_json()))
    back = load_spec(str(path))
    np.testing.assert_array_equal(back.logpdf([-1.0, 3.0]), d.logpdf([-1.0, 3.0]))


# -- pmfs ----------------------------------------------------------------------

def test_poisson_matches_scipy_and_accounts_for_truncation(pois3):
    k = np.arange(pois3.k_min, pois3.k_max + 1)
    np.testing.assert_allclose(pois3.as_array(), stats.poisson(3.0).pmf(k), rtol=1e-12)
    assert math.fsum(pois3.weights) + pois3.truncated_mass == pytest.approx(1.0, abs=1e-15)


def test_binomial_exact():
    p = make_pmf("binomial", {"m": 4, "p": 0.5})
    assert p.weights == (1 / 16, 4 / 16, 6 / 16, 4 / 16, 1 / 16)


def test_geometric_weights():
    p = make_pmf("geometric", {"p": 0.25})
    assert p(0) == 0.25 and p(3) == pytest.approx(0.25 * 0.75**3)


def test_table_normalised_with_offset():
    p = make_pmf("table", {"weights": [1, 2, 1], "k_min": -1})
    assert p(-1) == 0.25 and p(0) == 0.5 and p(2) == 0.0
    assert list(p.support) == [-1, 0, 1]


@pytest.mark.parametrize("weights, msg", [([], "empty table"), ([1, -1, 2], "negative weight")])
def test_table_errors(weights, msg):
    with pytest.raises(DensityError, match=msg):
        make_pmf("table", {"weights": weights})


def test_pmf_sum_validated():
    with pytest.raises(DensityError):
        Pmf(0, (0.5, 0.4))


# -- log-concavity ---------------------------------------------------------------

@pytest.mark.parametrize("fixture", ["gauss", "exp1", "unif", "lap", "logis", "gamma2"])
def test_catalog_is_log_concave(fixture, request):
    rep = check_log_concave(request.getfixturevalue(fixture))
    assert rep.passed and rep.witness is None


def test_cauchy_is_not_log_concave(cauchy):
    rep = check_log_concave(cauchy)
    assert not rep.passed
    x, y = rep.witness
    # the witness is a machine-checkable midpoint failure
    assert cauchy.logpdf(0.5 * (x + y)) < 0.5 * (cauchy.logpdf(x) + cauchy.logpdf(y)) - 1e-12


def test_bimodal_mixture_fails_with_witness():
    grid = np.linspace(-8, 8, 801)
    logf = lambda x: np.logaddexp(-0.5 * (x - 2.5) ** 2, -0.5 * (x + 2.5) ** 2)
    d = make_density(tabulate(logf, grid))
    rep = check_log_concave_continuous(d, np.linspace(-5, 5, 41))
    assert not rep.passed and rep.worst_margin < -0.1


@pytest.mark.parametrize("family, params", [
    ("poisson", {"lam": 3.0}), ("binomial", {"m": 10, "p": 0.3}), ("geometric", {"p": 0.4}),
])
def test_discrete_log_concave_families(family, params):
    assert check_log_concave(make_pmf(family, params)).passed


def test_discrete_violation_witness():
    p = make_pmf("table", {"weights": [4, 1, 4, 1]})
    rep = check_log_concave(p)
    assert not rep.passed and rep.witness == 1
