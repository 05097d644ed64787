import math
import warnings

import numpy as np
import pytest
from scipy import integrate, special, stats

from pilotgeom.area_models import (
    DegenerateConditioningError,
    FitRangeError,
    MixedAreaDistribution,
    _beta_moments,
    area_distribution,
    conditional_moments,
    eval_mixed,
    fit_cc_truncated_beta,
    fit_ce_weibull,
    inverse_moment,
    moments_cc,
    moments_ce,
    prob_E1,
    prob_E3,
    truncated_beta_from_moments,
    weibull_from_moments,
)
from pilotgeom.geometry import CC, CE
from pilotgeom.numerics import RngStream
from pilotgeom.simulate import cell_areas, sample_cells

LAM = 4e-6


@pytest.fixture(scope="module")
def polys():
    return sample_cells(LAM, 10_000, RngStream(404))


def test_moments_zero_radius():
    assert moments_cc(LAM, 0.0) == (0.0, 0.0)
    m1, m2 = moments_ce(LAM, 0.0)
    assert m1 == pytest.approx(1 / LAM, rel=1e-14)
    # second moment of the typical Poisson-Voronoi cell area
    assert m2 * LAM**2 == pytest.approx(1.2801760, rel=1e-5)


def test_moments_large_radius():
    m1, _ = moments_cc(LAM, 5000.0)
    assert m1 == pytest.approx(1 / LAM, rel=1e-12)


def test_first_moment_closed_form():
    # independent evaluation of the mean CC area: int_0^R 2 pi r exp(-pi lam r^2) dr
    R = 250.0
    direct = integrate.quad(lambda r: 2 * math.pi * r * math.exp(-math.pi * LAM * r * r), 0, R, epsrel=1e-13)[0]
    assert moments_cc(LAM, R)[0] == pytest.approx(direct, rel=1e-10)
    assert moments_cc(LAM, R)[0] == pytest.approx(1.360155e5, rel=1e-6)
    assert moments_ce(LAM, R)[0] == pytest.approx(1.139845e5, rel=1e-6)


@pytest.mark.parametrize("R", [0.0, 50.0, 100.0, 250.0, 400.0, 1000.0])
def test_first_moments_partition(R):
    s = moments_cc(LAM, R)[0] + moments_ce(LAM, R)[0]
    assert s == pytest.approx(1 / LAM, rel=1e-12)


def test_empirical_mean_areas(polys):
    cells = cell_areas(polys, 250.0)
    cc = np.mean([c.cc_area for c in cells])
    ce = np.mean([c.ce_area for c in cells])
    assert cc == pytest.approx(moments_cc(LAM, 250.0)[0], rel=0.01)
    assert ce == pytest.approx(moments_ce(LAM, 250.0)[0], rel=0.01)


def test_empirical_second_moment_voronoi(polys):
    cells = cell_areas(polys, 0.0)
    a = np.array([c.cell_area for c in cells]) * LAM
    se = np.std(a**2) / math.sqrt(len(a))
    assert np.mean(a**2) == pytest.approx(moments_ce(LAM, 0.0)[1] * LAM**2, abs=4 * se)


def test_prob_E1_values():
    assert prob_E1(LAM, 0.0) == 1.0
    assert prob_E1(LAM, 100.0) == pytest.approx(math.exp(-0.502655), rel=1e-6)
    assert prob_E1(LAM, 1e6) == 0.0


def test_prob_E1_vs_inscribed_radius(polys):
    frac = np.mean([r_m > 100.0 for _, _, r_m in polys])
    assert abs(frac - prob_E1(LAM, 100.0)) <= 0.01


def test_prob_E3_basic():
    assert prob_E3(LAM, 0.0) == 0.0
    grid = [0.0, 50.0, 100.0, 150.0, 200.0, 250.0, 300.0, 400.0, 500.0, 800.0]
    vals = [prob_E3(LAM, r) for r in grid]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert 0.0 < prob_E3(LAM, 500.0) < 1.0


def test_prob_E3_against_cell_sample(polys):
    p_hat = np.mean([np.max(np.hypot(p[:, 0], p[:, 1])) <= 250.0 for _, p, _ in polys])
    p = prob_E3(LAM, 250.0)
    half = 3 * math.sqrt(p * (1 - p) / len(polys))
    assert abs(p_hat - p) <= half + 3 * math.sqrt(p * (1 - p) / 25000)


def test_prob_E3_mc_half_width():
    p = prob_E3(LAM, 500.0)
    from pilotgeom.area_models import DEFAULT_E3_CELLS

    assert 3 * math.sqrt(p * (1 - p) / DEFAULT_E3_CELLS) <= 0.01


def test_prob_E3_series_small_radius_agrees():
    # at small radius the printed series is dominated by its leading terms
    p_series = prob_E3(LAM, 30.0, method="truncated_series")
    assert 0.0 <= p_series < 1e-3


def test_prob_E3_unknown_method():
    with pytest.raises(ValueError):
        prob_E3(LAM, 100.0, method="bogus")


def test_conditional_ce_vacuous():
    R = 20.0
    mean, _ = conditional_moments(CE, LAM, R)
    assert prob_E3(LAM, R) == 0.0
    assert mean == pytest.approx(moments_ce(LAM, R)[0], rel=1e-14)


@pytest.mark.parametrize("R", [100.0, 250.0, 300.0])
def test_total_expectation_identity(R):
    p3 = prob_E3(LAM, R)
    mean, _ = conditional_moments(CE, LAM, R, p_E3=p3)
    assert mean * (1 - p3) == pytest.approx(moments_ce(LAM, R)[0], rel=1e-12)
    p1 = prob_E1(LAM, R)
    mean_c, _ = conditional_moments(CC, LAM, R)
    assert mean_c * (1 - p1) + p1 * math.pi * R * R == pytest.approx(moments_cc(LAM, R)[0], rel=1e-12)


def test_conditional_cc_vs_sample(polys):
    R = 250.0
    cells = cell_areas(polys, R)
    x = np.array([c.cc_area for c in cells if c.r_m <= R])
    mean, var = conditional_moments(CC, LAM, R)
    assert x.mean() == pytest.approx(mean, rel=0.02)
    assert x.var() == pytest.approx(var, rel=0.05)


def test_degenerate_conditioning():
    with pytest.raises(DegenerateConditioningError):
        conditional_moments(CC, LAM, 0.0)


def test_weibull_exponential_case():
    shape, scale = weibull_from_moments(1.0, 1.0)
    assert shape == pytest.approx(1.0, abs=1e-10)
    assert scale == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("mean,var", [(1.0, 0.3), (3e5, 2e10), (2.0, 9.0)])
def test_weibull_reproduces_moments(mean, var):
    k, s = weibull_from_moments(mean, var)
    m, v = stats.weibull_min(k, scale=s).stats("mv")
    assert float(m) == pytest.approx(mean, rel=1e-8)
    assert float(v) == pytest.approx(var, rel=1e-8)


def test_weibull_out_of_range():
    with pytest.raises(FitRangeError):
        weibull_from_moments(1.0, 1e-9)


def test_beta_symmetric_untruncated_mean():
    m, _ = _beta_moments(3.0, 3.0, 1.0)
    assert m == pytest.approx(0.5, abs=1e-14)


def test_truncated_beta_by_construction():
    w, z = 2.0, 3.0
    a, b = truncated_beta_from_moments(0.9, 0.15, w, z)
    m, v = _beta_moments(a, b, w / z)
    assert m * z == pytest.approx(0.9, rel=1e-8)
    assert v * z * z == pytest.approx(0.15, rel=1e-8)


@pytest.mark.parametrize("R", [100.0, 250.0, 500.0])
def test_cc_fit_reproduces_conditional_moments(R):
    a, b = fit_cc_truncated_beta(LAM, R)
    d = area_distribution(CC, LAM, R)
    mean, var = conditional_moments(CC, LAM, R)
    num_m = integrate.quad(lambda x: x * d.conditional_pdf(x), 0, d.support_top, epsrel=1e-12)[0]
    num_2 = integrate.quad(lambda x: x * x * d.conditional_pdf(x), 0, d.support_top, epsrel=1e-12)[0]
    assert num_m == pytest.approx(mean, rel=1e-8)
    assert num_2 - num_m**2 == pytest.approx(var, rel=1e-7)
    assert (a, b) == (d.params["a_shape"], d.params["b_shape"])


def test_ce_fit_reproduces_conditional_moments():
    R = 200.0
    shape, scale = fit_ce_weibull(LAM, R)
    mean, var = conditional_moments(CE, LAM, R)
    assert scale * special.gamma(1 + 1 / shape) == pytest.approx(mean, rel=1e-8)


def test_mixed_cdf_endpoints():
    cc = area_distribution(CC, LAM, 250.0)
    ce = area_distribution(CE, LAM, 250.0)
    assert eval_mixed(cc, math.pi * 250.0**2) == pytest.approx(1.0, abs=1e-14)
    assert eval_mixed(ce, 0.0) == pytest.approx(prob_E3(LAM, 250.0), abs=1e-14)
    assert cc.cdf_left(math.pi * 250.0**2) == pytest.approx(1 - prob_E1(LAM, 250.0), abs=1e-12)
    x = np.linspace(0, 4e5, 50)
    assert np.all(np.diff(ce.cdf(x)) >= 0)
    with pytest.raises(ValueError):
        eval_mixed(cc, 1.0, "mode")


def test_pdf_continuous_integrates_to_continuous_mass():
    ce = area_distribution(CE, LAM, 250.0)
    mass = integrate.quad(lambda x: float(eval_mixed(ce, x, "pdf_continuous")), 0, np.inf)[0]
    assert mass == pytest.approx(1 - ce.atom_mass, rel=1e-7)


def test_sample_matches_cdf():
    d = area_distribution(CC, LAM, 200.0)
    x = d.sample(20000, np.random.default_rng(1))
    for q in (1e4, 5e4, 1e5):
        assert np.mean(x <= q) == pytest.approx(float(d.cdf(q)), abs=0.015)


def test_inverse_moment_point_mass():
    d = MixedAreaDistribution(CC, 7.0, 1.0, {"w": 7.0, "z": 10.5}, 1.0, math.sqrt(7 / math.pi))
    assert inverse_moment(d) == pytest.approx(1 / 7.0, rel=1e-14)


def test_inverse_moment_weibull_shape_two():
    zeta = 3.0
    d = MixedAreaDistribution(CE, 0.0, 0.0, {"shape": 2.0, "scale": zeta}, 1.0, 0.1)
    # the integral starts at 1e-6 of the mean, which drops O(1e-6) of the value here
    assert inverse_moment(d) == pytest.approx(math.sqrt(math.pi) / zeta, rel=1e-5)


def test_inverse_moment_singular_warning():
    d = MixedAreaDistribution(CE, 0.0, 0.0, {"shape": 0.8, "scale": 1.0}, 1.0, 0.1)
    with pytest.warns(Warning):
        inverse_moment(d)


def test_inverse_moment_cc_vs_sample():
    # unit density, kappa = 0.8
    R = 0.8 / math.sqrt(math.pi * 1.25)
    polys = sample_cells(1.0, 20000, RngStream(77))
    x = np.array([c.cc_area for c in cell_areas(polys, R)])
    d = area_distribution(CC, 1.0, R)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = inverse_moment(d)
    assert np.mean(1 / x) == pytest.approx(model, rel=0.05)
