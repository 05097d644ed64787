import math

import numpy as np
import pytest
from scipy import stats

from pilotgeom.coverage_se import (
    CoverageCurve,
    NetworkConfig,
    analytical_model,
    avg_cell_se,
    avg_user_se,
    cell_se_terms,
    coverage,
    coverage_root,
    db_to_linear,
    ergodic_rate,
    ergodic_rate_direct,
    sample_model_sinr,
    serving_distance,
    training_factor,
)
from pilotgeom.geometry import CC, CE
from pilotgeom.pilots import PilotPlan

BASE = NetworkConfig()
T_DB = np.array([-10.0, -5.0, 0.0, 5.0, 10.0, 15.0])


def test_config_validation():
    with pytest.raises(ValueError):
        NetworkConfig(alpha=1.0)
    with pytest.raises(ValueError):
        NetworkConfig(group_inclusion=1.5)
    with pytest.raises(ValueError):
        NetworkConfig(utilization_override=(0.5,))
    assert NetworkConfig.kappa_from_radius(BASE.R_c, BASE.lambda0) == pytest.approx(0.6, rel=1e-14)
    assert NetworkConfig(kappa=1.0).R_c == pytest.approx(252.31, abs=0.01)


def test_serving_support():
    cfg = BASE.with_(kappa=NetworkConfig.kappa_from_radius(250.0, 4e-6))
    assert serving_distance(CC, cfg).cdf(cfg.R_c) == pytest.approx(1.0)
    assert serving_distance(CE, cfg).cdf(cfg.R_c) == 0.0
    ce = serving_distance(CE, cfg)
    assert ce.cdf(1e5) == pytest.approx(1.0)


@pytest.mark.parametrize("kind", [CC, CE])
def test_serving_quantile_inverts_cdf(kind):
    sd = serving_distance(kind, BASE)
    p = np.linspace(0.001, 0.999, 50)
    assert np.allclose(sd.cdf(sd.quantile(p)), p, atol=1e-12)


def test_serving_median_sampling_oracle():
    cfg = BASE.with_(kappa=NetworkConfig.kappa_from_radius(250.0, 4e-6))
    sd = serving_distance(CC, cfg)
    median = sd.quantile(0.5)
    assert sd.cdf(median) == pytest.approx(0.5, abs=1e-12)
    # independent sampler: serving distance = |U| for U uniform in the disc
    # weighted by the exp(-pi c2 lam d^2) thinning, drawn by rejection
    rng = np.random.default_rng(8)
    out = []
    s = math.pi * cfg.c2 * cfg.lambda0
    while sum(len(o) for o in out) < 10**6:
        d = cfg.R_c * np.sqrt(rng.random(2 * 10**6))
        out.append(d[rng.random(len(d)) < np.exp(-s * d * d)])
    d = np.concatenate(out)[: 10**6]
    assert stats.kstest(d, sd.cdf).statistic <= 0.002


def test_serving_pdf_integrates():
    from scipy import integrate

    for kind in (CC, CE):
        sd = serving_distance(kind, BASE)
        top = sd.quantile(1 - 1e-12)
        assert integrate.quad(sd.pdf, 0, top, points=[BASE.R_c], limit=200)[0] == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("kind", [CC, CE])
def test_coverage_limits_and_monotonicity(kind):
    assert coverage(kind, 1e-9, BASE) == pytest.approx(1.0, abs=1e-6)
    t = db_to_linear(np.linspace(-20, 40, 61))
    pc = coverage(kind, t, BASE)
    assert np.all(np.diff(pc) <= 1e-12)
    with pytest.raises(ValueError):
        coverage(kind, 0.0, BASE)


@pytest.mark.parametrize("kind", [CC, CE])
@pytest.mark.parametrize("t_db", [-10.0, 0.0, 10.0])
def test_coverage_table_route_vs_root_route(kind, t_db):
    T = float(db_to_linear(t_db))
    assert coverage(kind, T, BASE) == pytest.approx(coverage_root(kind, T, BASE), abs=2e-6)


@pytest.mark.parametrize("kind", [CC, CE])
def test_coverage_vs_model_sampling(kind):
    # sampling the model's own laws checks the quadrature independently of any simulation
    t = db_to_linear(np.linspace(-10, 20, 10))
    n = 200_000
    s = sample_model_sinr(kind, BASE, n, np.random.default_rng(17))
    emp = np.array([np.mean(s >= x) for x in t])
    pc = coverage(kind, t, BASE)
    sigma = np.sqrt(pc * (1 - pc) / n)
    assert np.all(np.abs(emp - pc) <= 3 * sigma + 1e-9)


@pytest.mark.parametrize("kind", [CC, CE])
def test_layer_cake_identity(kind):
    a = ergodic_rate(kind, BASE)
    b = ergodic_rate_direct(kind, BASE)
    assert a == pytest.approx(b, rel=1e-6)


def test_user_se_formula():
    plan = BASE.plan
    model = analytical_model(BASE)
    for kind in (CC, CE):
        _, per = model.assignment(kind)
        expect = training_factor(plan) * plan.pool_size(kind) * per * ergodic_rate_direct(kind, BASE)
        assert avg_user_se(kind, BASE) == pytest.approx(expect, rel=1e-6)


def test_user_se_zero_pool():
    cfg = BASE.with_(plan=PilotPlan(B=99, B_C=0, B_E=33))
    assert avg_user_se(CC, cfg) == 0.0


def test_cell_se_degenerate_plan():
    cfg = BASE.with_(plan=PilotPlan(B=100, B_C=100, B_E=0), utilization_override=(1.0, 1.0))
    expect = 100 * training_factor(cfg.plan) * ergodic_rate(CC, cfg)
    assert avg_cell_se(cfg) == pytest.approx(expect, rel=1e-12)


def test_cell_se_terms_nonnegative():
    cc, ce = cell_se_terms(BASE)
    total = avg_cell_se(BASE)
    assert cc >= 0 and ce >= 0
    assert total >= cc and total >= ce


def test_trend_cc_coverage_decreases_with_user_density():
    vals = [coverage(CC, 1.0, BASE.with_(lambda_u=k * BASE.lambda0)) for k in (80, 150, 300)]
    assert vals[0] > vals[1] > vals[2]


def test_trend_ce_coverage_vs_kappa():
    lo = BASE.with_(kappa=0.6, plan=PilotPlan())
    hi = BASE.with_(kappa=1.0, plan=PilotPlan())
    assert coverage(CE, 10.0, hi) < coverage(CE, 10.0, lo)
    assert coverage(CE, 0.1, hi) > coverage(CE, 0.1, lo)


def test_group_inclusion_raises_ce_coverage():
    reduced = BASE.with_(group_inclusion=1 / 3)
    t = db_to_linear(T_DB)
    assert np.all(coverage(CE, t, reduced) >= coverage(CE, t, BASE))
    assert np.allclose(coverage(CC, t, reduced), coverage(CC, t, BASE))


def test_coverage_curve():
    c = CoverageCurve.compute(CC, db_to_linear(T_DB), BASE)
    assert c.probabilities.shape == (6,)
    with pytest.raises(ValueError):
        CoverageCurve(np.array([1.0]), np.array([1.2]), CC)
