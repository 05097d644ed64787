import json
import math

import numpy as np
import pytest
from scipy import stats

from pilotgeom.area_models import area_distribution
from pilotgeom.coverage_se import NetworkConfig
from pilotgeom.geometry import CC, CE
from pilotgeom.numerics import RngStream
from pilotgeom.pilots import PilotPlan, trunc_poisson_pmf
from pilotgeom.simulate import (
    FPR,
    REUSE1,
    SimulationSettings,
    _interference_by_pilot,
    cell_areas,
    estimate_pcf,
    fit_pcf_prototype,
    ks_kl,
    pcf_prototype,
    run_experiment,
    run_realization,
    sample_cells,
    sample_ztp,
    tagged_sinr,
)

SMALL = SimulationSettings(half_width=5.0, guard_band=2.0)
BASE = NetworkConfig()


@pytest.fixture(scope="module")
def fpr_real():
    return run_realization(BASE, FPR, RngStream(1), SMALL)


@pytest.fixture(scope="module")
def reuse_real():
    return run_realization(BASE, REUSE1, RngStream(2), SMALL)


def test_settings_validation():
    with pytest.raises(ValueError):
        SimulationSettings(ce_group_mode="other")
    with pytest.raises(ValueError):
        SimulationSettings(half_width=2.0, guard_band=3.0)
    with pytest.raises(ValueError):
        run_realization(BASE, "bogus", RngStream(0), SMALL)


def test_fpr_pools_are_disjoint(fpr_real):
    r = fpr_real
    plan = BASE.plan
    used = r.user_pilot >= 0
    cc = used & (r.user_kind == 0)
    ce = used & (r.user_kind == 1)
    assert np.all(r.user_pilot[cc] < plan.B_C)
    assert np.all(r.user_pilot[ce] >= plan.B_C)
    # CE pilots come from the cell's own group
    g = r.ce_group_per_cell[r.user_cell[ce]]
    lo = plan.B_C + g * plan.B_E
    assert np.all((r.user_pilot[ce] >= lo) & (r.user_pilot[ce] < lo + plan.B_E))


def test_pilots_distinct_within_cell(fpr_real, reuse_real):
    for r in (fpr_real, reuse_real):
        used = r.user_pilot >= 0
        pairs = set()
        for c, k in zip(r.user_cell[used], r.user_pilot[used]):
            assert (c, k) not in pairs
            pairs.add((c, k))
    assert np.all(reuse_real.user_pilot < BASE.plan.B)


def test_reuse1_uses_whole_pool(reuse_real):
    used = reuse_real.user_pilot[reuse_real.user_pilot >= 0]
    assert used.max() >= BASE.plan.B_C  # CC users can hold "CE" indices too


def test_no_unassigned_when_pool_is_large():
    cfg = BASE.with_(lambda_u=5 * BASE.lambda0)
    r = run_realization(cfg, FPR, RngStream(3), SMALL)
    n_cc = np.bincount(r.user_cell[r.user_kind == 0], minlength=len(r.cells))
    assert n_cc.max() <= cfg.plan.B_C
    assert np.all(r.user_pilot[r.user_kind == 0] >= 0)


def test_users_inside_their_regions(fpr_real):
    r = fpr_real
    bs = r.bs_pattern.points[r.user_cell]
    d = np.hypot(*(r.user_pos - bs).T)
    assert np.all(d[r.user_kind == 0] <= BASE.R_c * (1 + 1e-12))
    assert np.all(d[r.user_kind == 1] > BASE.R_c)
    # every user is closest to its own BS
    _, nearest = r.bs_pattern.tree.query(r.user_pos)
    assert np.mean(nearest == r.user_cell) > 0.9999


def test_sample_ztp():
    rng = np.random.default_rng(4)
    x = sample_ztp(np.full(200_000, 2.0), rng)
    assert x.min() >= 1
    for n in (1, 2, 3, 5):
        assert np.mean(x == n) == pytest.approx(trunc_poisson_pmf(n, 2.0), abs=0.004)
    assert np.all(sample_ztp(np.array([1e-300, 1e-20]), rng) == 1)


def test_cc_counts_match_ztp_mixture():
    # N_C per cell against the ZTP law mixed over the same cells' CC areas
    cfg = BASE
    counts, areas = [], []
    for i in range(4):
        r = run_realization(cfg, FPR, RngStream(5, i), SMALL)
        interior = r.bs_pattern.interior_indices()
        n = np.bincount(r.user_cell[r.user_kind == 0], minlength=len(r.cells))
        counts.extend(n[interior])
        areas.extend(r.cells[j].cc_area for j in interior)
    counts = np.asarray(counts)
    mu = cfg.lambda_u * np.asarray(areas)
    grid = np.arange(1, counts.max() + 1)
    model = np.array([np.mean((stats.poisson.cdf(k, mu) - np.exp(-mu)) / -np.expm1(-mu)) for k in grid])
    emp = np.array([np.mean(counts <= k) for k in grid])
    assert np.max(np.abs(emp - model)) <= 0.02 + 1.36 / math.sqrt(len(counts))


def test_unassigned_users_do_not_interfere(fpr_real):
    r = fpr_real
    t = int(r.tagged[0])
    base, _ = _interference_by_pilot(r, t, BASE.plan.B)
    # moving unassigned users right next to the tagged BS changes nothing
    moved = r.user_pos.copy()
    un = r.user_pilot < 0
    if not np.any(un):
        pytest.skip("realization has no unassigned users")
    moved[un] = r.bs_pattern.points[t] + 1.0
    import dataclasses

    r2 = dataclasses.replace(r, user_pos=moved)
    again, _ = _interference_by_pilot(r2, t, BASE.plan.B)
    assert np.array_equal(base, again)


def test_tagged_sinr_inf_when_pilot_unique():
    cfg = BASE.with_(lambda_u=3 * BASE.lambda0)
    r = run_realization(cfg, FPR, RngStream(7), SMALL)
    t = int(r.tagged[0])
    mine = r.user_pilot[(r.user_cell == t) & (r.user_pilot >= 0)]
    assert len(mine)
    k = int(mine[0])
    # remove the pilot from everyone else
    import dataclasses

    pil = r.user_pilot.copy()
    pil[(r.user_cell != t) & (pil == k)] = -1
    r2 = dataclasses.replace(r, user_pilot=pil)
    kind = CC if r.user_kind[(r.user_cell == t) & (r.user_pilot == k)][0] == 0 else CE
    assert tagged_sinr(r2, kind, k) == math.inf
    assert tagged_sinr(r2, kind, 10_000) is None


def test_tagged_sinr_scale_invariance(fpr_real):
    import dataclasses

    from pilotgeom.geometry import PointPattern

    r = fpr_real
    t = int(r.tagged[0])
    k = int(r.user_pilot[(r.user_cell == t) & (r.user_pilot >= 0)][0])
    code = r.user_kind[(r.user_cell == t) & (r.user_pilot == k)][0]
    kind = CC if code == 0 else CE
    pat = r.bs_pattern
    doubled = dataclasses.replace(
        r,
        user_pos=2 * r.user_pos,
        bs_pattern=PointPattern(2 * pat.points, pat.window, pat.density / 4),
    )
    assert tagged_sinr(doubled, kind, k) == pytest.approx(tagged_sinr(r, kind, k), rel=1e-12)


def test_estimate_pcf_on_ppp():
    rng = np.random.default_rng(9)
    patterns = []
    for _ in range(200):
        n = rng.poisson(1.0 * math.pi * 5.0**2)
        rad = 5.0 * np.sqrt(rng.random(n))
        patterns.append(rad)
    est = estimate_pcf(patterns, np.linspace(0, 2.5, 26), far_ring=(3.0, 4.5))
    ok = np.abs(est.pcf - 1.0) <= 3 * est.stderr
    assert np.mean(ok) >= 0.9  # 3-sigma band, a couple of excursions allowed in 25 bins
    assert np.all(np.abs(est.pcf[1:] - 1) <= 5 * est.stderr[1:])
    with pytest.raises(ValueError):
        estimate_pcf(patterns[:10], np.linspace(0, 2, 5))


def test_prototype_fit_recovers_truth():
    R = 0.3
    r = np.linspace(0.31, 3.0, 120)
    y = pcf_prototype(r, R, 2.0, 0.5, 1.0)
    fit = fit_pcf_prototype(r, y, R)
    assert fit.converged
    assert (fit.a, fit.b, fit.c) == pytest.approx((2.0, 0.5, 1.0), rel=0.05)


def test_prototype_fit_pure_exponential():
    # exact b = 0 data with a declared 0.01 per-bin standard error
    R = 0.3
    r = np.linspace(0.31, 3.0, 120)
    sigma = np.full_like(r, 0.01)
    fit = fit_pcf_prototype(r, pcf_prototype(r, R, 2.0, 0.0, 1.0), R, sigma=sigma)
    assert abs(fit.b) < 3 * fit.stderr[1]
    assert fit.a == pytest.approx(2.0, rel=1e-3)


def test_prototype_fit_noisy_recovery():
    R = 0.3
    r = np.linspace(0.31, 3.0, 120)
    sigma = np.full_like(r, 0.01)
    y = pcf_prototype(r, R, 2.0, 0.5, 1.0) + sigma * np.random.default_rng(18).standard_normal(len(r))
    fit = fit_pcf_prototype(r, y, R, sigma=sigma)
    # reduced chi-square close to 1 means the noise level is what the fit explains away
    chi2 = np.sum(((pcf_prototype(r, R, fit.a, fit.b, fit.c) - y) / sigma) ** 2) / (len(r) - 3)
    assert 0.6 < chi2 < 1.5
    assert fit.b > 0


@pytest.mark.parametrize("kind", [CC, CE])
def test_ks_kl_self_test(kind):
    d = area_distribution(kind, 4e-6, 250.0)
    x = d.sample(100_000, np.random.default_rng(11))
    ks, kl = ks_kl(x, d)
    assert ks <= 0.01
    assert kl <= 0.005


def test_kl_zero_for_matching_histogram():
    from pilotgeom.area_models import MixedAreaDistribution

    # model with uniform continuous part on [0, 1]: beta(1, 1) kernel, w = z
    d = MixedAreaDistribution(CC, 1.0, 0.0, {"a_shape": 1.0, "b_shape": 1.0, "v": 0.0, "w": 1.0, "y": 0.0, "z": 1.0}, 1.0, 1.0)
    x = (np.arange(100_000) + 0.5) / 100_000
    ks, kl = ks_kl(x, d)
    assert kl == pytest.approx(0.0, abs=1e-12)
    assert ks <= 1e-5


def test_ks_kl_table_row_r100():
    polys = sample_cells(4e-6, 20_000, RngStream(12))
    cells = cell_areas(polys, 100.0)
    ks, kl = ks_kl([c.cc_area for c in cells], area_distribution(CC, 4e-6, 100.0))
    assert abs(ks - 0.0230) <= 0.01
    assert abs(kl - 0.0125) <= 0.01


def test_run_experiment_deterministic():
    a = run_experiment(BASE, FPR, 1, RngStream(13), SMALL)
    b = run_experiment(BASE, FPR, 1, RngStream(13), SMALL)
    assert a.to_json() == b.to_json()
    assert np.array_equal(a.sinr[CC], b.sinr[CC])


def test_parallel_matches_serial():
    a = run_experiment(BASE, FPR, 4, RngStream(14), SMALL, workers=1)
    b = run_experiment(BASE, FPR, 4, RngStream(14), SMALL, workers=2)
    assert a.to_json() == b.to_json()


def test_summary_json_schema():
    s = run_experiment(BASE, FPR, 2, RngStream(15), SMALL)
    doc = json.loads(s.to_json())
    for key in ("config", "seed", "mode", "n_realizations", "user_se", "cell_se", "pcf", "inf_sinr_count"):
        assert key in doc
    assert doc["seed"] == 15
    p, se = s.coverage(CC, [0.1, 1.0])
    assert np.all((0 <= p) & (p <= 1)) and np.all(se >= 0)


@pytest.mark.slow
def test_stderr_shrinks_with_realizations():
    small = run_experiment(BASE, FPR, 100, RngStream(16), SMALL)
    large = run_experiment(BASE, FPR, 400, RngStream(17), SMALL)
    ratio = small.mean_cell_se()[1] / large.mean_cell_se()[1]
    assert ratio == pytest.approx(2.0, rel=0.2)
