"""Monte Carlo engine: network realizations, pilot assignment, asymptotic SINR,
and empirical statistics (area laws, PCFs, coverage, SE, KS/KL)."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, stats

from .area_models import MixedAreaDistribution
from .coverage_se import NetworkConfig, training_factor
from .geometry import CC, CE, CellGeometry, PointPattern, Window, sample_in_region, sample_ppp, voronoi_polygon
from .numerics import RngStream

FPR = "fpr"
REUSE1 = "reuse1"
KIND_CODE = {CC: 0, CE: 1}
UNASSIGNED = -1


@dataclass(frozen=True)
class SimulationSettings:
    """Window and tagging options.

    Lengths are in units of ``1/sqrt(lambda0)``. ``tagging='center'`` adds a
    BS at the origin and tags only that cell (the typical cell by Slivnyak's
    theorem); ``'interior'`` tags every BS outside the guard band, trading
    exactness of the far field for throughput.
    """

    half_width: float = 8.0
    guard_band: float = 3.0
    ce_group_mode: str = "random"
    tagging: str = "center"
    pcf_edges: tuple = tuple(np.round(np.linspace(0.0, 2.5, 51), 10))
    far_ring: tuple = (3.0, 4.5)

    def __post_init__(self):
        if self.ce_group_mode not in ("random", "same_set"):
            raise ValueError("ce_group_mode must be 'random' or 'same_set'")
        if self.tagging not in ("center", "interior"):
            raise ValueError("tagging must be 'center' or 'interior'")
        if not self.half_width > self.guard_band >= 0:
            raise ValueError("need half_width > guard_band >= 0")

    def window(self, lambda0: float) -> Window:
        return Window.for_density(lambda0, self.half_width, self.guard_band)


@dataclass(eq=False)
class Realization:
    bs_pattern: PointPattern
    cells: list  # CellGeometry per BS index
    user_pos: np.ndarray  # (n, 2)
    user_cell: np.ndarray  # (n,)
    user_kind: np.ndarray  # 0 = CC, 1 = CE
    user_pilot: np.ndarray  # pilot index or -1
    ce_group_per_cell: np.ndarray
    tagged: np.ndarray  # BS indices whose statistics are collected
    mode: str
    stream: RngStream
    alpha: float = 3.7
    lambda0: float = 4e-6

    @property
    def n_users(self) -> int:
        return len(self.user_cell)


def sample_ztp(mu: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Zero-truncated Poisson draws by inversion of the Poisson cdf above P(0)."""
    mu = np.asarray(mu, dtype=float)
    u = rng.random(mu.shape)
    p0 = np.exp(-mu)
    target = p0 + u * -np.expm1(-mu)
    n = stats.poisson.ppf(np.minimum(target, 1.0 - 1e-16), mu)
    n = np.where(np.isfinite(n), n, 1.0)
    return np.maximum(n, 1).astype(np.int64)


def _assign(n_users: int, pool: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Distinct pilots from ``pool`` for a random subset of up to ``len(pool)`` users."""
    out = np.full(n_users, UNASSIGNED, dtype=np.int64)
    m = min(n_users, len(pool))
    if m == 0:
        return out
    who = rng.permutation(n_users)[:m]
    out[who] = rng.permutation(pool)[:m]
    return out


def run_realization(
    config: NetworkConfig,
    mode: str = FPR,
    stream: RngStream | None = None,
    settings: SimulationSettings | None = None,
) -> Realization:
    """One network drop with users and pilot assignment."""
    if mode not in (FPR, REUSE1):
        raise ValueError(f"unknown mode {mode!r}")
    settings = settings or SimulationSettings()
    stream = stream or RngStream(0)
    rng = stream.generator()
    lam = config.lambda0
    window = settings.window(lam)
    extra = np.zeros((1, 2)) if settings.tagging == "center" else None
    pattern = sample_ppp(lam, window, rng, extra_points=extra)
    R_c = config.R_c
    cells = []
    for i in range(len(pattern)):
        poly, r_m, truncated = voronoi_polygon(i, pattern)
        cells.append(CellGeometry.from_polygon(i, pattern.points[i], poly, r_m, R_c, truncated))
    n_bs = len(cells)
    cc_area = np.array([c.cc_area for c in cells])
    ce_area = np.array([c.ce_area for c in cells])
    has_cc = cc_area > 0
    has_ce = np.array([c.has_ce_region for c in cells])
    n_cc = np.where(has_cc, sample_ztp(np.maximum(config.lambda_u * cc_area, 1e-300), rng), 0)
    n_ce = np.where(has_ce, sample_ztp(np.maximum(config.lambda_u * ce_area, 1e-300), rng), 0)

    plan = config.plan
    if settings.ce_group_mode == "random":
        groups = rng.integers(0, plan.beta_f, size=n_bs)
    else:
        groups = np.zeros(n_bs, dtype=np.int64)
    cc_pool = np.arange(plan.B_C)
    all_pool = np.arange(plan.B)

    pos, cell_idx, kind, pilot = [], [], [], []
    for j, c in enumerate(cells):
        parts = []
        if n_cc[j]:
            parts.append((0, sample_in_region(c, CC, rng, int(n_cc[j]))))
        if n_ce[j]:
            parts.append((1, sample_in_region(c, CE, rng, int(n_ce[j]))))
        if mode == FPR:
            for k, p in parts:
                if k == 0:
                    pil = _assign(len(p), cc_pool, rng)
                else:
                    pil = _assign(len(p), plan.B_C + groups[j] * plan.B_E + np.arange(plan.B_E), rng)
                pos.append(p)
                pilot.append(pil)
                kind.append(np.full(len(p), k))
                cell_idx.append(np.full(len(p), j))
        else:
            if not parts:
                continue
            p = np.vstack([q for _, q in parts])
            kk = np.concatenate([np.full(len(q), k) for k, q in parts])
            pos.append(p)
            pilot.append(_assign(len(p), all_pool, rng))
            kind.append(kk)
            cell_idx.append(np.full(len(p), j))

    if settings.tagging == "center":
        tagged = np.array([0])
    else:
        tagged = pattern.interior_indices()
    tagged = tagged[[not cells[t].truncated for t in tagged]] if len(tagged) else tagged
    return Realization(
        bs_pattern=pattern,
        cells=cells,
        user_pos=np.vstack(pos) if pos else np.empty((0, 2)),
        user_cell=np.concatenate(cell_idx).astype(np.int64) if cell_idx else np.empty(0, np.int64),
        user_kind=np.concatenate(kind).astype(np.int8) if kind else np.empty(0, np.int8),
        user_pilot=np.concatenate(pilot).astype(np.int64) if pilot else np.empty(0, np.int64),
        ce_group_per_cell=groups,
        tagged=np.asarray(tagged, dtype=np.int64),
        mode=mode,
        stream=stream,
        alpha=config.alpha,
        lambda0=lam,
    )


def _interference_by_pilot(real: Realization, t: int, n_pilots: int):
    """Per-pilot aggregate interference at BS ``t`` from users of other cells."""
    bs = real.bs_pattern.points[t]
    d2 = np.sum((real.user_pos - bs) ** 2, axis=1)
    mask = (real.user_cell != t) & (real.user_pilot >= 0)
    w = d2[mask] ** (-real.alpha)
    return np.bincount(real.user_pilot[mask], weights=w, minlength=n_pilots), d2


def cell_sinr(real: Realization, t: int, n_pilots: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(user indices, pilots, SINR) of the assigned users in cell ``t``."""
    interference, d2 = _interference_by_pilot(real, t, n_pilots)
    users = np.flatnonzero((real.user_cell == t) & (real.user_pilot >= 0))
    k = real.user_pilot[users]
    signal = d2[users] ** (-real.alpha)
    with np.errstate(divide="ignore"):
        sinr = np.where(interference[k] > 0, signal / np.where(interference[k] > 0, interference[k], 1.0), np.inf)
    return users, k, sinr


def tagged_sinr(real: Realization, kind: str, pilot: int, cell: int | None = None) -> float | None:
    """SINR of the user holding ``pilot`` in the tagged cell, ``None`` if the pilot is unused there.

    ``+inf`` means no other cell uses the pilot.
    """
    t = int(real.tagged[0]) if cell is None else int(cell)
    n_pilots = int(max(real.user_pilot.max(initial=0), pilot)) + 1
    users, k, sinr = cell_sinr(real, t, n_pilots)
    hit = np.flatnonzero((k == pilot) & (real.user_kind[users] == KIND_CODE[kind]))
    if len(hit) == 0:
        return None
    return float(sinr[hit[0]])


# ---------------------------------------------------------------------------
# empirical PCF


@dataclass(frozen=True)
class EmpiricalPCF:
    r_mid: np.ndarray
    edges: np.ndarray
    pcf: np.ndarray
    stderr: np.ndarray
    n_patterns: int
    intensity: float

    def cumulative_count(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean number of points within each outer bin edge."""
        expected = self.intensity * _ring_areas(self.edges)
        return self.edges[1:], np.cumsum(self.pcf * expected)


def _ring_areas(edges):
    edges = np.asarray(edges, dtype=float)
    return math.pi * np.diff(edges**2)


def estimate_pcf(
    patterns: Sequence[np.ndarray],
    bins,
    intensity: float | None = None,
    far_ring: tuple = (3.0, 4.5),
    groups: Sequence[int] | None = None,
) -> EmpiricalPCF:
    """PCF of point patterns seen from the origin, via ring counts (derivative of Ripley's K).

    Each pattern is an array of distances (or (n, 2) positions) in scaled
    units. ``intensity`` is the far-field density; by default it is estimated
    from the ``far_ring`` annulus. ``groups`` labels patterns from the same
    realization so the standard error accounts for their correlation.
    """
    if len(patterns) < 50:
        raise ValueError("estimate_pcf needs at least 50 patterns")
    edges = np.asarray(bins, dtype=float)
    counts = np.empty((len(patterns), len(edges) - 1))
    far = np.empty(len(patterns))
    for i, p in enumerate(patterns):
        p = np.asarray(p, dtype=float)
        r = np.hypot(p[:, 0], p[:, 1]) if p.ndim == 2 else p
        counts[i] = np.histogram(r, edges)[0]
        far[i] = np.count_nonzero((r >= far_ring[0]) & (r < far_ring[1]))
    if intensity is None:
        intensity = far.mean() / (math.pi * (far_ring[1] ** 2 - far_ring[0] ** 2))
    expected = intensity * _ring_areas(edges)
    if groups is not None:
        g = np.asarray(groups)
        labels = np.unique(g)
        counts = np.array([counts[g == lab].mean(axis=0) for lab in labels])
    n = len(counts)
    with np.errstate(divide="ignore", invalid="ignore"):
        pcf = np.where(expected > 0, counts.mean(axis=0) / expected, np.nan)
        se = np.where(expected > 0, counts.std(axis=0, ddof=1) / math.sqrt(n) / expected, np.nan)
    return EmpiricalPCF(0.5 * (edges[1:] + edges[:-1]), edges, pcf, se, len(patterns), float(intensity))


def pcf_from_ring_counts(counts: np.ndarray, far: np.ndarray, edges, far_ring) -> EmpiricalPCF:
    """PCF from per-realization mean ring counts (rows = realizations)."""
    edges = np.asarray(edges, dtype=float)
    counts = np.asarray(counts, dtype=float)
    intensity = float(np.mean(far)) / (math.pi * (far_ring[1] ** 2 - far_ring[0] ** 2))
    expected = intensity * _ring_areas(edges)
    n = len(counts)
    with np.errstate(divide="ignore", invalid="ignore"):
        pcf = np.where(expected > 0, counts.mean(axis=0) / expected, np.nan)
        se = np.where(expected > 0, counts.std(axis=0, ddof=1) / math.sqrt(max(n, 1)) / expected, np.nan)
    return EmpiricalPCF(0.5 * (edges[1:] + edges[:-1]), edges, pcf, se, n, intensity)


@dataclass(frozen=True)
class PrototypeFit:
    a: float
    b: float
    c: float
    residual: float
    converged: bool
    stderr: tuple


def pcf_prototype(r_scaled, R_scaled, a, b, c):
    s = np.maximum(np.asarray(r_scaled, dtype=float) ** 2 - R_scaled**2, 0.0)
    return -np.expm1(-a * s) + b * s * np.exp(-c * s)


def fit_pcf_prototype(r_scaled, pcf, R_scaled: float, sigma=None, p0=(2.0, 0.5, 1.0)) -> PrototypeFit:
    """Least-squares fit of ``1 - exp(-a s) + b s exp(-c s)``, ``s = r^2 - R^2``, to an empirical CE PCF.

    ``sigma`` are absolute per-bin standard errors. With c close to a the bump
    term mimics a change of a, so several starts are tried and the lowest
    chi-square wins.
    """
    r = np.asarray(r_scaled, dtype=float)
    y = np.asarray(pcf, dtype=float)
    ok = np.isfinite(y) & (r > R_scaled)
    if sigma is not None:
        sigma = np.asarray(sigma, dtype=float)
        ok &= np.isfinite(sigma) & (sigma > 0)
        sigma = sigma[ok]
    r, y = r[ok], y[ok]
    f = lambda x, a, b, c: pcf_prototype(x, R_scaled, a, b, c)  # noqa: E731
    a0, b0, c0 = (float(v) for v in p0)
    starts = [(a0, b0, c0), (a0, 0.0, c0), (a0, -b0, c0), (2 * a0, b0, 2 * c0), (0.5 * a0, b0, 0.5 * c0)]
    best = None
    for start in starts:
        try:
            popt, pcov = optimize.curve_fit(
                f, r, y, p0=start, sigma=sigma, absolute_sigma=sigma is not None,
                bounds=([1e-6, -50.0, 1e-6], [1e3, 50.0, 1e3]), maxfev=20000,
            )
        except (RuntimeError, ValueError, optimize.OptimizeWarning):
            continue
        w = 1.0 if sigma is None else sigma
        chi2 = float(np.sum(((f(r, *popt) - y) / w) ** 2))
        if best is None or chi2 < best[0]:
            best = (chi2, popt, pcov)
    if best is None:
        popt, pcov, converged = np.asarray(p0, dtype=float), np.full((3, 3), np.nan), False
    else:
        _, popt, pcov = best
        converged = True
    residual = float(np.sqrt(np.mean((f(r, *popt) - y) ** 2)))
    return PrototypeFit(*map(float, popt), residual, converged, tuple(np.sqrt(np.diag(pcov)).tolist()))


# ---------------------------------------------------------------------------
# goodness of fit


def ks_kl(samples, model: MixedAreaDistribution, n_bins: int = 100) -> tuple[float, float]:
    """KS distance and binned KL divergence (nats) between samples and a mixed area law.

    KS is the supremum over sample points of the gap between the empirical and
    model CDFs, checked on both sides of every jump. KL uses ``n_bins``
    equal-width bins over the continuous support plus one bin for the atom;
    for the unbounded CE law the support is cut at the largest sample and the
    model tail mass goes into the last bin.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n < 1000:
        raise ValueError("ks_kl needs at least 1000 samples")
    right = np.searchsorted(x, x, side="right") / n
    left = np.searchsorted(x, x, side="left") / n
    ks = max(np.max(np.abs(right - model.cdf(x))), np.max(np.abs(left - model.cdf_left(x))))

    a = model.atom_location
    at_atom = np.abs(x - a) <= 1e-9 * max(a, 1e-300) if a > 0 else x == 0.0
    cont = x[~at_atom]
    if model.kind == CC:
        hi = model.support_top
    else:
        hi = float(cont.max()) if len(cont) else 1.0
    edges = np.linspace(0.0, hi, n_bins + 1)
    p_hat = np.concatenate([np.histogram(cont, edges)[0], [np.count_nonzero(at_atom)]]) / n
    cont_cdf = np.asarray(model._cont_cdf(edges), dtype=float) if model.atom_mass < 1 else np.ones_like(edges)
    mass = np.diff(cont_cdf)
    if model.kind == CE:
        mass[-1] += 1.0 - cont_cdf[-1]
    q = np.concatenate([(1.0 - model.atom_mass) * mass, [model.atom_mass]])
    q = np.maximum(q, 1e-12)
    m = p_hat > 0
    kl = float(np.sum(p_hat[m] * np.log(p_hat[m] / q[m])))
    return float(ks), kl


# ---------------------------------------------------------------------------
# area samples (Table-I style validation)


def sample_cells(lambda0: float, n_cells: int, stream: RngStream, half_width: float = 20.0, guard_band: float = 3.0):
    """Polygons (relative to their BS) of ``n_cells`` untruncated interior cells of a PPP."""
    window = Window.for_density(lambda0, half_width, guard_band)
    out = []
    k = 0
    while len(out) < n_cells:
        pattern = sample_ppp(lambda0, window, stream.child(k))
        k += 1
        for i in pattern.interior_indices():
            poly, r_m, truncated = voronoi_polygon(int(i), pattern)
            if truncated:
                continue
            out.append((pattern.points[i].copy(), poly, r_m))
            if len(out) >= n_cells:
                break
    return out


def cell_areas(polys, R_c: float) -> list:
    return [CellGeometry.from_polygon(i, bs, poly, r_m, R_c) for i, (bs, poly, r_m) in enumerate(polys)]


# ---------------------------------------------------------------------------
# experiments


@dataclass
class RealizationTally:
    sinr: dict
    user_se: dict
    cell_se: list
    inf_count: dict
    users: dict
    assigned: dict
    assign_num: dict
    util_num: dict
    util_den: dict
    ring_counts: dict
    far_counts: dict
    ring_patterns: dict
    nearest: dict
    n_tagged: int


def _tally(real: Realization, config: NetworkConfig, settings: SimulationSettings) -> RealizationTally:
    plan = config.plan
    n_pilots = plan.B
    scale = math.sqrt(config.lambda0)
    pref = training_factor(plan)
    edges = np.asarray(settings.pcf_edges, dtype=float)
    far_lo, far_hi = settings.far_ring
    sinr = {CC: [], CE: []}
    user_se = {CC: [], CE: []}
    cell_se = []
    inf_count = {CC: 0, CE: 0}
    users = {CC: 0, CE: 0}
    assigned = {CC: 0, CE: 0}
    ring = {CC: np.zeros(len(edges) - 1), CE: np.zeros(len(edges) - 1)}
    far = {CC: 0.0, CE: 0.0}
    nearest = {CC: [], CE: []}
    n_ring = {CC: 0, CE: 0}

    for t in real.tagged:
        t = int(t)
        in_cell, k, s = cell_sinr(real, t, n_pilots)
        kinds_in = real.user_kind[in_cell]
        total = 0.0
        for kind, code in KIND_CODE.items():
            sel = kinds_in == code
            sinr[kind].extend(s[sel].tolist())
            n_kind = int(np.count_nonzero((real.user_cell == t) & (real.user_kind == code)))
            users[kind] += n_kind
            assigned[kind] += int(np.count_nonzero(sel))
            finite = np.isfinite(s[sel])
            inf_count[kind] += int(np.count_nonzero(~finite))
            rates = pref * np.log2(1.0 + s[sel][finite])
            total += float(rates.sum())
            if n_kind:
                # unassigned users contribute 0; users with infinite SINR are dropped
                user_se[kind].append(float(rates.sum()) / max(n_kind - int(np.count_nonzero(~finite)), 1))
        cell_se.append(total)

        # same-pilot interferer geometry around BS t, pooled over the pilots of each pool
        bs = real.bs_pattern.points[t]
        # ring counts need the whole normalization annulus inside the window
        ring_ok = float(np.max(np.abs(bs))) * scale + far_hi <= settings.half_width
        other = (real.user_cell != t) & (real.user_pilot >= 0)
        r = np.sqrt(np.sum((real.user_pos[other] - bs) ** 2, axis=1)) * scale
        pil = real.user_pilot[other]
        if real.mode == FPR:
            pools = {CC: np.arange(plan.B_C)}
            g = real.ce_group_per_cell[t]
            if plan.B_E:
                pools[CE] = plan.B_C + g * plan.B_E + np.arange(plan.B_E)
        else:
            pools = {CC: np.arange(plan.B)}
        for kind, pool in pools.items():
            if len(pool) == 0:
                continue
            in_pool = np.isin(pil, pool)
            rr = r[in_pool]
            if ring_ok:
                ring[kind] += np.histogram(rr, edges)[0]
                far[kind] += np.count_nonzero((rr >= far_lo) & (rr < far_hi))
                n_ring[kind] += len(pool)
            # nearest interferer per pilot
            best = np.full(len(pool), np.inf)
            idx = np.searchsorted(pool, pil[in_pool])
            np.minimum.at(best, idx, rr)
            nearest[kind].extend(best.tolist())
    for kind in (CC, CE):
        if n_ring[kind]:
            ring[kind] /= n_ring[kind]
            far[kind] /= n_ring[kind]

    # pilot utilization in untruncated cells other than the tagged ones
    util_num = {CC: 0.0, CE: 0.0}
    util_den = {CC: 0, CE: 0}
    assign_num = {CC: 0.0, CE: 0.0}
    if real.mode == FPR:
        interior = real.bs_pattern.interior_indices()
        if settings.tagging == "center":
            # the Palm cell at the origin is not a typical interfering cell
            interior = np.setdiff1d(interior, real.tagged)
        used = (real.user_pilot >= 0)
        for kind, code in KIND_CODE.items():
            pool = plan.pool_size(kind)
            if pool == 0:
                continue
            sel = used & (real.user_kind == code)
            per_cell = np.bincount(real.user_cell[sel], minlength=len(real.cells))
            n_cell = np.bincount(real.user_cell[real.user_kind == code], minlength=len(real.cells))
            for j in interior:
                if n_cell[j] == 0:
                    continue
                util_num[kind] += per_cell[j] / pool
                util_den[kind] += 1
                assign_num[kind] += per_cell[j] / n_cell[j]
    return RealizationTally(
        sinr={k: np.asarray(v) for k, v in sinr.items()},
        user_se=user_se,
        cell_se=cell_se,
        inf_count=inf_count,
        users=users,
        assigned=assigned,
        assign_num=assign_num,
        util_num=util_num,
        util_den=util_den,
        ring_counts=ring,
        far_counts=far,
        ring_patterns=n_ring,
        nearest={k: np.asarray(v) for k, v in nearest.items()},
        n_tagged=len(real.tagged),
    )


def _run_one(args):
    config, mode, stream, settings = args
    real = run_realization(config, mode, stream, settings)
    return _tally(real, config, settings)


def worker_count() -> int:
    env = os.environ.get("PILOTGEOM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ValueError("PILOTGEOM_THREADS must be an integer") from exc
    return 1


@dataclass
class SimulationSummary:
    """Aggregated tallies of an experiment; every curve carries its sample count and stderr."""

    config: dict
    mode: str
    seed: int
    n_realizations: int
    settings: dict
    sinr: dict = field(default_factory=dict)
    user_se: dict = field(default_factory=dict)
    cell_se: np.ndarray = None
    inf_count: dict = field(default_factory=dict)
    assign_fraction: dict = field(default_factory=dict)
    utilization: dict = field(default_factory=dict)
    pcf: dict = field(default_factory=dict)
    nearest: dict = field(default_factory=dict)
    n_tagged: int = 0

    def coverage(self, kind: str, thresholds) -> tuple[np.ndarray, np.ndarray]:
        """Empirical P(SINR >= T) and its binomial standard error."""
        s = self.sinr[kind]
        t = np.asarray(thresholds, dtype=float)
        n = max(len(s), 1)
        p = np.array([np.count_nonzero(s >= x) for x in t.ravel()], dtype=float).reshape(t.shape) / n
        return p, np.sqrt(p * (1 - p) / n)

    def mean_user_se(self, kind: str) -> tuple[float, float]:
        v = self.user_se[kind]
        return float(np.mean(v)), float(np.std(v, ddof=1) / math.sqrt(len(v))) if len(v) > 1 else math.nan

    def mean_cell_se(self) -> tuple[float, float]:
        v = self.cell_se
        return float(np.mean(v)), float(np.std(v, ddof=1) / math.sqrt(len(v))) if len(v) > 1 else math.nan

    def to_json(self) -> str:
        doc = {
            "config": self.config,
            "mode": self.mode,
            "seed": self.seed,
            "n_realizations": self.n_realizations,
            "n_tagged": self.n_tagged,
            "settings": self.settings,
            "inf_sinr_count": self.inf_count,
            "assign_fraction": self.assign_fraction,
            "utilization": self.utilization,
            "user_se": {k: dict(zip(("mean", "stderr", "n"), (*self.mean_user_se(k), len(v)))) for k, v in self.user_se.items() if len(v)},
            "cell_se": dict(zip(("mean", "stderr", "n"), (*self.mean_cell_se(), len(self.cell_se)))),
            "pcf": {
                k: {"r_scaled": p.r_mid.tolist(), "pcf": p.pcf.tolist(), "stderr": p.stderr.tolist(), "n": p.n_patterns}
                for k, p in self.pcf.items()
            },
            "sinr_samples": {k: int(len(v)) for k, v in self.sinr.items()},
        }
        return json.dumps(_round_floats(doc), indent=2, sort_keys=True, allow_nan=True)


def _round_floats(obj):
    if isinstance(obj, float):
        return float(f"{obj:.9g}")
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return float(f"{float(obj):.9g}")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def config_echo(config: NetworkConfig) -> dict:
    d = asdict(config)
    d["R_c"] = config.R_c
    return d


def run_experiment(
    config: NetworkConfig,
    mode: str = FPR,
    n_realizations: int = 100,
    stream: RngStream | None = None,
    settings: SimulationSettings | None = None,
    workers: int | None = None,
) -> SimulationSummary:
    """Independent realizations (stream child i for realization i), reduced in index order."""
    if n_realizations < 1:
        raise ValueError("n_realizations must be >= 1")
    settings = settings or SimulationSettings()
    stream = stream or RngStream(0)
    workers = worker_count() if workers is None else workers
    jobs = [(config, mode, stream.child(i), settings) for i in range(n_realizations)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            tallies = list(pool.map(_run_one, jobs, chunksize=max(1, n_realizations // (4 * workers))))
    else:
        tallies = [_run_one(j) for j in jobs]
    return summarize(tallies, config, mode, stream, settings)


def summarize(tallies, config, mode, stream, settings) -> SimulationSummary:
    kinds = (CC, CE)
    edges = np.asarray(settings.pcf_edges, dtype=float)
    summary = SimulationSummary(
        config=config_echo(config),
        mode=mode,
        seed=int(stream.seed),
        n_realizations=len(tallies),
        settings=asdict(settings),
    )
    summary.sinr = {k: np.concatenate([t.sinr[k] for t in tallies]) for k in kinds}
    summary.user_se = {k: np.asarray([x for t in tallies for x in t.user_se[k]]) for k in kinds}
    summary.cell_se = np.asarray([x for t in tallies for x in t.cell_se])
    summary.inf_count = {k: int(sum(t.inf_count[k] for t in tallies)) for k in kinds}
    summary.n_tagged = int(sum(t.n_tagged for t in tallies))
    for k in kinds:
        den = sum(t.util_den[k] for t in tallies)
        summary.assign_fraction[k] = sum(t.assign_num[k] for t in tallies) / den if den else math.nan
        summary.utilization[k] = sum(t.util_num[k] for t in tallies) / den if den else math.nan
        rows = [t for t in tallies if t.ring_patterns[k] > 0]
        counts = np.array([t.ring_counts[k] for t in rows])
        far = np.array([t.far_counts[k] for t in rows])
        if len(rows) > 1 and np.any(far > 0):
            summary.pcf[k] = pcf_from_ring_counts(counts, far, edges, settings.far_ring)
        summary.nearest[k] = np.concatenate([t.nearest[k] for t in tallies])
    return summary
