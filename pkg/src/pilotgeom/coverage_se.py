"""Uplink SINR coverage and spectral efficiency under fractional pilot reuse.

Coverage uses the dominant-interferer approximation: the nearest same-pilot
interferer at D_hat plus the Campbell mean of the rest. For a serving distance
d the user is covered iff D_hat exceeds the d* solving
``d*^(-2a) + E[I_rem | d*] = d^(-2a) / T``, so
``P_c(T) = E_D[exp(-Lambda(d*(D, T)))]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache

import numpy as np

from .area_models import area_distribution, prob_E3
from .geometry import CC, CE
from .interference import InterferenceTable, RadialDensityModel, inverse_intensity, radius_scaled
from .numerics import composite_gauss_legendre, find_root_monotone
from .pilots import LoadModel, PilotPlan, prob_assign, prob_utilization

SE_T_MAX_BITS = 40.0
SE_PC_FLOOR = 1e-6


@dataclass(frozen=True)
class NetworkConfig:
    lambda0: float = 4e-6
    lambda_u: float = 150 * 4e-6
    alpha: float = 3.7
    c2: float = 1.25
    kappa: float = 0.6
    plan: PilotPlan = field(default_factory=PilotPlan)
    group_inclusion: float = 1.0
    # (CC, CE) pilot utilization of interfering cells; None = from the load model
    utilization_override: tuple | None = None

    def __post_init__(self):
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be > 0")
        if not self.lambda_u > 0:
            raise ValueError("lambda_u must be > 0")
        if not self.alpha > 1:
            raise ValueError("alpha must be > 1")
        if not self.c2 > 0:
            raise ValueError("c2 must be > 0")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if not 0.0 <= self.group_inclusion <= 1.0:
            raise ValueError("group_inclusion must lie in [0, 1]")
        if self.utilization_override is not None:
            if len(self.utilization_override) != 2 or not all(0 <= u <= 1 for u in self.utilization_override):
                raise ValueError("utilization_override must be two probabilities (CC, CE)")

    @property
    def R_c(self) -> float:
        return radius_scaled(self.kappa, self.c2) / math.sqrt(self.lambda0)

    @staticmethod
    def kappa_from_radius(R_c: float, lambda0: float, c2: float = 1.25) -> float:
        return R_c * math.sqrt(math.pi * c2 * lambda0)

    def with_(self, **changes) -> "NetworkConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class ServingDistance:
    """Distance from a CC/CE user to its serving BS."""

    kind: str
    lambda0: float
    R_c: float
    c2: float = 1.25

    @property
    def _s(self) -> float:
        return math.pi * self.c2 * self.lambda0

    def cdf(self, d):
        d = np.asarray(d, dtype=float)
        s, R = self._s, self.R_c
        if self.kind == CC:
            out = np.where(d >= R, 1.0, -np.expm1(-s * np.clip(d, 0, R) ** 2) / -math.expm1(-s * R * R))
            out = np.where(d <= 0, 0.0, out)
        else:
            out = np.where(d <= R, 0.0, -np.expm1(-s * (np.maximum(d, R) ** 2 - R * R)))
        return float(out) if out.ndim == 0 else out

    def pdf(self, d):
        d = np.asarray(d, dtype=float)
        s, R = self._s, self.R_c
        if self.kind == CC:
            inside = (d >= 0) & (d <= R)
            out = np.where(inside, 2 * s * d * np.exp(-s * d * d) / -math.expm1(-s * R * R), 0.0)
        else:
            out = np.where(d > R, 2 * s * d * np.exp(-s * (d * d - R * R)), 0.0)
        return float(out) if out.ndim == 0 else out

    def quantile(self, p):
        p = np.asarray(p, dtype=float)
        s, R = self._s, self.R_c
        if self.kind == CC:
            out = np.sqrt(-np.log1p(p * math.expm1(-s * R * R)) / s)
        else:
            out = np.sqrt(R * R - np.log1p(-p) / s)
        return float(out) if out.ndim == 0 else out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.quantile(rng.random(n))


def serving_distance(kind: str, config: NetworkConfig) -> ServingDistance:
    if kind not in (CC, CE):
        raise ValueError(f"unknown kind {kind!r}")
    if kind == CC and config.R_c <= 0:
        raise ValueError("CC serving distance needs R_c > 0")
    return ServingDistance(kind, config.lambda0, config.R_c, config.c2)


class AnalyticalModel:
    """All derived model quantities for one configuration (built lazily, then immutable)."""

    def __init__(self, config: NetworkConfig):
        self.config = config

    @cached_property
    def p_E3(self) -> float:
        return prob_E3(self.config.lambda0, self.config.R_c)

    @cached_property
    def load(self) -> LoadModel:
        c = self.config
        return LoadModel(
            c.lambda_u,
            area_distribution(CC, c.lambda0, c.R_c),
            area_distribution(CE, c.lambda0, c.R_c, p_E3=self.p_E3),
        )

    @lru_cache(maxsize=None)
    def assignment(self, kind: str) -> tuple[float, float]:
        return prob_assign(kind, self.config.plan, self.load)

    @lru_cache(maxsize=None)
    def utilization(self, kind: str) -> float:
        if self.config.utilization_override is not None:
            return float(self.config.utilization_override[0 if kind == CC else 1])
        return prob_utilization(kind, self.config.plan, self.load)

    @lru_cache(maxsize=None)
    def density_model(self, kind: str) -> RadialDensityModel:
        c = self.config
        return RadialDensityModel.build(
            kind, c.lambda0, c.kappa, self.utilization(kind), c.group_inclusion, c.c2, p_E3c=1.0 - self.p_E3
        )

    @lru_cache(maxsize=None)
    def table(self, kind: str) -> InterferenceTable:
        return InterferenceTable.build(self.density_model(kind), self.config.alpha)

    def serving(self, kind: str) -> ServingDistance:
        return serving_distance(kind, self.config)


@lru_cache(maxsize=64)
def analytical_model(config: NetworkConfig) -> AnalyticalModel:
    return AnalyticalModel(config)


def _probability_nodes(n_body: int = 48, order: int = 8):
    """Gauss nodes on (0, 1) in probability space, refined towards both ends."""
    tail = np.geomspace(1e-10, 1.0 / n_body, 12)
    edges = np.unique(np.concatenate([np.linspace(0.0, 1.0, n_body + 1), tail, 1.0 - tail]))
    return composite_gauss_legendre(edges, order)


_V_NODES, _V_WEIGHTS = _probability_nodes()


def _coverage_matrix(kind: str, T: np.ndarray, model: AnalyticalModel) -> np.ndarray:
    dm = model.density_model(kind)
    if dm.plateau == 0.0:
        return np.ones_like(T)
    alpha = model.config.alpha
    d = model.serving(kind).quantile(_V_NODES)
    table = model.table(kind)
    level = d[None, :] ** (-2.0 * alpha) / T[:, None]
    d_star = table.threshold_distance(level)
    inner = np.exp(-np.asarray(dm.intensity_measure(d_star)))
    return inner @ _V_WEIGHTS


def coverage(kind: str, T, config: NetworkConfig):
    """P(SINR >= T | the user holds a pilot) for linear thresholds ``T``."""
    T = np.asarray(T, dtype=float)
    if np.any(T <= 0):
        raise ValueError("thresholds must be > 0")
    model = analytical_model(config)
    out = np.clip(_coverage_matrix(kind, np.atleast_1d(T).ravel(), model), 0.0, 1.0).reshape(T.shape)
    return float(out) if out.ndim == 0 else out


def coverage_root(kind: str, T: float, config: NetworkConfig) -> float:
    """Coverage at a single T with d* found by bracketed root finding (no table inversion)."""
    model = analytical_model(config)
    dm = model.density_model(kind)
    if dm.plateau == 0.0:
        return 1.0
    alpha = config.alpha
    eps = 1e-3 / math.sqrt(config.lambda0)
    r_up = 60.0 / math.sqrt(config.lambda0)
    table = model.table(kind)
    d = model.serving(kind).quantile(_V_NODES)
    vals = np.empty_like(d)
    for i, di in enumerate(d):
        level = di ** (-2.0 * alpha) / T
        g = lambda x: math.log(x ** (-2.0 * alpha) + float(table.residual(x))) - math.log(level)  # noqa: E731
        if g(r_up) > 0:
            vals[i] = 0.0
            continue
        lo = eps
        while g(lo) < 0:
            lo *= 1e-2
        d_star = find_root_monotone(g, lo, r_up, tol=1e-12 * r_up)
        vals[i] = math.exp(-dm.intensity_measure(d_star))
    return float(vals @ _V_WEIGHTS)


def ergodic_rate(kind: str, config: NetworkConfig) -> float:
    """E[log2(1 + SINR)] by integrating coverage over t with T = 2^t - 1."""
    edges = np.linspace(0.0, SE_T_MAX_BITS, 81)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        t, w = composite_gauss_legendre([a, b], 16)
        pc = coverage(kind, np.expm1(t * math.log(2.0)), config)
        total += float(w @ pc)
        if np.max(pc) < SE_PC_FLOOR:
            break
    return total


def ergodic_rate_direct(kind: str, config: NetworkConfig, cap_bits: float = SE_T_MAX_BITS) -> float:
    """E[min(log2(1 + SINR), cap_bits)] as a double expectation over serving and dominant distances.

    The cap matches the upper limit of the threshold integral in :func:`ergodic_rate`.
    """
    model = analytical_model(config)
    dm = model.density_model(kind)
    if dm.plateau == 0.0:
        return math.inf
    alpha = config.alpha
    d = model.serving(kind).quantile(_V_NODES)
    d_hat = inverse_intensity(dm, -np.log1p(-_V_NODES))
    g = model.table(kind).g(d_hat)
    snr = d[:, None] ** (-2.0 * alpha) / g[None, :]
    return float(_V_WEIGHTS @ np.minimum(np.log2(1.0 + snr), cap_bits) @ _V_WEIGHTS)


def training_factor(plan: PilotPlan) -> float:
    return 1.0 - plan.B / plan.T_c


def avg_user_se(kind: str, config: NetworkConfig) -> float:
    """Average SE of a random user of class ``kind`` (bits/s/Hz)."""
    plan = config.plan
    pool = plan.pool_size(kind)
    if pool == 0:
        return 0.0
    model = analytical_model(config)
    _, per_pilot = model.assignment(kind)
    if per_pilot == 0.0:
        return 0.0
    return training_factor(plan) * pool * per_pilot * ergodic_rate(kind, config)


def avg_cell_se(config: NetworkConfig) -> float:
    """Average sum SE of a typical cell (bits/s/Hz)."""
    return sum(cell_se_terms(config))


def cell_se_terms(config: NetworkConfig) -> tuple[float, float]:
    """(CC, CE) contributions to the average cell SE."""
    plan = config.plan
    model = analytical_model(config)
    pref = training_factor(plan)
    cc = pref * plan.B_C * model.utilization(CC) * ergodic_rate(CC, config) if plan.B_C else 0.0
    ce = 0.0
    if plan.B_E and model.p_E3 < 1.0:
        ce = pref * (1.0 - model.p_E3) * plan.B_E * model.utilization(CE) * ergodic_rate(CE, config)
    return cc, ce


def sample_model_sinr(kind: str, config: NetworkConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    """SINR draws from the approximate model itself (serving law, dominant law, conditional mean)."""
    model = analytical_model(config)
    dm = model.density_model(kind)
    d = model.serving(kind).sample(n, rng)
    d_hat = dm.dominant_distance().sample(n, rng)
    interference = d_hat ** (-2.0 * config.alpha) + model.table(kind).residual(d_hat)
    return d ** (-2.0 * config.alpha) / interference


@dataclass(frozen=True)
class CoverageCurve:
    thresholds: np.ndarray
    probabilities: np.ndarray
    kind: str

    def __post_init__(self):
        p = np.asarray(self.probabilities)
        if np.any((p < 0) | (p > 1)):
            raise ValueError("coverage probabilities must lie in [0, 1]")

    @classmethod
    def compute(cls, kind: str, thresholds, config: NetworkConfig) -> "CoverageCurve":
        t = np.asarray(thresholds, dtype=float)
        return cls(t, np.atleast_1d(coverage(kind, t, config)), kind)


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)
