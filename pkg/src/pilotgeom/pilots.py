"""Per-cell user loads and pilot assignment / utilization probabilities."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .area_models import MixedAreaDistribution
from .geometry import CC, CE
from .numerics import composite_gauss_legendre, poisson_truncation


@dataclass(frozen=True)
class PilotPlan:
    """Pilot budget split into a CC pool shared by all cells and beta_f CE groups."""

    B: int = 100
    B_C: int = 58
    B_E: int = 14
    beta_f: int = 3
    T_c: int = 200

    def __post_init__(self):
        for name in ("B", "B_C", "B_E", "T_c"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.beta_f < 1:
            raise ValueError("beta_f must be >= 1")
        if self.B_C + self.beta_f * self.B_E != self.B:
            raise ValueError(
                f"pilot partition violated: B_C + beta_f*B_E = {self.B_C + self.beta_f * self.B_E} != B = {self.B}"
            )
        if self.B > self.T_c:
            raise ValueError("B must not exceed T_c")

    @property
    def training_fraction(self) -> float:
        return self.B / self.T_c

    def pool_size(self, kind: str) -> int:
        if kind == CC:
            return self.B_C
        if kind == CE:
            return self.B_E
        raise ValueError(f"unknown kind {kind!r}")

    @classmethod
    def from_rule(cls, kappa: float, B: int = 100, beta_f: int = 3, T_c: int = 200) -> "PilotPlan":
        """Valid plan whose B_C is closest to ``B*(1 - exp(-kappa**2))`` (ties go to the smaller B_C)."""
        target = B * -math.expm1(-kappa * kappa)
        best = None
        for B_E in range(0, B // beta_f + 1):
            B_C = B - beta_f * B_E
            key = (abs(B_C - target), B_C)
            if best is None or key < best[0]:
                best = (key, B_C, B_E)
        return cls(B=B, B_C=best[1], B_E=best[2], beta_f=beta_f, T_c=T_c)


@dataclass(frozen=True)
class LoadModel:
    """User intensity and the area laws that drive per-cell user counts."""

    lambda_u: float
    area_dist_cc: MixedAreaDistribution
    area_dist_ce: MixedAreaDistribution

    def __post_init__(self):
        if not self.lambda_u > 0:
            raise ValueError("lambda_u must be > 0")

    def area_dist(self, kind: str) -> MixedAreaDistribution:
        return self.area_dist_cc if kind == CC else self.area_dist_ce


def trunc_poisson_pmf(n, mu: float):
    """Zero-truncated Poisson pmf P(N = n | N >= 1)."""
    if not mu > 0:
        raise ValueError("mu must be > 0")
    n = np.asarray(n)
    out = np.where(n >= 1, stats.poisson.pmf(n, mu) / -math.expm1(-mu), 0.0)
    return float(out) if out.ndim == 0 else out


def _ztp_expectations(mu: np.ndarray, pool: int) -> tuple[np.ndarray, np.ndarray]:
    """E[min(1, pool/N)] and E[min(N, pool)]/pool under ZTP(mu), for an array of mu.

    E[min(N, pool)] = sum_{k=1..pool} P(N >= k); the assignment term splits into
    P(N <= pool) plus pool * E[1/N; N > pool], whose sum runs over a window
    around each mu so that heavy loads stay cheap.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    small = mu < 1e-12
    m = np.where(small, 1.0, mu)
    z = -np.expm1(-m)
    k = np.arange(1, pool + 1)
    util = stats.poisson.sf(k[None, :] - 1, m[:, None]).sum(axis=1) / z / pool
    assign = (z - stats.poisson.sf(pool, m)) / z
    tail_needed = np.ceil(m + 10.0 * np.sqrt(m) + 20.0) > pool
    for i in np.flatnonzero(tail_needed):
        mi = float(m[i])
        lo = max(pool + 1, int(mi - 10.0 * math.sqrt(mi) - 20.0))
        hi = poisson_truncation(mi)
        if hi < lo:
            continue
        n = np.arange(lo, hi + 1)
        assign[i] += pool * float(np.sum(stats.poisson.pmf(n, mi) / n)) / z[i]
    assign = np.where(small, 1.0, assign)
    util = np.where(small, 1.0 / pool, util)
    return assign, util


def _continuous_expectation(dist: MixedAreaDistribution, lambda_u: float, pool: int, n_nodes: int = 256):
    """Expectations of the ZTP quantities over the continuous area component (inverse-cdf substitution)."""
    u, w = composite_gauss_legendre(np.linspace(0.0, 1.0, n_nodes // 16 + 1), 16)
    x = np.asarray(dist._cont_ppf(u), dtype=float)
    assign, util = _ztp_expectations(np.maximum(lambda_u * x, 1e-300), pool)
    return float(w @ assign), float(w @ util)


def _mixture(kind: str, plan: PilotPlan, load: LoadModel) -> tuple[float, float]:
    pool = plan.pool_size(kind)
    dist = load.area_dist(kind)
    cont_a, cont_u = _continuous_expectation(dist, load.lambda_u, pool) if dist.atom_mass < 1 else (0.0, 0.0)
    if kind == CC:
        # the atom at pi*R_c^2 carries a real user load
        p = dist.atom_mass
        if p > 0:
            atom_a, atom_u = _ztp_expectations(np.array([load.lambda_u * dist.atom_location]), pool)
            return p * atom_a[0] + (1 - p) * cont_a, p * atom_u[0] + (1 - p) * cont_u
        return cont_a, cont_u
    # CE quantities are conditioned on E3^c: only the continuous part counts
    if dist.atom_mass >= 1.0:
        raise ValueError("CE probabilities need P[E3^c] > 0")
    return cont_a, cont_u


def prob_assign(kind: str, plan: PilotPlan, load: LoadModel) -> tuple[float, float]:
    """(any_pilot, per_pilot) assignment probabilities of a random user of class ``kind``."""
    pool = plan.pool_size(kind)
    if pool == 0:
        return 0.0, 0.0
    any_pilot, _ = _mixture(kind, plan, load)
    any_pilot = min(max(any_pilot, 0.0), 1.0)
    return any_pilot, any_pilot / pool


def prob_utilization(kind: str, plan: PilotPlan, load: LoadModel) -> float:
    """Probability that a given pilot of the ``kind`` pool is used in a (typical) interfering cell."""
    pool = plan.pool_size(kind)
    if pool == 0:
        return 0.0
    _, util = _mixture(kind, plan, load)
    return min(max(util, 0.0), 1.0)
