"""Same-pilot interferer fields seen from the tagged BS.

The CC and CE interferer processes are approximated by non-homogeneous PPPs
whose density is the far-field user density times a pair correlation
function (PCF). Distances are in meters unless a name says ``scaled``
(``r*sqrt(lambda0)``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .area_models import cc_inverse_moment_unit, prob_E3
from .geometry import CC, CE
from .numerics import QuadratureSpec, composite_gauss_legendre, find_root_monotone, integrate_1d

CE_PCF_CONSTANT = 14.0 / 5.0


class DivergentInterferenceError(ValueError):
    """Mean interference is infinite for path-loss exponents with 2*alpha <= 2."""


def radius_scaled(kappa: float, c2: float = 1.25) -> float:
    """R_c*sqrt(lambda0) for a normalized radius kappa."""
    return kappa / math.sqrt(math.pi * c2)


def pcf_cc(r_scaled, kappa: float, c2: float = 1.25, inv_moment: float | None = None):
    """PCF of same-pilot CC users around the tagged BS."""
    if inv_moment is None:
        inv_moment = cc_inverse_moment_unit(radius_scaled(kappa, c2))
    r = np.asarray(r_scaled, dtype=float)
    out = -np.expm1(-2.0 * math.pi * r * r * inv_moment)
    return float(out) if out.ndim == 0 else out


def pcf_ce(r_scaled, kappa: float, c2: float = 1.25, p_E3c: float | None = None):
    """PCF of same-pilot CE users around the tagged BS (zero inside R_c)."""
    R = radius_scaled(kappa, c2)
    if p_E3c is None:
        p_E3c = 1.0 - prob_E3(1.0, R)
    r = np.asarray(r_scaled, dtype=float)
    excess = np.maximum(r * r - R * R, 0.0)
    out = -np.expm1(-math.pi * excess * CE_PCF_CONSTANT * p_E3c * math.exp(kappa * kappa / c2))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RadialDensityModel:
    """Radial density of same-pilot interferers, ``plateau * (1 - exp(-rate*(r^2 - r0^2)))``.

    ``inv_moment`` is the unit-density E[1/X_C] (CC only); ``p_E3c`` and
    ``group_inclusion`` thin the CE far field.
    """

    kind: str
    lambda0: float
    kappa: float
    utilization: float
    p_E3c: float = 1.0
    inv_moment: float = 0.0
    group_inclusion: float = 1.0
    c2: float = 1.25

    def __post_init__(self):
        if self.kind not in (CC, CE):
            raise ValueError(f"unknown kind {self.kind!r}")
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be > 0")
        for name in ("utilization", "p_E3c", "group_inclusion"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.kind == CC and not self.inv_moment > 0:
            raise ValueError("CC model needs a positive inverse moment")

    @classmethod
    def build(cls, kind, lambda0, kappa, utilization, group_inclusion=1.0, c2=1.25, p_E3c=None):
        R = radius_scaled(kappa, c2)
        if kind == CC:
            return cls(CC, lambda0, kappa, utilization, 1.0, cc_inverse_moment_unit(R), 1.0, c2)
        if p_E3c is None:
            p_E3c = 1.0 - prob_E3(1.0, R)
        return cls(CE, lambda0, kappa, utilization, p_E3c, 0.0, group_inclusion, c2)

    @property
    def R_c(self) -> float:
        return radius_scaled(self.kappa, self.c2) / math.sqrt(self.lambda0)

    @property
    def r0(self) -> float:
        """Radius below which the density vanishes."""
        return 0.0 if self.kind == CC else self.R_c

    @property
    def plateau(self) -> float:
        """Far-field density."""
        if self.kind == CC:
            return self.lambda0 * self.utilization
        return self.lambda0 * self.utilization * self.p_E3c * self.group_inclusion

    @property
    def rate(self) -> float:
        if self.kind == CC:
            return 2.0 * math.pi * self.lambda0 * self.inv_moment
        return math.pi * CE_PCF_CONSTANT * math.exp(self.kappa**2 / self.c2) * self.p_E3c * self.lambda0

    def density(self, r):
        r = np.asarray(r, dtype=float)
        excess = np.maximum(r * r - self.r0**2, 0.0)
        out = self.plateau * -np.expm1(-self.rate * excess)
        return float(out) if out.ndim == 0 else out

    def intensity_measure(self, r):
        """Expected number of interferers within distance ``r`` (closed form of 2*pi*int density*t dt)."""
        r = np.asarray(r, dtype=float)
        s = np.maximum(r * r - self.r0**2, 0.0)
        a = self.rate
        # pi*(s - (1 - exp(-a s))/a), written to stay accurate for small a*s
        if a <= 0.0:
            out = np.zeros_like(s)
            return float(out) if out.ndim == 0 else out
        x = a * s
        small = x < 1e-4
        xs = np.where(small, x, 0.0)
        ss = np.where(small, s, 0.0)
        core = np.where(small, ss * xs * (0.5 - xs / 6.0 + xs * xs / 24.0), s + np.expm1(-x) / a)
        out = math.pi * self.plateau * core
        return float(out) if out.ndim == 0 else out

    def intensity_measure_quadrature(self, r: float, spec: QuadratureSpec | None = None) -> float:
        """Same as :meth:`intensity_measure` by direct quadrature (cross-check route)."""
        spec = spec or QuadratureSpec(abs_tol=1e-12, rel_tol=1e-10)
        if r <= self.r0:
            return 0.0
        return 2.0 * math.pi * integrate_1d(lambda t: self.density(t) * t, self.r0, r, spec)

    def mean_residual_interference(self, d_hat: float, alpha: float) -> float:
        """Mean interference from all interferers beyond ``d_hat`` (Campbell)."""
        return mean_residual_interference(self, d_hat, alpha)

    def dominant_distance(self) -> "DominantDistance":
        return DominantDistance(self)


@dataclass(frozen=True)
class DominantDistance:
    """Law of the distance to the nearest same-pilot interferer."""

    model: RadialDensityModel

    def cdf(self, d):
        out = -np.expm1(-np.asarray(self.model.intensity_measure(d)))
        return float(out) if np.ndim(out) == 0 else out

    def sf(self, d):
        out = np.exp(-np.asarray(self.model.intensity_measure(d)))
        return float(out) if np.ndim(out) == 0 else out

    def pdf(self, d):
        d = np.asarray(d, dtype=float)
        out = 2.0 * math.pi * d * np.asarray(self.model.density(d)) * np.exp(-np.asarray(self.model.intensity_measure(d)))
        return float(out) if out.ndim == 0 else out

    def quantile(self, p: float) -> float:
        if not 0.0 <= p < 1.0:
            raise ValueError("p must lie in [0, 1)")
        if p == 0.0:
            return self.model.r0
        if self.model.plateau == 0.0:
            return math.inf
        target = -math.log1p(-p)
        lo = self.model.r0
        hi = max(lo, 1.0 / math.sqrt(self.model.lambda0))
        while self.model.intensity_measure(hi) < target:
            hi *= 2.0
        return find_root_monotone(lambda d: self.model.intensity_measure(d) - target, lo, hi, tol=1e-12 * hi)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Inverse-transform draws using the closed-form intensity measure."""
        e = rng.exponential(size=n)
        return inverse_intensity(self.model, e)


def inverse_intensity(model: RadialDensityModel, target) -> np.ndarray:
    """Radius r with Lambda(r) = target, vectorized Newton on the closed form."""
    target = np.asarray(target, dtype=float)
    if model.plateau == 0.0:
        return np.full_like(target, np.inf)
    # Lambda(r) = pi*plateau*(s + expm1(-a s)/a) with s = r^2 - r0^2; solve for s
    a = model.rate
    c = target / (math.pi * model.plateau)
    s = np.maximum(c + 1.0 / a, np.sqrt(2.0 * c / a))
    for _ in range(60):
        h = s + np.expm1(-a * s) / a - c
        dh = -np.expm1(-a * s)
        step = np.where(dh > 0, h / np.maximum(dh, 1e-300), 0.0)
        s_new = np.maximum(s - step, 0.5 * s)
        if np.all(np.abs(s_new - s) <= 1e-14 * np.maximum(s, 1e-300)):
            s = s_new
            break
        s = s_new
    return np.sqrt(s + model.r0**2)


def mean_residual_interference(model: RadialDensityModel, d_hat: float, alpha: float) -> float:
    """2*pi * int_{d_hat}^inf r^(1-2 alpha) density(r) dr."""
    if 2.0 * alpha <= 2.0:
        raise DivergentInterferenceError("mean interference diverges for 2*alpha <= 2")
    if not d_hat > 0:
        raise ValueError("d_hat must be > 0")
    if math.isinf(d_hat):
        return 0.0
    lo = max(d_hat, model.r0)
    # substitute r = lo*exp(s); the integrand decays like exp((2-2 alpha) s)
    s_top = 60.0 / (2.0 * alpha - 2.0)
    f = lambda s: (lo * math.exp(s)) ** (2.0 - 2.0 * alpha) * model.density(lo * math.exp(s))  # noqa: E731
    spec = QuadratureSpec(abs_tol=1e-300, rel_tol=1e-11, max_subdivisions=400)
    pts = None
    # resolve the density's rise, which happens on the scale 1/sqrt(rate)
    knee = math.sqrt(model.r0**2 + 1.0 / model.rate) if model.rate > 0 else lo
    if knee > lo:
        pts = [math.log(knee / lo)]
    return 2.0 * math.pi * integrate_1d(f, 0.0, s_top, spec, points=pts)


@dataclass(frozen=True)
class InterferenceTable:
    """Tabulated g(d_hat) = d_hat^(-2 alpha) + E[I_rem | d_hat] on a log grid.

    ``g`` is strictly decreasing, so the dominant-distance threshold d* with
    g(d*) = x is found by interpolating log d_hat against log g.
    """

    model: RadialDensityModel
    alpha: float
    log_d: np.ndarray
    log_g: np.ndarray
    log_rem: np.ndarray

    @classmethod
    def build(cls, model: RadialDensityModel, alpha: float, n_grid: int = 6400, lo_scaled=1e-4, hi_scaled=80.0):
        if 2.0 * alpha <= 2.0:
            raise DivergentInterferenceError("mean interference diverges for 2*alpha <= 2")
        unit = 1.0 / math.sqrt(model.lambda0)
        d = np.geomspace(lo_scaled * unit, hi_scaled * unit, n_grid)
        if model.r0 > d[0]:
            d = np.unique(np.concatenate([d, [model.r0]]))
        # backward cumulative integration of 2 pi r^(1-2a) density(r) dr, panel by panel
        x, w = composite_gauss_legendre(np.log(d), 8)
        r = np.exp(x)
        vals = w * r ** (2.0 - 2.0 * alpha) * model.density(r)
        panel = vals.reshape(len(d) - 1, 8).sum(axis=1)
        tail = model.plateau * d[-1] ** (2.0 - 2.0 * alpha) / (2.0 * alpha - 2.0)
        rem = 2.0 * math.pi * (np.concatenate([np.cumsum(panel[::-1])[::-1], [0.0]]) + tail)
        g = d ** (-2.0 * alpha) + rem
        with np.errstate(divide="ignore"):
            log_rem = np.log(rem)
        return cls(model, alpha, np.log(d), np.log(g), log_rem)

    def residual(self, d_hat):
        """E[I_rem | d_hat] by log-log interpolation."""
        x = np.log(np.asarray(d_hat, dtype=float))
        return np.exp(np.interp(x, self.log_d, self.log_rem))

    def g(self, d_hat):
        d_hat = np.asarray(d_hat, dtype=float)
        return d_hat ** (-2.0 * self.alpha) + self.residual(d_hat)

    def threshold_distance(self, level):
        """d* with g(d*) = level; +inf when the level lies below the tabulated range."""
        lv = np.log(np.asarray(level, dtype=float))
        # log_g is decreasing: interpolate on the reversed arrays
        out = np.exp(np.interp(lv, self.log_g[::-1], self.log_d[::-1]))
        out = np.where(lv < self.log_g[-1], np.inf, out)
        out = np.where(lv > self.log_g[0], np.exp(self.log_d[0]) * np.exp((self.log_g[0] - lv) / (2 * self.alpha)), out)
        return out
