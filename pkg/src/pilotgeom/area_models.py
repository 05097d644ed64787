"""Cell-centre (CC) and cell-edge (CE) area laws of a typical Poisson-Voronoi cell.

Exact first and second moments, the atoms at ``pi*R_c**2`` (CC) and ``0``
(CE), moment-matched truncated-beta / Weibull continuous parts, and the
resulting mixed distributions.

All analytical work is done at unit BS density and rescaled: with
``t = pi*lambda0*R_c**2`` the law of ``lambda0*X`` depends on ``t`` only.
"""

from __future__ import annotations

import math
import threading
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import special

from .geometry import CC, CE, Window, lens_area, sample_ppp, voronoi_polygon
from .numerics import (
    BracketError,
    QuadratureSpec,
    RngStream,
    composite_gauss_legendre,
    find_root_monotone,
    gauss_legendre,
    integrate_1d,
)


class FitRangeError(ValueError):
    """No parameter inside the admissible bracket reproduces the target moments."""


class DegenerateConditioningError(ValueError):
    """The conditioning event has (numerically) zero probability."""


class SingularMomentWarning(RuntimeWarning):
    """An inverse moment is sensitive to its lower integration cutoff."""


WEIBULL_SHAPE_RANGE = (0.05, 50.0)
BETA_SHAPE_RANGE = (0.01, 200.0)
# beta kernel bounds relative to pi*R_c**2: truncated support [v, w], full support [y, z]
BETA_V, BETA_W, BETA_Y, BETA_Z = 0.0, 1.0, 0.0, 1.5


def _scaled_t(lambda0: float, R_c: float) -> float:
    if lambda0 <= 0:
        raise ValueError("lambda0 must be > 0")
    if R_c < 0:
        raise ValueError("R_c must be >= 0")
    return math.pi * lambda0 * R_c * R_c


# ---------------------------------------------------------------------------
# second moments
#
# E[X^2] = 2pi int int int exp(-V(r1, r2, u)) du r2 dr2 r1 dr1 over the radial
# range of the region. Because (E X)^2 is the same integral with V replaced by
# pi*(r1^2 + r2^2), the variance is integrated directly:
#     Var X = 2pi int int int exp(-pi(r1^2+r2^2)) * expm1(lens(r1, r2, u)) ...
# which keeps full relative accuracy when Var X << (E X)^2 (small R_c).


def _variance_tensor(lo: float, hi: float, n: int, panels: int = 8) -> float:
    # symmetric in (r1, r2) and in u -> u' = 2pi - u: integrate r2 in [lo, r1], u in [0, pi]
    r1, w1 = composite_gauss_legendre(np.linspace(lo, hi, panels + 1), n)
    xs, ws = gauss_legendre(n, 0.0, 1.0)
    u, wu = gauss_legendre(n, 0.0, math.pi)
    R1 = r1[:, None, None]
    S = xs[None, :, None]
    R2 = lo + (R1 - lo) * S
    W2 = (R1 - lo) * ws[None, :, None]
    U = u[None, None, :]
    f = np.exp(-math.pi * (R1 * R1 + R2 * R2)) * np.expm1(lens_area(R1, R2, U)) * R1 * R2
    total = np.sum(w1[:, None, None] * W2 * wu[None, None, :] * f)
    return 8.0 * math.pi * float(total)


def _variance_unit(lo: float, hi: float, rel_tol: float = 1e-6) -> float:
    if hi <= lo:
        return 0.0
    n = 12
    prev = _variance_tensor(lo, hi, n)
    while True:
        n *= 2
        cur = _variance_tensor(lo, hi, n)
        if abs(cur - prev) <= rel_tol * abs(cur) or n >= 96:
            return cur
        prev = cur


def _ce_upper(R1: float) -> float:
    # exp(-pi r^2) envelope falls below 1e-14 of its value at R1 well before this
    return math.sqrt(R1 * R1 + 36.0)


@lru_cache(maxsize=512)
def _var_cc_unit(t: float) -> float:
    return _variance_unit(0.0, math.sqrt(t / math.pi))


@lru_cache(maxsize=512)
def _var_ce_unit(t: float) -> float:
    R1 = math.sqrt(t / math.pi)
    return _variance_unit(R1, _ce_upper(R1))


def moments_cc(lambda0: float, R_c: float) -> tuple[float, float]:
    """First two moments of the CC (Johnson-Mehl) area of a typical cell."""
    t = _scaled_t(lambda0, R_c)
    m1 = -math.expm1(-t)
    m2 = m1 * m1 + _var_cc_unit(t) if t > 0 else 0.0
    return m1 / lambda0, m2 / lambda0**2


def moments_ce(lambda0: float, R_c: float) -> tuple[float, float]:
    """First two moments of the CE area of a typical cell."""
    t = _scaled_t(lambda0, R_c)
    m1 = math.exp(-t)
    m2 = m1 * m1 + _var_ce_unit(t)
    return m1 / lambda0, m2 / lambda0**2


# ---------------------------------------------------------------------------
# event probabilities


def prob_E1(lambda0: float, R_c: float) -> float:
    """P[R_m > R_c]: the whole disc of radius R_c lies in the cell."""
    return math.exp(-4.0 * _scaled_t(lambda0, R_c))


_RM_LOCK = threading.Lock()
DEFAULT_E3_CELLS = 25_000  # 3-sigma half-width <= 0.0095 for any p
DEFAULT_E3_SEED = 2018


@lru_cache(maxsize=8)
def _scaled_circumradii(n_cells: int, seed: int) -> np.ndarray:
    """Sorted ``R_M*sqrt(lambda0)`` of ``n_cells`` interior cells at unit density."""
    window = Window(17.0, 3.0)
    out = []
    total = 0
    k = 0
    base = RngStream(seed, 0xE3)
    while total < n_cells:
        pattern = sample_ppp(1.0, window, base.child(k))
        k += 1
        for i in pattern.interior_indices():
            poly, _, truncated = voronoi_polygon(int(i), pattern)
            if truncated:
                continue
            out.append(math.sqrt(float(np.max(np.sum(poly * poly, axis=1)))))
            total += 1
            if total >= n_cells:
                break
    arr = np.sort(np.asarray(out))
    arr.setflags(write=False)
    return arr


def _xi_terms(c: float, k_max: int) -> list[float]:
    """Simplex integrals of the circumradius series for k = 1..k_max."""

    def F(t):
        t = np.asarray(t, dtype=float)
        return np.where(t <= 0.5, np.sin(np.pi * t) ** 2, 1.0) * (t >= 0)

    def G(t):
        t = np.asarray(t, dtype=float)
        lo = t / 2.0 - np.sin(2.0 * np.pi * np.minimum(t, 0.5)) / (4.0 * np.pi)
        return np.where(t <= 0.5, lo, 0.25 + (t - 0.5))

    xis = [float(F(1.0) * np.exp(c * G(1.0)))]
    if k_max >= 2:
        u, w = composite_gauss_legendre(np.linspace(0.0, 1.0, 9), 32)
        xis.append(float(np.sum(w * F(u) * F(1 - u) * np.exp(c * (G(u) + G(1 - u))))))
    if k_max >= 3:
        u, w = composite_gauss_legendre(np.linspace(0.0, 1.0, 9), 24)
        s, ws = gauss_legendre(24, 0.0, 1.0)
        U1 = u[:, None]
        U2 = (1.0 - U1) * s[None, :]
        W = w[:, None] * (1.0 - U1) * ws[None, :]
        U3 = 1.0 - U1 - U2
        val = F(U1) * F(U2) * F(U3) * np.exp(c * (G(U1) + G(U2) + G(U3)))
        xis.append(float(np.sum(W * val)))
    return xis


def prob_E3(
    lambda0: float,
    R_c: float,
    method: str = "monte_carlo",
    n_cells: int = DEFAULT_E3_CELLS,
    seed: int = DEFAULT_E3_SEED,
    k_max: int = 3,
) -> float:
    """P[R_M <= R_c]: the cell has no CE region.

    ``monte_carlo`` uses a cached, seeded sample of scaled circumradii.
    ``truncated_series`` evaluates the circumradius series up to ``k_max``
    terms and falls back to Monte Carlo when the partial sum is unusable.
    """
    t = _scaled_t(lambda0, R_c)
    if t == 0.0:
        return 0.0
    r_scaled = R_c * math.sqrt(lambda0)
    if method == "truncated_series":
        c = 4.0 * math.pi * r_scaled**2
        xis = _xi_terms(c, k_max)
        terms = [(-c) ** k / math.factorial(k) * xi for k, xi in enumerate(xis, 1)]
        p = 1.0 - math.exp(-c) * (1.0 - sum(terms))
        if 0.0 <= p <= 1.0 and abs(math.exp(-c) * terms[-1]) < 1e-3:
            return p
        warnings.warn(
            f"circumradius series not converged at R_c*sqrt(lambda0)={r_scaled:.4g}; using Monte Carlo",
            RuntimeWarning,
            stacklevel=2,
        )
    elif method != "monte_carlo":
        raise ValueError(f"unknown method {method!r}")
    with _RM_LOCK:
        samples = _scaled_circumradii(n_cells, seed)
    return float(np.searchsorted(samples, r_scaled, side="right")) / len(samples)


# ---------------------------------------------------------------------------
# conditional moments


def conditional_moments(kind: str, lambda0: float, R_c: float, p_E3: float | None = None) -> tuple[float, float]:
    """Mean and variance of the CC area given E1^c, or of the CE area given E3^c."""
    if kind == CC:
        m1, m2 = moments_cc(lambda0, R_c)
        p = prob_E1(lambda0, R_c)
        atom = math.pi * R_c * R_c
    elif kind == CE:
        m1, m2 = moments_ce(lambda0, R_c)
        p = prob_E3(lambda0, R_c) if p_E3 is None else p_E3
        atom = 0.0
    else:
        raise ValueError(f"unknown kind {kind!r}")
    q = 1.0 - p
    if q < 1e-12:
        raise DegenerateConditioningError(f"P[complement]={q:.3g} for {kind} at R_c={R_c}")
    mean = (m1 - atom * p) / q
    # total variance: Var X = q Var_c + p q (atom - mean_c)^2
    var = (m2 - m1 * m1 - p * q * (atom - mean) ** 2) / q
    return mean, var


# ---------------------------------------------------------------------------
# moment matching


def weibull_from_moments(mean: float, var: float) -> tuple[float, float]:
    """(shape, scale) of the Weibull law with the given mean and variance."""
    if not (mean > 0 and var > 0):
        raise FitRangeError("Weibull fit needs positive mean and variance")
    cv2 = var / (mean * mean)

    def g(log_k):
        k = math.exp(log_k)
        return math.exp(special.gammaln(1 + 2 / k) - 2 * special.gammaln(1 + 1 / k)) - 1.0 - cv2

    lo, hi = (math.log(x) for x in WEIBULL_SHAPE_RANGE)
    try:
        log_k = find_root_monotone(lambda s: math.log1p(g(s) + cv2) - math.log1p(cv2), lo, hi, 1e-14)
    except BracketError as exc:
        raise FitRangeError(f"no Weibull shape in {WEIBULL_SHAPE_RANGE} gives CV^2={cv2:.6g}") from exc
    shape = math.exp(log_k)
    scale = mean / math.exp(special.gammaln(1 + 1 / shape))
    return shape, scale


def _beta_moments(a: float, b: float, q: float) -> tuple[float, float]:
    """Mean and variance of Beta(a, b) on [0, 1] truncated to [0, q]."""
    i0 = special.betainc(a, b, q)
    m1 = a / (a + b) * special.betainc(a + 1, b, q) / i0
    m2 = a * (a + 1) / ((a + b) * (a + b + 1)) * special.betainc(a + 2, b, q) / i0
    return m1, m2 - m1 * m1


def truncated_beta_from_moments(mean: float, var: float, w: float, z: float) -> tuple[float, float]:
    """Shapes (a, b) of the beta kernel on [0, z], truncated to [0, w], matching mean/variance.

    Outer bisection over ``log a``; for each ``a`` the inner solve finds the
    ``b`` that reproduces the mean (the mean decreases in ``b``). Along that
    curve the variance decreases in ``a``.
    """
    if not (0 < mean < w and var > 0):
        raise FitRangeError("truncated beta fit needs 0 < mean < w and var > 0")
    q = w / z
    m = mean / z
    v = var / (z * z)
    lo, hi = (math.log(x) for x in BETA_SHAPE_RANGE)

    def b_for(a):
        f = lambda lb: _beta_moments(a, math.exp(lb), q)[0] - m  # noqa: E731
        f_lo, f_hi = f(lo), f(hi)
        if f_lo < 0:
            return None, +1  # mean unreachable from below: need larger a
        if f_hi > 0:
            return None, -1  # mean too large even at largest b: need smaller a
        return math.exp(find_root_monotone(f, lo, hi, 1e-14)), 0

    def outer(la):
        a = math.exp(la)
        b, flag = b_for(a)
        if b is None:
            return float(flag)
        return math.log(_beta_moments(a, b, q)[1]) - math.log(v)

    try:
        la = find_root_monotone(outer, lo, hi, 1e-13)
    except BracketError as exc:
        raise FitRangeError(f"no beta shapes in {BETA_SHAPE_RANGE} match mean={mean:.6g}, var={var:.6g}") from exc
    a = math.exp(la)
    b, flag = b_for(a)
    if b is None:
        raise FitRangeError("beta fit landed on an infeasible shape")
    return a, b


# ---------------------------------------------------------------------------
# mixed distributions


@dataclass(frozen=True)
class MixedAreaDistribution:
    """Atom plus continuous part.

    CC: atom of mass P[E1] at ``pi*R_c**2``; continuous part a beta kernel on
    ``[y, z] = [0, 1.5*pi*R_c**2]`` truncated to ``[v, w] = [0, pi*R_c**2]``
    with shapes ``a_shape``/``b_shape``.
    CE: atom of mass P[E3] at 0; continuous part Weibull(``shape``, ``scale``).
    """

    kind: str
    atom_location: float
    atom_mass: float
    params: dict = field(default_factory=dict)
    lambda0: float = 1.0
    R_c: float = 0.0

    # --- continuous part -------------------------------------------------
    @property
    def support_top(self) -> float:
        return self.params["w"] if self.kind == CC else math.inf

    def _cont_cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.atom_mass >= 1.0:
            return np.where(x >= self.atom_location, 1.0, 0.0)
        if self.kind == CC:
            a, b, w, z = (self.params[k] for k in ("a_shape", "b_shape", "w", "z"))
            xc = np.clip(x, 0.0, w)
            return special.betainc(a, b, xc / z) / special.betainc(a, b, w / z)
        k, s = self.params["shape"], self.params["scale"]
        return -np.expm1(-((np.maximum(x, 0.0) / s) ** k))

    def _cont_pdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.atom_mass >= 1.0:
            return np.zeros_like(x)
        if self.kind == CC:
            a, b, w, z = (self.params[k] for k in ("a_shape", "b_shape", "w", "z"))
            inside = (x > 0) & (x < w)
            xs = np.where(inside, x / z, 0.5 * w / z)
            log_norm = special.betaln(a, b) + math.log(special.betainc(a, b, w / z)) + math.log(z)
            val = np.exp((a - 1) * np.log(xs) + (b - 1) * np.log1p(-xs) - log_norm)
            return np.where(inside, val, 0.0)
        k, s = self.params["shape"], self.params["scale"]
        xp = np.maximum(x, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = k / s * (xp / s) ** (k - 1) * np.exp(-((xp / s) ** k))
        return np.where(x > 0, val, 0.0)

    def _cont_ppf(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == CC:
            a, b, w, z = (self.params[k] for k in ("a_shape", "b_shape", "w", "z"))
            return z * special.betaincinv(a, b, u * special.betainc(a, b, w / z))
        k, s = self.params["shape"], self.params["scale"]
        return s * (-np.log1p(-u)) ** (1.0 / k)

    # --- mixed law -------------------------------------------------------
    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        cont = (1.0 - self.atom_mass) * self._cont_cdf(x) if self.atom_mass < 1 else 0.0
        out = cont + np.where(x >= self.atom_location, self.atom_mass, 0.0)
        if self.kind == CC:
            out = np.where(x >= self.atom_location, 1.0, out)
        out = np.where(x < 0, 0.0, out)
        return float(out) if out.ndim == 0 else out

    def cdf_left(self, x):
        """Left limit F(x-)."""
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.cdf(x)) - np.where(x == self.atom_location, self.atom_mass, 0.0)
        return float(out) if out.ndim == 0 else out

    def pdf_continuous(self, x):
        """Density of the continuous component, weighted by ``1 - atom_mass``."""
        out = (1.0 - self.atom_mass) * self._cont_pdf(x)
        return float(out) if np.ndim(out) == 0 else out

    def conditional_pdf(self, x):
        """Density of the continuous component alone (integrates to 1)."""
        return self._cont_pdf(x)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        atom = rng.random(n) < self.atom_mass
        out = np.full(n, self.atom_location, dtype=float)
        m = int(np.count_nonzero(~atom))
        if m:
            out[~atom] = self._cont_ppf(rng.random(m))
        return out

    def continuous_bounds(self) -> tuple[float, float]:
        if self.kind == CC:
            return 0.0, self.params["w"]
        return 0.0, float(self._cont_ppf(1.0 - 1e-13))

    def continuous_mean(self) -> float:
        if self.kind == CE:
            k, s = self.params["shape"], self.params["scale"]
            return s * math.exp(special.gammaln(1 + 1 / k))
        a, b, z, w = (self.params[k] for k in ("a_shape", "b_shape", "z", "w"))
        return z * _beta_moments(a, b, w / z)[0]


def eval_mixed(dist: MixedAreaDistribution, x, what: str = "cdf"):
    if what == "cdf":
        return dist.cdf(x)
    if what == "pdf_continuous":
        return dist.pdf_continuous(x)
    raise ValueError(f"unknown quantity {what!r}")


def inverse_moment(dist: MixedAreaDistribution, condition_on_continuous: bool = False, cutoff_factor: float = 1e-6) -> float:
    """E[1/X] under ``dist``.

    The continuous part is integrated from ``cutoff_factor`` times its mean;
    a :class:`SingularMomentWarning` is issued when halving the cutoff moves
    the value by more than 1%. For CC the atom contributes
    ``P[E1]/(pi R_c^2)`` unless ``condition_on_continuous``. The CE atom at 0
    is excluded (the quantity is E[1/X; X > 0]).
    """
    atom_term = 0.0
    if dist.atom_mass > 0 and dist.atom_location > 0:
        atom_term = dist.atom_mass / dist.atom_location
    if dist.atom_mass >= 1.0:
        return atom_term
    lo_c, hi_c = dist.continuous_bounds()
    x_min = cutoff_factor * dist.continuous_mean()
    spec = QuadratureSpec(abs_tol=1e-13, rel_tol=1e-9, max_subdivisions=400)

    def integral(xm):
        # substitution x = exp(s): int f(x)/x dx = int f(e^s) ds
        f = lambda s: float(dist.conditional_pdf(math.exp(s)))  # noqa: E731
        return integrate_1d(f, math.log(xm), math.log(hi_c), spec)

    cont = integral(x_min)
    if cont > 0:
        finer = integral(0.5 * x_min)
        if abs(finer - cont) > 0.01 * abs(cont):
            warnings.warn(
                f"inverse moment of the {dist.kind} continuous part depends on the cutoff "
                f"({cont:.6g} -> {finer:.6g})",
                SingularMomentWarning,
                stacklevel=2,
            )
    if condition_on_continuous:
        return cont
    return atom_term + (1.0 - dist.atom_mass) * cont


# ---------------------------------------------------------------------------
# fitted laws (cached on t = pi*lambda0*R_c^2 at unit density)


@lru_cache(maxsize=256)
def _fit_cc_unit(t: float) -> tuple[float, float]:
    R1 = math.sqrt(t / math.pi)
    mean, var = conditional_moments(CC, 1.0, R1)
    return truncated_beta_from_moments(mean, var, BETA_W * t, BETA_Z * t)


@lru_cache(maxsize=256)
def _fit_ce_unit(t: float, p_E3: float) -> tuple[float, float]:
    R1 = math.sqrt(t / math.pi)
    mean, var = conditional_moments(CE, 1.0, R1, p_E3=p_E3)
    return weibull_from_moments(mean, var)


def fit_cc_truncated_beta(lambda0: float, R_c: float) -> tuple[float, float]:
    """Beta shapes (a_shape, b_shape) of the CC area given E1^c (dimensionless)."""
    t = _scaled_t(lambda0, R_c)
    if t == 0:
        raise FitRangeError("R_c = 0 has no continuous CC part")
    return _fit_cc_unit(t)


def fit_ce_weibull(lambda0: float, R_c: float, p_E3: float | None = None) -> tuple[float, float]:
    """Weibull (shape, scale) of the CE area given E3^c; scale in m^2."""
    t = _scaled_t(lambda0, R_c)
    if p_E3 is None:
        p_E3 = prob_E3(lambda0, R_c)
    shape, scale_unit = _fit_ce_unit(t, p_E3)
    return shape, scale_unit / lambda0


def area_distribution(kind: str, lambda0: float, R_c: float, p_E3: float | None = None) -> MixedAreaDistribution:
    """Fitted mixed CC or CE area law at (lambda0, R_c)."""
    t = _scaled_t(lambda0, R_c)
    disc = math.pi * R_c * R_c
    if kind == CC:
        p1 = prob_E1(lambda0, R_c)
        if t == 0:
            return MixedAreaDistribution(CC, 0.0, 1.0, {"w": 0.0, "z": 0.0}, lambda0, R_c)
        a, b = fit_cc_truncated_beta(lambda0, R_c)
        params = {
            "a_shape": a,
            "b_shape": b,
            "v": BETA_V * disc,
            "w": BETA_W * disc,
            "y": BETA_Y * disc,
            "z": BETA_Z * disc,
        }
        return MixedAreaDistribution(CC, disc, p1, params, lambda0, R_c)
    if kind == CE:
        p3 = prob_E3(lambda0, R_c) if p_E3 is None else p_E3
        shape, scale = fit_ce_weibull(lambda0, R_c, p_E3=p3)
        return MixedAreaDistribution(CE, 0.0, p3, {"shape": shape, "scale": scale}, lambda0, R_c)
    raise ValueError(f"unknown kind {kind!r}")


@lru_cache(maxsize=256)
def cc_inverse_moment_unit(R_unit: float) -> float:
    """E[1/X_C] at unit BS density for threshold radius ``R_unit``."""
    dist = area_distribution(CC, 1.0, R_unit)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SingularMomentWarning)
        return inverse_moment(dist)
