"""Shared numerical kernels: 1D quadrature, bracketed root finding,
tensor Gauss-Legendre rules and reproducible random streams."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate, optimize


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message: str, estimate: float, abserr: float):
        super().__init__(f"{message} (estimate={estimate!r}, abserr={abserr!r})")
        self.estimate = estimate
        self.abserr = abserr


class BracketError(ValueError):
    """Root bracket does not contain a sign change."""


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances for :func:`integrate_1d`.

    ``tail_cutoff`` replaces an infinite upper limit by a finite one. When it
    is ``None`` the integrand is handed to QUADPACK's infinite-range rule.
    For ``exp(-pi*lam*r**2)`` envelopes ``6/sqrt(lam)`` leaves a tail below
    1e-14 of the peak.
    """

    abs_tol: float = 1e-9
    rel_tol: float = 1e-7
    max_subdivisions: int = 200
    tail_cutoff: float | None = None

    def __post_init__(self):
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be > 0")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")


DEFAULT_QUAD = QuadratureSpec()


def envelope_cutoff(density: float, factor: float = 6.0) -> float:
    """Upper radius where an ``exp(-pi*density*r**2)`` envelope is negligible."""
    return factor / math.sqrt(density)


def integrate_1d(
    f: Callable[[float], float],
    a: float,
    b: float,
    spec: QuadratureSpec = DEFAULT_QUAD,
    points=None,
) -> float:
    if math.isinf(b) and spec.tail_cutoff is not None:
        b = max(a, spec.tail_cutoff)
    if a == b:
        return 0.0
    kwargs = dict(
        epsabs=spec.abs_tol, epsrel=spec.rel_tol, limit=spec.max_subdivisions, full_output=1
    )
    if points is not None and not math.isinf(b):
        pts = [p for p in points if a < p < b]
        if pts:
            kwargs["points"] = pts
    res = integrate.quad(f, a, b, **kwargs)
    value, abserr = res[0], res[1]
    failed = len(res) > 3
    if failed and abserr > max(spec.abs_tol, spec.rel_tol * abs(value)):
        raise QuadratureError(f"quadrature did not converge: {res[3]}", value, abserr)
    return float(value)


def find_root_monotone(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-12) -> float:
    """Root of a monotone ``f`` on ``[lo, hi]``.

    Either endpoint may carry the negative sign.
    """
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return float(lo)
    if fhi == 0.0:
        return float(hi)
    if not (np.isfinite(flo) and np.isfinite(fhi)) or flo * fhi > 0:
        raise BracketError(f"no sign change on [{lo}, {hi}]: f(lo)={flo}, f(hi)={fhi}")
    root = optimize.brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500)
    return float(root)


@lru_cache(maxsize=64)
def _leggauss(n: int):
    x, w = leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre(n: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the n-point Gauss-Legendre rule on [a, b]."""
    x, w = _leggauss(n)
    half = 0.5 * (b - a)
    return half * x + 0.5 * (a + b), half * w


def composite_gauss_legendre(edges, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Concatenated n-point rules over consecutive panels given by ``edges``."""
    edges = np.asarray(edges, dtype=float)
    x, w = _leggauss(n)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (half[:, None] * x[None, :] + mid[:, None]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


@dataclass(frozen=True)
class RngStream:
    """A (seed, stream_id) pair naming an independent random stream.

    Streams are counter-based (Philox) keyed by both integers, so the same pair
    always reproduces the same sequence and distinct ids never overlap.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed) & (2**64 - 1), spawn_key=(int(self.stream_id) & (2**64 - 1),))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, index: int) -> "RngStream":
        """Derived stream for sub-task ``index`` (e.g. one realization)."""
        mixed = np.random.SeedSequence(
            entropy=int(self.seed) & (2**64 - 1), spawn_key=(int(self.stream_id) & (2**64 - 1), int(index))
        ).generate_state(2, np.uint32)
        return RngStream(self.seed, int(mixed[0]) << 32 | int(mixed[1]))


def rng_uniform(stream: RngStream, size: int | None = None):
    """First ``size`` uniform draws in [0, 1) of ``stream`` (a float if ``size`` is None)."""
    gen = stream.generator()
    if size is None:
        return float(gen.random())
    return gen.random(size)


def poisson_truncation(mu: float) -> int:
    """Series cut-off for Poisson sums, tail mass below 1e-10."""
    return int(math.ceil(mu + 10.0 * math.sqrt(mu) + 20.0))
