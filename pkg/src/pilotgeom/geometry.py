"""Point patterns, Voronoi / Johnson-Mehl cell geometry and region sampling."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .numerics import RngStream

CC = "CC"
CE = "CE"


class BoundaryError(ValueError):
    """The requested cell is not fully determined by the points in the window."""


class EmptyRegionError(ValueError):
    """Sampling was requested from a region of zero area."""


@dataclass(frozen=True)
class Window:
    """Square observation window ``[-half_width, half_width]^2``."""

    half_width: float
    guard_band: float = 0.0

    def __post_init__(self):
        if not (self.half_width > self.guard_band >= 0):
            raise ValueError("need half_width > guard_band >= 0")

    @classmethod
    def for_density(cls, density: float, half_width: float = 8.0, guard_band: float = 3.0) -> "Window":
        """Window sized in units of the mean inter-site scale ``1/sqrt(density)``."""
        s = 1.0 / math.sqrt(density)
        return cls(half_width * s, guard_band * s)

    @property
    def area(self) -> float:
        return (2.0 * self.half_width) ** 2

    def contains(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return np.all(np.abs(xy) <= self.half_width, axis=-1)

    def is_interior(self, xy) -> np.ndarray:
        """True for points farther than the guard band from the window boundary."""
        xy = np.asarray(xy, dtype=float)
        return np.all(np.abs(xy) < self.half_width - self.guard_band, axis=-1)


@dataclass(frozen=True, eq=False)
class PointPattern:
    points: np.ndarray
    window: Window
    density: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "points", pts)
        if self.density < 0:
            raise ValueError("density must be >= 0")

    def __len__(self) -> int:
        return len(self.points)

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.points)

    def interior_indices(self) -> np.ndarray:
        return np.flatnonzero(self.window.is_interior(self.points))


def sample_ppp(density: float, window: Window, stream: RngStream | np.random.Generator, extra_points=None) -> PointPattern:
    """Homogeneous PPP of ``density`` in ``window``.

    ``extra_points`` are prepended (e.g. a BS at the origin for a Palm
    realization; by Slivnyak's theorem the result is still a PPP seen from it).
    """
    if density < 0:
        raise ValueError("density must be >= 0")
    rng = stream.generator() if isinstance(stream, RngStream) else stream
    n = rng.poisson(density * window.area) if density > 0 else 0
    pts = rng.uniform(-window.half_width, window.half_width, size=(n, 2))
    if extra_points is not None:
        pts = np.vstack([np.asarray(extra_points, dtype=float).reshape(-1, 2), pts])
    return PointPattern(pts, window, density)


# ---------------------------------------------------------------------------
# polygon helpers (small convex polygons, plain floats are faster than numpy)


def _clip_halfplane(poly: list, nx: float, ny: float, c: float) -> list:
    """Keep the part of ``poly`` with ``nx*x + ny*y <= c``."""
    out = []
    n = len(poly)
    for i in range(n):
        px, py = poly[i]
        qx, qy = poly[(i + 1) % n]
        sp = nx * px + ny * py - c
        sq = nx * qx + ny * qy - c
        if sp <= 0:
            out.append((px, py))
        if (sp <= 0) != (sq <= 0):
            t = sp / (sp - sq)
            out.append((px + t * (qx - px), py + t * (qy - py)))
    return out


def polygon_area(poly) -> float:
    """Signed shoelace area (positive for counterclockwise vertices)."""
    p = np.asarray(poly, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _segment_disc_area(ax, ay, bx, by, R) -> float:
    """Signed area of triangle (0, a, b) intersected with the disc |x| <= R."""
    dx, dy = bx - ax, by - ay
    qa = dx * dx + dy * dy
    if qa == 0.0:
        return 0.0
    qb = 2.0 * (ax * dx + ay * dy)
    qc = ax * ax + ay * ay - R * R
    ts = [0.0]
    disc = qb * qb - 4.0 * qa * qc
    if disc > 0.0:
        sq = math.sqrt(disc)
        for t in ((-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)):
            if 0.0 < t < 1.0:
                ts.append(t)
    ts.append(1.0)
    area = 0.0
    R2 = R * R
    for t0, t1 in zip(ts[:-1], ts[1:]):
        px, py = ax + t0 * dx, ay + t0 * dy
        qx, qy = ax + t1 * dx, ay + t1 * dy
        tm = 0.5 * (t0 + t1)
        mx, my = ax + tm * dx, ay + tm * dy
        cross = px * qy - py * qx
        if mx * mx + my * my < R2 * (1.0 - 1e-12):
            area += 0.5 * cross
        else:
            area += 0.5 * R2 * math.atan2(cross, px * qx + py * qy)
    return area


def disc_clip_area(poly_rel, R: float) -> float:
    """Area of a CCW polygon (coordinates relative to the disc centre) inside radius ``R``."""
    if R <= 0:
        return 0.0
    pts = [tuple(p) for p in np.asarray(poly_rel, dtype=float)]
    n = len(pts)
    total = 0.0
    for i in range(n):
        ax, ay = pts[i]
        bx, by = pts[(i + 1) % n]
        total += _segment_disc_area(ax, ay, bx, by, R)
    return total


def voronoi_polygon(bs_index: int, pattern: PointPattern, max_radius: float | None = None):
    """Voronoi cell of one BS by successive half-plane clipping.

    Returns ``(polygon_rel, r_m, truncated)`` with vertices relative to the BS,
    counterclockwise. Neighbours are visited by increasing distance and the
    loop stops once a neighbour is farther than twice the current farthest
    vertex, since its bisector can no longer cut the cell. ``truncated`` is set
    when the window edge is still part of the cell boundary.
    """
    pts = pattern.points
    bx, by = pts[bs_index]
    h = pattern.window.half_width
    poly = [(-h - bx, -h - by), (h - bx, -h - by), (h - bx, h - by), (-h - bx, h - by)]
    n_pts = len(pts)
    if max_radius is None:
        max_radius = 6.0 / math.sqrt(pattern.density) if pattern.density > 0 else 2.0 * h
    k = min(16, n_pts)
    r_m = math.inf
    done = False
    start = 1
    while not done:
        dist, idx = pattern.tree.query(pts[bs_index], k=k)
        dist = np.atleast_1d(dist)
        idx = np.atleast_1d(idx)
        for d, j in zip(dist[start:], idx[start:]):
            if not np.isfinite(d) or j >= n_pts:
                done = True
                break
            if j == bs_index:
                continue
            if d == 0.0:
                raise ValueError("coincident base stations")
            if r_m is math.inf:
                r_m = 0.5 * d
            rmax2 = max(x * x + y * y for x, y in poly)
            if d > 2.0 * math.sqrt(rmax2) or d > 2.0 * max_radius:
                done = True
                break
            nx, ny = (pts[j, 0] - bx) / d, (pts[j, 1] - by) / d
            poly = _clip_halfplane(poly, nx, ny, 0.5 * d)
        if done or k >= n_pts:
            break
        start = k
        k = min(2 * k, n_pts)
    poly_arr = np.array(poly, dtype=float)
    tol = 1e-9 * h
    truncated = bool(np.any(np.abs(np.abs(poly_arr + (bx, by)) - h) <= tol))
    return poly_arr, r_m, truncated


@dataclass(frozen=True, eq=False)
class CellGeometry:
    bs_index: int
    bs: tuple
    polygon: np.ndarray
    cell_area: float
    cc_area: float
    ce_area: float
    r_m: float
    r_M: float
    R_c: float
    truncated: bool = False

    @property
    def has_ce_region(self) -> bool:
        return self.ce_area > 0.0

    @property
    def polygon_rel(self) -> np.ndarray:
        return self.polygon - np.asarray(self.bs)

    @classmethod
    def from_polygon(cls, bs_index, bs, poly_rel, r_m, R_c, truncated=False) -> "CellGeometry":
        poly_rel = np.asarray(poly_rel, dtype=float)
        cell_area = polygon_area(poly_rel)
        r_M = float(np.sqrt(np.max(np.sum(poly_rel**2, axis=1))))
        if R_c >= r_M:
            cc_area = cell_area
        elif R_c <= r_m:
            # inscribed disc: exact atom value rather than a sum of arc sectors
            cc_area = math.pi * R_c * R_c
        else:
            cc_area = min(disc_clip_area(poly_rel, R_c), cell_area)
        ce_area = cell_area - cc_area
        # tiny slivers below round-off are not a CE region
        if R_c >= r_M or ce_area <= 1e-12 * cell_area:
            cc_area, ce_area = cell_area, 0.0
        return cls(
            bs_index=int(bs_index),
            bs=(float(bs[0]), float(bs[1])),
            polygon=poly_rel + np.asarray(bs, dtype=float),
            cell_area=cell_area,
            cc_area=cc_area,
            ce_area=ce_area,
            r_m=float(r_m),
            r_M=r_M,
            R_c=float(R_c),
            truncated=truncated,
        )

    def with_radius(self, R_c: float) -> "CellGeometry":
        return CellGeometry.from_polygon(self.bs_index, self.bs, self.polygon_rel, self.r_m, R_c, self.truncated)


def build_cell(bs_index: int, pattern: PointPattern, R_c: float, allow_boundary: bool = False) -> CellGeometry:
    """Voronoi cell of BS ``bs_index`` split into its CC (disc of radius ``R_c``) and CE parts.

    Cells of BSs in the guard band raise :class:`BoundaryError` unless
    ``allow_boundary`` is set, in which case the cell may be clipped by the
    window (``truncated``).
    """
    if len(pattern) == 0:
        raise ValueError("empty pattern")
    bs = pattern.points[bs_index]
    if not allow_boundary and not pattern.window.is_interior(bs):
        raise BoundaryError(f"BS {bs_index} lies in the guard band")
    poly_rel, r_m, truncated = voronoi_polygon(bs_index, pattern)
    if truncated and not allow_boundary:
        raise BoundaryError(f"cell {bs_index} reaches the window boundary")
    return CellGeometry.from_polygon(bs_index, bs, poly_rel, r_m, R_c, truncated)


def build_cells(pattern: PointPattern, R_c: float, indices: Iterable[int] | None = None, allow_boundary=False):
    if indices is None:
        indices = pattern.interior_indices()
    return [build_cell(int(i), pattern, R_c, allow_boundary=allow_boundary) for i in indices]


def points_in_convex(poly, xy) -> np.ndarray:
    """Membership of points ``xy`` (n, 2) in a CCW convex polygon."""
    p = np.asarray(poly, dtype=float)
    q = np.roll(p, -1, axis=0)
    e = q - p
    rel = xy[:, None, :] - p[None, :, :]
    cross = e[None, :, 0] * rel[:, :, 1] - e[None, :, 1] * rel[:, :, 0]
    return np.all(cross >= 0.0, axis=1)


def _ce_wedges(poly_rel, R: float) -> np.ndarray:
    """Angular pieces of the CE region of a CCW polygon around the origin.

    Within the wedge of one edge the boundary is ``r(theta) = p/cos(theta - phi)``
    and the CE part is ``R < r < r(theta)``, over at most two angular
    intervals. Rows are (t0, t1, p, phi, area, fmax) with ``fmax`` an upper
    bound of ``r(theta)**2 - R**2`` on the interval.
    """
    P = np.asarray(poly_rel, dtype=float)
    rows = []
    for k in range(len(P)):
        ax, ay = P[k]
        bx, by = P[(k + 1) % len(P)]
        dx, dy = bx - ax, by - ay
        t = -(ax * dx + ay * dy) / (dx * dx + dy * dy)
        fx, fy = ax + t * dx, ay + t * dy
        p = math.hypot(fx, fy)
        lo = math.atan2(ay, ax)
        hi = lo + math.atan2(ax * by - ay * bx, ax * bx + ay * by)
        phi = lo + math.atan2(ax * fy - ay * fx, ax * fx + ay * fy)
        if p >= R:
            intervals = [(lo, hi)]
        else:
            delta = math.acos(p / R)
            intervals = [(lo, min(hi, phi - delta)), (max(lo, phi + delta), hi)]
        for t0, t1 in intervals:
            if t1 <= t0:
                continue
            area = 0.5 * (p * p * (math.tan(t1 - phi) - math.tan(t0 - phi)) - R * R * (t1 - t0))
            far = max(abs(t0 - phi), abs(t1 - phi))
            rows.append((t0, t1, p, phi, max(area, 0.0), (p / math.cos(far)) ** 2 - R * R))
    return np.array(rows).reshape(-1, 6)


def _sample_ce(cell: "CellGeometry", n: int, rng: np.random.Generator) -> np.ndarray:
    """Exact uniform draws from the CE region (polygon minus disc) by wedge decomposition.

    Bounding-box rejection degenerates for the thin corner slivers left when
    R_c is close to the circumradius; here the acceptance rate stays O(1).
    """
    w = _ce_wedges(cell.polygon_rel, cell.R_c)
    # propose pieces by envelope mass so that acceptance leaves them area-weighted
    env = w[:, 5] * (w[:, 1] - w[:, 0])
    prob = env / env.sum()
    R2 = cell.R_c * cell.R_c
    out = np.empty((n, 2))
    filled = 0
    while filled < n:
        m = 2 * (n - filled) + 8
        k = rng.choice(len(w), size=m, p=prob)
        t0, t1, p, phi, _, fmax = w[k].T
        theta = t0 + (t1 - t0) * rng.random(m)
        r_edge2 = (p / np.cos(theta - phi)) ** 2
        ok = rng.random(m) * fmax <= r_edge2 - R2
        theta, r_edge2 = theta[ok], r_edge2[ok]
        r = np.sqrt(R2 + rng.random(len(theta)) * (r_edge2 - R2))
        take = min(len(r), n - filled)
        out[filled : filled + take, 0] = r[:take] * np.cos(theta[:take])
        out[filled : filled + take, 1] = r[:take] * np.sin(theta[:take])
        filled += take
    return out


def sample_in_region(
    cell: CellGeometry, kind: str, stream: RngStream | np.random.Generator, size: int | None = None
) -> np.ndarray:
    """Uniform point(s) in the CC or CE region of ``cell``.

    CC uses bounding-box rejection within the disc's box; CE uses the exact
    wedge sampler.
    """
    rng = stream.generator() if isinstance(stream, RngStream) else stream
    n = 1 if size is None else int(size)
    if kind not in (CC, CE):
        raise ValueError(f"unknown region kind {kind!r}")
    if kind == CE and not cell.has_ce_region:
        raise EmptyRegionError(f"cell {cell.bs_index} has no CE region")
    if kind == CC and cell.cc_area <= 0.0:
        raise EmptyRegionError(f"cell {cell.bs_index} has no CC region")
    if kind == CE:
        out = _sample_ce(cell, n, rng)
    else:
        poly = cell.polygon_rel
        R = cell.R_c
        lo = np.maximum(poly.min(axis=0), -R)
        hi = np.minimum(poly.max(axis=0), R)
        accept_rate = max(cell.cc_area / float(np.prod(hi - lo)), 1e-3)
        out = np.empty((n, 2))
        filled = 0
        R2 = R * R
        while filled < n:
            need = n - filled
            batch = int(min(need / accept_rate * 1.2 + 8, 1_000_000))
            cand = rng.uniform(lo, hi, size=(batch, 2))
            cand = cand[np.sum(cand**2, axis=1) <= R2]
            if len(cand):
                cand = cand[points_in_convex(poly, cand)]
            take = min(len(cand), need)
            out[filled : filled + take] = cand[:take]
            filled += take
    out += np.asarray(cell.bs)
    return out[0] if size is None else out


# ---------------------------------------------------------------------------
# union / intersection of two circles through the origin


def _half_angles(r1, r2, u):
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    cu = np.cos(u)
    d = np.sqrt(np.maximum(r1 * r1 + r2 * r2 - 2.0 * r1 * r2 * cu, 0.0))
    safe = np.where(d > 0, d, 1.0)
    v = np.arccos(np.clip((r1 - r2 * cu) / safe, -1.0, 1.0))
    w = np.arccos(np.clip((r2 - r1 * cu) / safe, -1.0, 1.0))
    degenerate = d <= 1e-12 * np.maximum(np.maximum(r1, r2), 1e-300)
    return v, w, degenerate


def lens_area(r1, r2, u):
    """Intersection area of the discs centred at distance r1 and r2 from the
    origin (angular separation ``u``), each passing through the origin."""
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    v, w, degenerate = _half_angles(r1, r2, u)
    L = r1 * r1 * (v - 0.5 * np.sin(2.0 * v)) + r2 * r2 * (w - 0.5 * np.sin(2.0 * w))
    return np.where(degenerate, np.pi * np.minimum(r1, r2) ** 2, L)


def union_two_circles_area(r1, r2, u):
    """Area of the union of the two discs described in :func:`lens_area`."""
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    v, w, degenerate = _half_angles(r1, r2, u)
    V = r1 * r1 * (np.pi - v + 0.5 * np.sin(2.0 * v)) + r2 * r2 * (np.pi - w + 0.5 * np.sin(2.0 * w))
    out = np.where(degenerate, np.pi * np.maximum(r1, r2) ** 2, V)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------


CELL_CSV_COLUMNS = ("bs_x", "bs_y", "cell_area", "cc_area", "ce_area", "r_m", "r_M")


def write_cells_csv(path, cells: Sequence[CellGeometry], header_lines: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CELL_CSV_COLUMNS)
        for c in cells:
            writer.writerow(
                [f"{v:.9g}" for v in (c.bs[0], c.bs[1], c.cell_area, c.cc_area, c.ce_area, c.r_m, c.r_M)]
            )
