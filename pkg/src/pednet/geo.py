"""Geometric kernel.

All planar work happens in meters on a local transverse Mercator projection
anchored near the area of interest. Lines are ``(n, 2)`` float arrays,
polygons are :class:`PolygonM` rings. Nothing here mutates its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import shapely
from shapely.geometry import LineString, Point

from .errors import DegenerateGeometry, InvalidBuffer, OutOfProjectionRange

# WGS84
_A = 6378137.0
_F = 1 / 298.257223563
_E2 = _F * (2 - _F)
_E = math.sqrt(_E2)
_N = _F / (2 - _F)

MAX_PROJECTION_RANGE_M = 100_000.0
MITER_LIMIT = 4.0


def _kruger_coefficients(n: float) -> tuple[list[float], list[float]]:
    n2, n3, n4, n5, n6 = n**2, n**3, n**4, n**5, n**6
    alpha = [
        n / 2 - 2 * n2 / 3 + 5 * n3 / 16 + 41 * n4 / 180 - 127 * n5 / 288 + 7891 * n6 / 37800,
        13 * n2 / 48 - 3 * n3 / 5 + 557 * n4 / 1440 + 281 * n5 / 630 - 1983433 * n6 / 1935360,
        61 * n3 / 240 - 103 * n4 / 140 + 15061 * n5 / 26880 + 167603 * n6 / 181440,
        49561 * n4 / 161280 - 179 * n5 / 168 + 6601661 * n6 / 7257600,
        34729 * n5 / 80640 - 3418889 * n6 / 1995840,
        212378941 * n6 / 319334400,
    ]
    beta = [
        n / 2 - 2 * n2 / 3 + 37 * n3 / 96 - n4 / 360 - 81 * n5 / 512 + 96199 * n6 / 604800,
        n2 / 48 + n3 / 15 - 437 * n4 / 1440 + 46 * n5 / 105 - 1118711 * n6 / 3870720,
        17 * n3 / 480 - 37 * n4 / 840 - 209 * n5 / 4480 + 5569 * n6 / 90720,
        4397 * n4 / 161280 - 11 * n5 / 504 - 830251 * n6 / 7257600,
        4583 * n5 / 161280 - 108847 * n6 / 3991680,
        20648693 * n6 / 638668800,
    ]
    return alpha, beta


_ALPHA, _BETA = _kruger_coefficients(_N)
_RECT = _A / (1 + _N) * (1 + _N**2 / 4 + _N**4 / 64 + _N**6 / 256)


def _taupf(tau):
    tau1 = np.hypot(1.0, tau)
    sig = np.sinh(_E * np.arctanh(_E * tau / tau1))
    return np.hypot(1.0, sig) * tau - sig * tau1


def _tauf(taup):
    e2m = 1 - _E2
    tau = taup / e2m
    for _ in range(8):
        taupa = _taupf(tau)
        dtau = (taup - taupa) * (1 + e2m * tau**2) / (e2m * np.hypot(1.0, tau) * np.hypot(1.0, taupa))
        tau = tau + dtau
        if np.all(np.abs(dtau) < 1e-15 * np.maximum(1.0, np.abs(tau))):
            break
    return tau


def _tm_forward(lon, lat, lon0):
    lam = np.radians(np.asarray(lon, dtype=float) - lon0)
    taup = _taupf(np.tan(np.radians(np.asarray(lat, dtype=float))))
    xip = np.arctan2(taup, np.cos(lam))
    etap = np.arcsinh(np.sin(lam) / np.hypot(taup, np.cos(lam)))
    xi, eta = xip.copy(), etap.copy()
    for j, a in enumerate(_ALPHA, start=1):
        xi = xi + a * np.sin(2 * j * xip) * np.cosh(2 * j * etap)
        eta = eta + a * np.cos(2 * j * xip) * np.sinh(2 * j * etap)
    return _RECT * eta, _RECT * xi


def _tm_inverse(x, y, lon0):
    xi = np.asarray(y, dtype=float) / _RECT
    eta = np.asarray(x, dtype=float) / _RECT
    xip, etap = xi.copy(), eta.copy()
    for j, b in enumerate(_BETA, start=1):
        xip = xip - b * np.sin(2 * j * xi) * np.cosh(2 * j * eta)
        etap = etap - b * np.cos(2 * j * xi) * np.sinh(2 * j * eta)
    taup = np.sin(xip) / np.hypot(np.sinh(etap), np.cos(xip))
    lat = np.degrees(np.arctan(_tauf(taup)))
    lon = lon0 + np.degrees(np.arctan2(np.sinh(etap), np.cos(xip)))
    return lon, lat


@dataclass(frozen=True)
class LocalProjection:
    """Transverse Mercator (scale 1) centred on ``origin_lonlat``."""

    origin_lonlat: tuple[float, float]
    kind: str = "tmerc"

    @property
    def _y0(self) -> float:
        return float(_tm_forward(self.origin_lonlat[0], self.origin_lonlat[1], self.origin_lonlat[0])[1])

    def forward(self, lon, lat):
        lon = np.asarray(lon, dtype=float)
        lat = np.asarray(lat, dtype=float)
        self._check_range(lon, lat)
        x, y = _tm_forward(lon, lat, self.origin_lonlat[0])
        return x, y - self._y0

    def inverse(self, x, y):
        return _tm_inverse(np.asarray(x, dtype=float), np.asarray(y, dtype=float) + self._y0, self.origin_lonlat[0])

    def _check_range(self, lon, lat) -> None:
        if np.any(np.abs(lat) >= 85.0):
            raise OutOfProjectionRange("latitude beyond +/-85 degrees")
        lon0, lat0 = map(math.radians, self.origin_lonlat)
        la, lo = np.radians(lat), np.radians(lon)
        h = np.sin((la - lat0) / 2) ** 2 + np.cos(lat0) * np.cos(la) * np.sin((lo - lon0) / 2) ** 2
        dist = 2 * _A * np.arcsin(np.sqrt(np.clip(h, 0, 1)))
        if np.any(dist > MAX_PROJECTION_RANGE_M):
            raise OutOfProjectionRange(f"point {float(np.max(dist)) / 1000:.1f} km from projection origin")

    def forward_coords(self, lonlat) -> np.ndarray:
        arr = np.asarray(lonlat, dtype=float).reshape(-1, 2)
        x, y = self.forward(arr[:, 0], arr[:, 1])
        return np.column_stack([x, y])

    def inverse_coords(self, xy) -> np.ndarray:
        arr = np.asarray(xy, dtype=float).reshape(-1, 2)
        lon, lat = self.inverse(arr[:, 0], arr[:, 1])
        return np.column_stack([lon, lat])


def project_forward(proj: LocalProjection, p: Sequence[float]) -> np.ndarray:
    """Project one ``(lon, lat)`` point to local meters."""
    return proj.forward_coords([p])[0]


def project_inverse(proj: LocalProjection, p: Sequence[float]) -> np.ndarray:
    return proj.inverse_coords([p])[0]


# --------------------------------------------------------------------------
# polylines


def as_line(coords) -> np.ndarray:
    arr = np.asarray(coords, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 2:
        raise DegenerateGeometry("a line needs at least two 2-D vertices")
    return arr


def dedupe_vertices(line: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    keep = np.ones(len(line), dtype=bool)
    keep[1:] = np.hypot(*np.diff(line, axis=0).T) > eps
    return line[keep]


def cumulative_length(line: np.ndarray) -> np.ndarray:
    seg = np.hypot(*np.diff(line, axis=0).T)
    return np.concatenate([[0.0], np.cumsum(seg)])


def line_length(line: np.ndarray) -> float:
    return float(cumulative_length(line)[-1])


def interpolate(line: np.ndarray, s: float) -> np.ndarray:
    """Point at arc length ``s`` (clamped to the line)."""
    cum = cumulative_length(line)
    s = min(max(s, 0.0), cum[-1])
    i = int(np.searchsorted(cum, s, side="right")) - 1
    i = min(max(i, 0), len(line) - 2)
    seg = cum[i + 1] - cum[i]
    if seg == 0:
        return line[i].copy()
    t = (s - cum[i]) / seg
    return line[i] + t * (line[i + 1] - line[i])


def tangent_at(line: np.ndarray, s: float) -> np.ndarray:
    cum = cumulative_length(line)
    i = int(np.searchsorted(cum, min(max(s, 0.0), cum[-1]), side="right")) - 1
    i = min(max(i, 0), len(line) - 2)
    d = line[i + 1] - line[i]
    return d / np.hypot(*d)


def substring(line: np.ndarray, s0: float, s1: float) -> np.ndarray:
    """Portion of ``line`` between arc lengths ``s0 < s1``."""
    cum = cumulative_length(line)
    s0 = max(0.0, s0)
    s1 = min(cum[-1], s1)
    inner = line[(cum > s0) & (cum < s1)]
    return np.vstack([interpolate(line, s0), inner, interpolate(line, s1)])


def nearest_on_segments(line: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Closest point of ``line`` to ``p``; returns ``(point, arc_length, distance)``."""
    a = line[:-1]
    d = np.diff(line, axis=0)
    dd = np.einsum("ij,ij->i", d, d)
    t = np.where(dd > 0, np.einsum("ij,ij->i", p - a, d) / np.where(dd > 0, dd, 1), 0.0)
    t = np.clip(t, 0.0, 1.0)
    proj = a + t[:, None] * d
    dist = np.hypot(*(proj - p).T)
    i = int(np.argmin(dist))
    cum = cumulative_length(line)
    return proj[i], float(cum[i] + t[i] * math.sqrt(dd[i])), float(dist[i])


def point_line_distance(line: np.ndarray, p) -> float:
    return nearest_on_segments(line, np.asarray(p, dtype=float))[2]


# --------------------------------------------------------------------------
# offsetting


def _cross(u, v) -> float:
    return float(u[0] * v[1] - u[1] * v[0])


def _left_normal(u):
    return np.array([-u[1], u[0]])


def _arc(center, r, start_vec, end_vec, ccw: bool, n_quarter: int = 8) -> list[np.ndarray]:
    a0 = math.atan2(start_vec[1], start_vec[0])
    a1 = math.atan2(end_vec[1], end_vec[0])
    if ccw:
        while a1 <= a0:
            a1 += 2 * math.pi
    else:
        while a1 >= a0:
            a1 -= 2 * math.pi
    steps = max(2, int(math.ceil(abs(a1 - a0) / (math.pi / 2) * n_quarter)))
    return [center + r * np.array([math.cos(a), math.sin(a)]) for a in np.linspace(a0, a1, steps + 1)]


@dataclass
class _Join:
    points: list[np.ndarray]
    cut: int  # index into ``points`` where the path may be split


def _join(p, ua, ub, da, db, miter_limit: float, round_uturn: bool) -> _Join:
    na, nb = _left_normal(ua), _left_normal(ub)
    pa, pb = p + da * na, p + db * nb
    cross = _cross(ua, ub)
    dot = float(ua @ ub)
    scale = max(abs(da), abs(db))
    if abs(cross) < 1e-12:
        if dot > 0:
            if abs(da - db) < 1e-12:
                return _Join([pa], 0)
            return _Join([pa, (pa + pb) / 2, pb], 1)
        # reversal
        if scale == 0:
            return _Join([p.copy()], 0)
        if round_uturn:
            side = 1.0 if da >= 0 else -1.0
            pts = _arc(p, scale, side * na, side * nb, ccw=side < 0)
            return _Join(pts, len(pts) // 2)
        return _Join([pa, pb], 0)
    # intersection of the two offset lines
    s = _cross(pb - pa, ub) / cross
    m = pa + s * ua
    inner = cross * (da if da != 0 else db) > 0
    if inner or np.hypot(*(m - p)) <= miter_limit * scale:
        return _Join([m], 0)
    return _Join([pa, (pa + pb) / 2, pb], 1)


@dataclass
class OffsetPath:
    """Offset of a polyline with the per-vertex joins kept separately."""

    joins: list[_Join]
    closed: bool

    def piece(self, i0: int, i1: int, bare_start: bool = False, bare_end: bool = False) -> np.ndarray:
        """Offset geometry from source vertex ``i0`` to ``i1`` (cut point to cut point).

        ``bare_start`` / ``bare_end`` drop the join at that end entirely, so the
        piece stops where its own offset segment does.
        """
        pts: list[np.ndarray] = []
        n = len(self.joins)
        j0 = self.joins[i0 % n]
        pts.extend(j0.points[-1:] if bare_start else j0.points[j0.cut:])
        k = i0 + 1
        while k < i1:
            pts.extend(self.joins[k % n].points)
            k += 1
        j1 = self.joins[i1 % n]
        pts.extend(j1.points[:1] if bare_end else j1.points[: j1.cut + 1])
        return dedupe_vertices(np.array(pts))

    def cut_point(self, i: int) -> np.ndarray:
        j = self.joins[i % len(self.joins)]
        return j.points[j.cut]


def offset_path(
    line: np.ndarray,
    dists: Sequence[float] | float,
    closed: bool = False,
    miter_limit: float = MITER_LIMIT,
    round_uturn: bool = False,
) -> OffsetPath:
    """Offset every segment of ``line`` by its signed distance (positive = left).

    For a closed path ``line`` lists each vertex once and segment ``i`` runs from
    vertex ``i`` to ``i + 1`` modulo ``n``.
    """
    pts = np.asarray(line, dtype=float)
    nseg = len(pts) if closed else len(pts) - 1
    if np.isscalar(dists):
        dists = [float(dists)] * nseg
    dists = list(dists)
    if len(dists) != nseg:
        raise ValueError("need one distance per segment")
    dirs = []
    for i in range(nseg):
        d = pts[(i + 1) % len(pts)] - pts[i]
        length = math.hypot(*d)
        if length == 0:
            raise DegenerateGeometry(f"repeated vertex at index {i}")
        dirs.append(d / length)
    joins: list[_Join] = []
    if closed:
        for i in range(len(pts)):
            joins.append(_join(pts[i], dirs[i - 1], dirs[i], dists[i - 1], dists[i], miter_limit, round_uturn))
    else:
        joins.append(_Join([pts[0] + dists[0] * _left_normal(dirs[0])], 0))
        for i in range(1, len(pts) - 1):
            joins.append(_join(pts[i], dirs[i - 1], dirs[i], dists[i - 1], dists[i], miter_limit, round_uturn))
        joins.append(_Join([pts[-1] + dists[-1] * _left_normal(dirs[-1])], 0))
    return OffsetPath(joins=joins, closed=closed)


def offset_is_collapsed(src: np.ndarray, path: OffsetPath) -> bool:
    """True when an offset segment runs against its source segment (miter overshoot)."""
    n = len(src)
    nseg = n if path.closed else n - 1
    for i in range(nseg):
        a = path.joins[i].points[-1]
        b = path.joins[(i + 1) % n].points[0]
        if float((b - a) @ (src[(i + 1) % n] - src[i])) < -1e-9:
            return True
    return False


def offset_linestring(line, dist: float, side: str = "left", miter_limit: float = MITER_LIMIT) -> np.ndarray:
    """Parallel copy of ``line`` at ``dist`` meters on ``side`` of the travel direction.

    Bends are miter-joined; miters longer than ``miter_limit * dist`` are bevelled.
    Raises DegenerateGeometry if the offset folds back over itself.
    """
    if dist < 0:
        raise DegenerateGeometry("offset distance must be non-negative")
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    src = dedupe_vertices(as_line(line))
    if len(src) < 2:
        raise DegenerateGeometry("line collapses to a point")
    if dist == 0:
        return src.copy()
    signed = dist if side == "left" else -dist
    path = offset_path(src, signed, closed=False, miter_limit=miter_limit)
    if offset_is_collapsed(src, path):
        raise DegenerateGeometry("offset folds back on itself; segment shorter than the miter overshoot")
    return path.piece(0, len(src) - 1)


# --------------------------------------------------------------------------
# polygons


def signed_area(ring) -> float:
    r = np.asarray(ring, dtype=float)
    x, y = r[:, 0], r[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass
class PolygonM:
    """Polygon with a closed CCW exterior and CW holes (first vertex repeated last)."""

    exterior: np.ndarray
    holes: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.exterior = _close_ring(self.exterior, ccw=True)
        self.holes = [_close_ring(h, ccw=False) for h in self.holes]

    @property
    def area(self) -> float:
        return signed_area(self.exterior[:-1]) + sum(signed_area(h[:-1]) for h in self.holes)

    @property
    def rings(self) -> list[np.ndarray]:
        return [self.exterior, *self.holes]

    def contains(self, pts) -> np.ndarray:
        return point_in_polygon(pts, self.rings)

    @classmethod
    def from_shapely(cls, poly) -> "PolygonM":
        return cls(np.asarray(poly.exterior.coords), [np.asarray(r.coords) for r in poly.interiors])

    def to_shapely(self):
        return shapely.Polygon(self.exterior, self.holes)


def _close_ring(ring, ccw: bool) -> np.ndarray:
    r = np.asarray(ring, dtype=float)
    if len(r) and np.allclose(r[0], r[-1]):
        r = r[:-1]
    if len(r) < 3:
        raise DegenerateGeometry("a ring needs at least three distinct vertices")
    a = signed_area(r)
    if a == 0:
        raise DegenerateGeometry("ring has zero area")
    if (a > 0) != ccw:
        r = r[::-1]
    return np.vstack([r, r[:1]])


def polygon_area(poly: PolygonM) -> float:
    return poly.area


def point_in_polygon(pts, rings: Iterable[np.ndarray]) -> np.ndarray:
    """Even-odd inclusion test of ``pts`` (``(k, 2)``) against all ``rings``."""
    p = np.atleast_2d(np.asarray(pts, dtype=float))
    px, py = p[:, 0][:, None], p[:, 1][:, None]
    inside = np.zeros(len(p), dtype=bool)
    for ring in rings:
        r = np.asarray(ring, dtype=float)
        if not np.allclose(r[0], r[-1]):
            r = np.vstack([r, r[:1]])
        x0, y0 = r[:-1, 0][None, :], r[:-1, 1][None, :]
        x1, y1 = r[1:, 0][None, :], r[1:, 1][None, :]
        spans = (y0 <= py) != (y1 <= py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
        hits = spans & (px < xint)
        inside ^= (np.count_nonzero(hits, axis=1) % 2).astype(bool)
    return inside


# --------------------------------------------------------------------------
# buffering

BUFFER_QUAD_SEGS = 16


def buffer_geometry(g, radius: float, quad_segs: int = BUFFER_QUAD_SEGS) -> PolygonM:
    """Round-capped buffer of a point ``(2,)`` or line ``(n, 2)`` as a polygon."""
    if not radius > 0:
        raise InvalidBuffer(f"buffer radius must be positive, got {radius}")
    arr = np.asarray(g, dtype=float)
    if arr.ndim == 1:
        geom = Point(arr)
    elif len(arr) == 1:
        geom = Point(arr[0])
    else:
        geom = LineString(dedupe_vertices(arr))
    out = geom.buffer(radius, quad_segs=quad_segs, cap_style="round", join_style="round")
    if out.geom_type == "MultiPolygon":
        out = max(out.geoms, key=lambda p: p.area)
    return PolygonM.from_shapely(out)


# --------------------------------------------------------------------------
# affine transforms


@dataclass(frozen=True)
class AffineParams:
    """``x' = A x + t`` with ``A = [[a, b], [c, d]]`` and ``t = (t1, t2)``."""

    a: float = 1.0
    b: float = 0.0
    c: float = 0.0
    d: float = 1.0
    t1: float = 0.0
    t2: float = 0.0

    @classmethod
    def identity(cls) -> "AffineParams":
        return cls()

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]])

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.t1, self.t2])

    @property
    def det(self) -> float:
        return self.a * self.d - self.b * self.c

    def as_vector(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c, self.d, self.t1, self.t2])

    @classmethod
    def from_vector(cls, v) -> "AffineParams":
        return cls(*(float(x) for x in v))

    def compose(self, first: "AffineParams") -> "AffineParams":
        """Transform equal to applying ``first`` and then ``self``."""
        m = self.matrix @ first.matrix
        t = self.matrix @ first.translation + self.translation
        return AffineParams(m[0, 0], m[0, 1], m[1, 0], m[1, 1], t[0], t[1])


def apply_affine(params: AffineParams, pts) -> np.ndarray:
    p = np.atleast_2d(np.asarray(pts, dtype=float))
    return p @ params.matrix.T + params.translation
