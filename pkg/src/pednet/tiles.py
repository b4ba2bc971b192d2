"""Web-Mercator tile addressing and a small caching tile downloader."""

from __future__ import annotations

import hashlib
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from urllib.parse import urlsplit

import requests

from .errors import HttpError, LatitudeOutOfRange, OfflineCacheMiss

MAX_LAT = 85.05112878
DEFAULT_ZOOM = 20
CACHE_ENV = "PEDNET_TILE_CACHE"


@dataclass(frozen=True)
class TileCoord:
    z: int
    x: int
    y: int

    def __post_init__(self):
        n = 1 << self.z
        if self.z < 0 or not (0 <= self.x < n and 0 <= self.y < n):
            raise ValueError(f"tile index out of range: {self}")

    @property
    def quadkey(self) -> str:
        return tile_to_quadkey(self)


def lonlat_to_tile(lonlat, z: int) -> TileCoord:
    lon, lat = float(lonlat[0]), float(lonlat[1])
    if abs(lat) > MAX_LAT:
        raise LatitudeOutOfRange(f"latitude {lat} outside the Web-Mercator range")
    n = 1 << z
    x = int(math.floor((lon + 180.0) / 360.0 * n))
    phi = math.radians(lat)
    y = int(math.floor((1.0 - math.asinh(math.tan(phi)) / math.pi) / 2.0 * n))
    return TileCoord(z, min(max(x, 0), n - 1), min(max(y, 0), n - 1))


def tile_to_quadkey(t: TileCoord) -> str:
    digits = []
    for level in range(t.z, 0, -1):
        mask = 1 << (level - 1)
        digits.append(str((1 if t.x & mask else 0) + (2 if t.y & mask else 0)))
    return "".join(digits)


def quadkey_to_tile(q: str) -> TileCoord:
    x = y = 0
    for ch in q:
        if ch not in "0123":
            raise ValueError(f"bad quadkey digit {ch!r}")
        d = int(ch)
        x = (x << 1) | (d & 1)
        y = (y << 1) | (d >> 1)
    return TileCoord(len(q), x, y)


def tile_bounds(t: TileCoord) -> tuple[float, float, float, float]:
    """WGS84 ``(west, south, east, north)`` of a tile."""
    n = 1 << t.z

    def lat(y):
        return math.degrees(math.atan(math.sinh(math.pi * (1 - 2 * y / n))))

    return (t.x / n * 360.0 - 180.0, lat(t.y + 1), (t.x + 1) / n * 360.0 - 180.0, lat(t.y))


def tiles_for_bbox(bbox, z: int) -> list[TileCoord]:
    w, s, e, n = bbox
    a = lonlat_to_tile((w, n), z)
    b = lonlat_to_tile((e, s), z)
    return [TileCoord(z, x, y) for y in range(a.y, b.y + 1) for x in range(a.x, b.x + 1)]


def tile_url(template: str, t: TileCoord) -> str:
    if "{q}" not in template and not all(k in template for k in ("{z}", "{x}", "{y}")):
        raise ValueError("tile template needs {z}/{x}/{y} or {q}")
    return template.replace("{q}", t.quadkey).replace("{z}", str(t.z)).replace("{x}", str(t.x)).replace("{y}", str(t.y))


def default_cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV) or Path.home() / ".cache" / "pednet" / "tiles")


def cache_path(cache_dir, template: str, t: TileCoord) -> Path:
    host = urlsplit(template).netloc or "local"
    ext = Path(urlsplit(template).path).suffix or ".img"
    # the template hash keeps different layers on one host apart
    tag = hashlib.sha1(template.encode()).hexdigest()[:8]
    return Path(cache_dir) / host / tag / str(t.z) / str(t.x) / f"{t.y}{ext}"


def _write_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".partial")
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def fetch_tiles(
    coords: Sequence[TileCoord],
    url_template: str,
    cache_dir=None,
    offline: bool = False,
    max_workers: int = 4,
    session: requests.Session | None = None,
    revalidate: bool = False,
    timeout: float = 30.0,
) -> list[Path]:
    """Download tiles into the cache and return their paths (in input order).

    Cached tiles are served without a request unless ``revalidate`` is set, in
    which case a stored ETag is sent and a 304 keeps the cached copy.
    """
    cache_dir = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    if max_workers < 1:
        raise ValueError("max_workers must be >= 1")
    sess = session or requests.Session()
    paths = [cache_path(cache_dir, url_template, t) for t in coords]

    def one(i: int) -> Path:
        t, path = coords[i], paths[i]
        etag_file = path.with_name(path.name + ".etag")
        if path.exists() and not revalidate:
            return path
        if offline:
            if path.exists():
                return path
            raise OfflineCacheMiss(f"tile {t} not cached at {path}")
        headers = {}
        if path.exists() and etag_file.exists():
            headers["If-None-Match"] = etag_file.read_text().strip()
        resp = sess.get(tile_url(url_template, t), headers=headers, timeout=timeout)
        if resp.status_code == 304 and path.exists():
            return path
        if resp.status_code != 200:
            raise HttpError(resp.status_code, t)
        _write_atomic(path, resp.content)
        if resp.headers.get("ETag"):
            _write_atomic(etag_file, resp.headers["ETag"].encode())
        return path

    # duplicates in ``coords`` share one download
    first = {}
    for i, p in enumerate(paths):
        first.setdefault(p, i)
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        done = dict(zip(first.values(), pool.map(one, list(first.values()))))
    return [done[first[p]] for p in paths]
