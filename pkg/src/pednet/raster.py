"""Class rasters: rasterising annotations, probability masks and their file format.

A raster's pixel grid is georeferenced from its WGS84 bbox: the grid is laid
out on a transverse Mercator projection centred on the bbox, with row 0 at the
north edge. Pixel ``(col, row)`` has its centre at ``(col + 0.5, row + 0.5)``.
"""

from __future__ import annotations

import enum
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage
from shapely.geometry import MultiPoint

from .errors import EmptyBBox, MissingClassRaster, UnknownClass
from .geo import LocalProjection, PolygonM, buffer_geometry

CRS = "EPSG:4326"


class LabelClass(enum.IntEnum):
    BACKGROUND = 0
    SIDEWALK = 1
    CROSSING = 2
    CORNER_BULB = 3


CLASS_NAMES = {c: c.name.lower() for c in LabelClass}
PROB_CLASSES = ("sidewalk", "crossing", "corner_bulb")
PALETTE = [0, 0, 0, 80, 160, 255, 255, 80, 80, 255, 200, 0]


def class_from_name(name: str) -> LabelClass:
    try:
        return LabelClass[str(name).upper()]
    except KeyError:
        raise UnknownClass(f"unknown class {name!r}") from None


# --------------------------------------------------------------------------
# pixel frame


@dataclass(frozen=True)
class GridFrame:
    """Pixel grid over a WGS84 bbox ``(west, south, east, north)``."""

    bbox: tuple[float, float, float, float]
    width: int
    height: int

    def __post_init__(self):
        w, s, e, n = self.bbox
        if not (e > w and n > s) or self.width <= 0 or self.height <= 0:
            raise EmptyBBox(f"empty raster extent {self.bbox} ({self.width}x{self.height})")

    @property
    def projection(self) -> LocalProjection:
        w, s, e, n = self.bbox
        return LocalProjection(((w + e) / 2, (s + n) / 2))

    @property
    def extent_m(self) -> tuple[float, float, float, float]:
        w, s, e, n = self.bbox
        lon_c, lat_c = (w + e) / 2, (s + n) / 2
        p = self.projection
        x = p.forward_coords([(w, lat_c), (e, lat_c)])[:, 0]
        y = p.forward_coords([(lon_c, s), (lon_c, n)])[:, 1]
        return float(x[0]), float(y[0]), float(x[1]), float(y[1])

    @property
    def pixel_size(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.extent_m
        return (x1 - x0) / self.width, (y1 - y0) / self.height

    def to_px(self, xy, projection: LocalProjection | None = None) -> np.ndarray:
        """Continuous ``(col, row)`` for meter coordinates in ``projection``."""
        pts = np.asarray(xy, dtype=float).reshape(-1, 2)
        own = self.projection
        if projection is not None and projection != own:
            pts = own.forward_coords(projection.inverse_coords(pts))
        x0, y0, x1, y1 = self.extent_m
        col = (pts[:, 0] - x0) / (x1 - x0) * self.width
        row = (y1 - pts[:, 1]) / (y1 - y0) * self.height
        return np.column_stack([col, row])

    def to_m(self, px, projection: LocalProjection | None = None) -> np.ndarray:
        p = np.asarray(px, dtype=float).reshape(-1, 2)
        x0, y0, x1, y1 = self.extent_m
        x = x0 + p[:, 0] / self.width * (x1 - x0)
        y = y1 - p[:, 1] / self.height * (y1 - y0)
        out = np.column_stack([x, y])
        own = self.projection
        if projection is not None and projection != own:
            out = projection.forward_coords(own.inverse_coords(out))
        return out

    def meters_per_px(self) -> float:
        sx, sy = self.pixel_size
        return math.sqrt(sx * sy)


def frame_for_bbox(bbox, resolution: float) -> GridFrame:
    """Grid over ``bbox`` whose pixels are ``resolution`` meters on a side (rounded to fit)."""
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    w, s, e, n = bbox
    if not (e > w and n > s):
        raise EmptyBBox(f"empty bbox {bbox}")
    probe = GridFrame(tuple(bbox), 1, 1)
    x0, y0, x1, y1 = probe.extent_m
    return GridFrame(tuple(bbox), max(1, round((x1 - x0) / resolution)), max(1, round((y1 - y0) / resolution)))


def bbox_around(projection: LocalProjection, xy_min, xy_max) -> tuple[float, float, float, float]:
    """WGS84 bbox enclosing the meter rectangle ``xy_min``..``xy_max``."""
    x0, y0 = xy_min
    x1, y1 = xy_max
    corners = projection.inverse_coords([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
    return (
        float(corners[:, 0].min()),
        float(corners[:, 1].min()),
        float(corners[:, 0].max()),
        float(corners[:, 1].max()),
    )


# --------------------------------------------------------------------------
# scanline fill


def polygon_spans(rings: Sequence[np.ndarray], height: int, width: int):
    """Even-odd scanline spans of pixel-space ``rings``, tested at pixel centres.

    Returns ``(rows, col_start, col_stop)``: pixel ``(c, r)`` is inside iff
    ``col_start <= c < col_stop`` for one of the spans on row ``r``. Spans are
    clipped to the grid and may be empty.
    """
    x0s, y0s, x1s, y1s = [], [], [], []
    for ring in rings:
        r = np.asarray(ring, dtype=float)
        if len(r) < 3:
            continue
        x0s.append(r[:, 0])
        y0s.append(r[:, 1])
        x1s.append(np.concatenate((r[1:, 0], r[:1, 0])))
        y1s.append(np.concatenate((r[1:, 1], r[:1, 1])))
    none = np.zeros(0, dtype=np.intp)
    if not x0s:
        return none, none, none
    x0, y0 = np.concatenate(x0s), np.concatenate(y0s)
    x1, y1 = np.concatenate(x1s), np.concatenate(y1s)
    if not (np.isfinite(x0).all() and np.isfinite(y0).all()):
        return none, none, none
    r0 = max(0, int(math.floor(y0.min() - 0.5)))
    r1 = min(height, int(math.ceil(y0.max() - 0.5)) + 1)
    if r1 <= r0:
        return none, none, none
    yc = np.arange(r0, r1) + 0.5
    spans = (y0[:, None] <= yc) != (y1[:, None] <= yc)
    ei, ri = np.nonzero(spans)
    if len(ei) == 0:
        return none, none, none
    xs = x0[ei] + (yc[ri] - y0[ei]) * (x1[ei] - x0[ei]) / (y1[ei] - y0[ei])
    order = np.lexsort((xs, ri))
    ri, xs = ri[order], xs[order]
    ca = np.clip(np.ceil(xs[0::2] - 0.5), 0, width).astype(np.intp)
    cb = np.clip(np.ceil(xs[1::2] - 0.5), 0, width).astype(np.intp)
    return ri[0::2] + r0, ca, cb


def polygon_mask(rings: Sequence[np.ndarray], height: int, width: int):
    """Even-odd fill of pixel-space ``rings`` as ``(mask, row0, col0)``.

    ``mask`` covers the bounding box of the inside pixels; it is empty when
    nothing falls inside the grid.
    """
    rows, ca, cb = polygon_spans(rings, height, width)
    keep = cb > ca
    rows, ca, cb = rows[keep], ca[keep], cb[keep]
    if len(rows) == 0:
        return np.zeros((0, 0), dtype=bool), 0, 0
    r0, c0 = int(rows.min()), int(ca.min())
    nr, nc = int(rows.max()) - r0 + 1, int(cb.max()) - c0 + 1
    size = nr * nc
    idx = (rows - r0) * nc
    diff = np.bincount(idx + ca - c0, minlength=size) - np.bincount(idx + cb - c0, minlength=size)
    mask = np.cumsum(diff.reshape(nr, nc)[:, :-1], axis=1) > 0
    return mask, r0, c0


def row_prefix_sums(values: np.ndarray) -> np.ndarray:
    """``P[r, c]`` is the sum of ``values[r, :c]``; spans then sum in O(1)."""
    out = np.zeros((values.shape[0], values.shape[1] + 1))
    np.cumsum(values, axis=1, out=out[:, 1:])
    return out


def fill_polygon(grid: np.ndarray, rings_px: Sequence[np.ndarray], value) -> int:
    """Paint ``value`` into ``grid`` inside ``rings_px``; returns the pixel count."""
    mask, r0, c0 = polygon_mask(rings_px, *grid.shape)
    if mask.size == 0:
        return 0
    sub = grid[r0 : r0 + mask.shape[0], c0 : c0 + mask.shape[1]]
    sub[mask] = value
    return int(mask.sum())


# --------------------------------------------------------------------------
# rasters


@dataclass
class ClassRaster:
    values: np.ndarray  # (height, width) float in [0, 1]
    frame: GridFrame
    class_name: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.frame.height, self.frame.width):
            raise ValueError("raster values do not match the frame size")
        if self.values.size and (self.values.min() < 0 or self.values.max() > 1):
            raise ValueError("class probabilities must lie in [0, 1]")

    @property
    def width(self) -> int:
        return self.frame.width

    @property
    def height(self) -> int:
        return self.frame.height

    @property
    def bbox(self):
        return self.frame.bbox


@dataclass
class LabelRaster:
    values: np.ndarray  # (height, width) uint8 LabelClass values
    frame: GridFrame

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.uint8)
        if self.values.size and self.values.max() > max(LabelClass):
            raise UnknownClass("label value outside the class enum")

    def count(self, cls: LabelClass) -> int:
        return int(np.count_nonzero(self.values == cls))


@dataclass
class RasterStyle:
    point_radius: float = 2.0
    line_halfwidth: dict = field(default_factory=lambda: {"sidewalk": 1.5, "crossing": 1.5, "corner_bulb": 2.0})
    # later classes overwrite earlier ones
    class_precedence: tuple = ("background", "sidewalk", "corner_bulb", "crossing")

    def __post_init__(self):
        if not self.point_radius > 0 or any(not v > 0 for v in self.line_halfwidth.values()):
            raise ValueError("buffer radii must be positive")
        for c in self.class_precedence:
            class_from_name(c)


@dataclass
class Annotation:
    """One GIS feature in local meters: ``kind`` is point, line or polygon."""

    kind: str
    geometry: object  # (2,) point, (n, 2) line, or list of rings
    cls: str


def annotation_polygon(a: Annotation, style: RasterStyle) -> list[np.ndarray]:
    """Rings (meters) covered by an annotation after buffering."""
    if a.kind == "point":
        return buffer_geometry(np.asarray(a.geometry, dtype=float), style.point_radius).rings
    if a.kind == "line":
        hw = style.line_halfwidth.get(a.cls, style.point_radius)
        return buffer_geometry(np.asarray(a.geometry, dtype=float), hw).rings
    if a.kind == "polygon":
        return [np.asarray(r, dtype=float) for r in a.geometry]
    raise ValueError(f"unknown annotation geometry kind {a.kind!r}")


def rasterize_annotations(
    features: Iterable[Annotation],
    bbox,
    resolution: float,
    style: RasterStyle | None = None,
    projection: LocalProjection | None = None,
    frame: GridFrame | None = None,
) -> LabelRaster:
    """Burn annotations into a label grid, lowest-precedence class first.

    Points become discs, lines become round-capped buffers, polygons are filled
    as given. ``projection`` is the frame of the feature coordinates (defaults
    to the raster's own).
    """
    style = style or RasterStyle()
    frame = frame or frame_for_bbox(bbox, resolution)
    grid = np.zeros((frame.height, frame.width), dtype=np.uint8)
    feats = list(features)
    rank = {class_from_name(c): i for i, c in enumerate(style.class_precedence)}
    for f in feats:
        if class_from_name(f.cls) not in rank:
            raise UnknownClass(f"class {f.cls!r} has no precedence")
    feats.sort(key=lambda f: rank[class_from_name(f.cls)])
    for f in feats:
        rings = [frame.to_px(r, projection) for r in annotation_polygon(f, style)]
        fill_polygon(grid, rings, int(class_from_name(f.cls)))
    return LabelRaster(grid, frame)


def annotations_from_geojson(doc: dict, projection: LocalProjection) -> list[Annotation]:
    """Read annotations; the class comes from ``class`` or OpenSidewalks-style tags."""
    out = []
    for i, feat in enumerate(doc.get("features") or []):
        props = feat.get("properties") or {}
        geom = feat.get("geometry") or {}
        cls = props.get("class")
        if cls is None and props.get("node") is not None and props.get("barrier") != "kerb":
            # plain graph vertices carry no class of their own
            continue
        if cls is None:
            if props.get("footway") in ("sidewalk", "crossing"):
                cls = props["footway"]
            elif props.get("footway") == "link":
                cls = "crossing"
            elif props.get("barrier") == "kerb" or props.get("kerb") is not None:
                cls = "corner_bulb"
            else:
                raise UnknownClass(f"feature {i} has no recognised class")
        class_from_name(cls)
        t = geom.get("type")
        coords = geom.get("coordinates")
        if t == "Point":
            out.append(Annotation("point", projection.forward_coords([coords])[0], cls))
        elif t == "LineString":
            out.append(Annotation("line", projection.forward_coords(coords), cls))
        elif t == "Polygon":
            out.append(Annotation("polygon", [projection.forward_coords(r) for r in coords], cls))
        else:
            raise UnknownClass(f"feature {i}: unsupported geometry {t}")
    return out


def graph_annotations(gt, style: RasterStyle) -> list[Annotation]:
    """Annotations for a PedGraph: edges by kind, corner bulbs from node clusters."""
    out = []
    for eid in sorted(gt.edges):
        e = gt.edges[eid]
        cls = "sidewalk" if e.kind == "sidewalk" else "crossing"
        out.append(Annotation("line", e.geometry, cls))
    for cid, members in sorted(gt.corners().items()):
        pts = np.array([gt.nodes[n].xy for n in members])
        hull = MultiPoint([tuple(p) for p in pts]).convex_hull.buffer(style.point_radius, quad_segs=16)
        if hull.geom_type == "MultiPolygon":
            hull = max(hull.geoms, key=lambda p: p.area)
        out.append(Annotation("polygon", PolygonM.from_shapely(hull).rings, "corner_bulb"))
    return out


def make_probability_rasters(
    gt,
    bbox=None,
    resolution: float = 0.5,
    style: RasterStyle | None = None,
    blur_sigma: float = 0.0,
    frame: GridFrame | None = None,
) -> dict[str, ClassRaster]:
    """Per-class probability rasters rendered from a ground-truth graph.

    Each class is rendered as a hard 0/1 mask independently, then smoothed with
    a Gaussian of ``blur_sigma`` pixels (zero padding at the borders).
    """
    if blur_sigma < 0:
        raise ValueError("blur sigma must be non-negative")
    style = style or RasterStyle()
    frame = frame or frame_for_bbox(bbox, resolution)
    anns = graph_annotations(gt, style)
    out = {}
    for cls in PROB_CLASSES:
        grid = np.zeros((frame.height, frame.width), dtype=np.float64)
        for a in anns:
            if a.cls == cls:
                fill_polygon(grid, [frame.to_px(r, gt.projection) for r in annotation_polygon(a, style)], 1.0)
        if blur_sigma > 0:
            grid = ndimage.gaussian_filter(grid, blur_sigma, mode="constant", cval=0.0)
            np.clip(grid, 0.0, 1.0, out=grid)
        out[cls] = ClassRaster(grid, frame, cls)
    return out


def labels_from_probabilities(rasters: dict[str, ClassRaster], threshold: float = 0.5) -> LabelRaster:
    """Arg-max labelling with background wherever no class reaches ``threshold``."""
    any_r = next(iter(rasters.values()))
    stack = np.zeros((len(PROB_CLASSES) + 1, any_r.height, any_r.width))
    stack[0] = threshold
    for cls in PROB_CLASSES:
        if cls in rasters:
            stack[int(class_from_name(cls))] = rasters[cls].values
    return LabelRaster(np.argmax(stack, axis=0).astype(np.uint8), any_r.frame)


# --------------------------------------------------------------------------
# file formats


def _sidecar(cls: str, frame: GridFrame) -> dict:
    return {
        "class": cls,
        "width": frame.width,
        "height": frame.height,
        "bbox": list(frame.bbox),
        "crs": CRS,
    }


def _atomic_write(path: Path, write) -> None:
    tmp = path.with_name(path.name + ".partial")
    write(tmp)
    os.replace(tmp, path)


def write_class_raster(r: ClassRaster, directory) -> Path:
    """16-bit grayscale PNG (value / 65535 = probability) plus a JSON sidecar."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    png = d / f"{r.class_name}.png"
    q = np.round(np.clip(r.values, 0, 1) * 65535).astype(np.uint16)
    _atomic_write(png, lambda p: Image.fromarray(q).save(p, format="PNG"))
    side = png.with_suffix(".json")
    text = json.dumps(_sidecar(r.class_name, r.frame), indent=2) + "\n"
    _atomic_write(side, lambda p: p.write_text(text))
    return png


def read_class_raster(path) -> ClassRaster:
    png = Path(path)
    side = png.with_suffix(".json")
    if not side.exists():
        raise MissingClassRaster(f"no sidecar {side.name} next to {png.name}")
    meta = json.loads(side.read_text())
    if not png.exists():
        raise MissingClassRaster(f"missing raster {png}")
    arr = np.asarray(Image.open(png)).astype(np.float64) / 65535.0
    frame = GridFrame(tuple(meta["bbox"]), int(meta["width"]), int(meta["height"]))
    return ClassRaster(arr, frame, meta["class"])


def read_class_rasters(directory, classes: Iterable[str] = PROB_CLASSES) -> dict[str, ClassRaster]:
    d = Path(directory)
    out = {}
    for cls in classes:
        png = d / f"{cls}.png"
        if not png.exists():
            raise MissingClassRaster(f"no {cls} raster in {d}")
        out[cls] = read_class_raster(png)
    return out


def write_label_raster(r: LabelRaster, path) -> Path:
    """Indexed PNG with a fixed four-entry palette plus a JSON sidecar."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    img = Image.fromarray(r.values, mode="P")
    img.putpalette(PALETTE)
    _atomic_write(p, lambda t: img.save(t, format="PNG"))
    text = json.dumps(_sidecar("labels", r.frame), indent=2) + "\n"
    _atomic_write(p.with_suffix(".json"), lambda t: t.write_text(text))
    return p


def read_label_raster(path) -> LabelRaster:
    p = Path(path)
    side = p.with_suffix(".json")
    if not side.exists():
        raise MissingClassRaster(f"no sidecar {side.name} next to {p.name}")
    meta = json.loads(side.read_text())
    arr = np.asarray(Image.open(p))
    return LabelRaster(arr, GridFrame(tuple(meta["bbox"]), int(meta["width"]), int(meta["height"])))
