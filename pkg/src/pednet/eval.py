"""Graph, pixel and instance metrics, and annotation linting."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import shapely
from scipy import ndimage
from shapely.geometry import LineString

from .errors import ShapeMismatch
from .graph import EDGE_KINDS, NODE_KINDS, PedGraph
from .net import StreetNetwork
from .raster import LabelClass, LabelRaster

EDGE_CLASSES = ("sidewalk", "crossing")


def edge_class(kind: str | None) -> str | None:
    """Metric class of an edge kind; links are scored with crossings."""
    if kind == "sidewalk":
        return "sidewalk"
    if kind in ("crossing", "link"):
        return "crossing"
    return None


def f1_score(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


# --------------------------------------------------------------------------
# edge matching


@dataclass
class ClassMatch:
    pred_matched_m: float = 0.0
    pred_total_m: float = 0.0
    gt_matched_m: float = 0.0
    gt_total_m: float = 0.0

    def __add__(self, o: "ClassMatch") -> "ClassMatch":
        return ClassMatch(*(a + b for a, b in zip(astuple_(self), astuple_(o))))

    @property
    def flags(self) -> list[str]:
        out = []
        if self.pred_total_m == 0:
            out.append("empty_prediction")
        if self.gt_total_m == 0:
            out.append("empty_ground_truth")
        return out

    @property
    def precision(self) -> float:
        if self.pred_total_m == 0:
            return 1.0 if self.gt_total_m == 0 else 0.0
        return self.pred_matched_m / self.pred_total_m

    @property
    def recall(self) -> float:
        if self.gt_total_m == 0:
            return 1.0 if self.pred_total_m == 0 else 0.0
        return self.gt_matched_m / self.gt_total_m

    @property
    def f1(self) -> float:
        return f1_score(self.precision, self.recall)

    def to_json(self) -> dict:
        out = {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "matched_m": self.pred_matched_m,
            "total_m": self.pred_total_m,
        }
        if self.flags:
            out["flags"] = self.flags
        return out


def astuple_(m: ClassMatch) -> tuple:
    return (m.pred_matched_m, m.pred_total_m, m.gt_matched_m, m.gt_total_m)


@dataclass
class EdgeMatchReport:
    classes: dict[str, ClassMatch] = field(default_factory=dict)
    tol: float = 3.0
    coverage: float = 0.7

    def __getitem__(self, cls: str) -> ClassMatch:
        return self.classes[cls]

    def merge(self, other: "EdgeMatchReport") -> "EdgeMatchReport":
        """Combine reports by summing lengths (never by averaging ratios)."""
        keys = sorted(set(self.classes) | set(other.classes))
        return EdgeMatchReport(
            {k: self.classes.get(k, ClassMatch()) + other.classes.get(k, ClassMatch()) for k in keys},
            self.tol,
            self.coverage,
        )

    def to_json(self) -> dict:
        return {k: self.classes[k].to_json() for k in sorted(self.classes)}


def _samples(geom: np.ndarray, step: float) -> tuple[np.ndarray, np.ndarray]:
    """Midpoints and lengths of equal pieces no longer than ``step``."""
    seg = np.diff(geom, axis=0)
    seglen = np.hypot(seg[:, 0], seg[:, 1])
    pts, wts = [], []
    for a, d, L in zip(geom[:-1], seg, seglen):
        if L == 0:
            continue
        n = max(1, math.ceil(L / step))
        t = (np.arange(n) + 0.5) / n
        pts.append(a + t[:, None] * d)
        wts.append(np.full(n, L / n))
    if not pts:
        return np.zeros((0, 2)), np.zeros(0)
    return np.vstack(pts), np.concatenate(wts)


def _matched_length(edges: list[np.ndarray], targets: list[np.ndarray], tol: float, coverage: float, step: float):
    # matched and total are summed over identical per-edge lengths, so a
    # fully matched class gives exactly matched == total
    tree = shapely.STRtree([LineString(t) for t in targets]) if targets else None
    matched = total = 0.0
    for e in edges:
        pts, w = _samples(e, step)
        L = float(w.sum())
        total += L
        if tree is None or len(pts) == 0:
            continue
        near = tree.query(shapely.points(pts), predicate="dwithin", distance=tol)
        inside = np.zeros(len(pts), dtype=bool)
        inside[np.unique(near[0])] = True
        if float(w[inside].sum()) >= coverage * L - 1e-9:
            matched += L
    return matched, total


def match_edges(
    pred: PedGraph, gt: PedGraph, tol: float = 3.0, coverage: float = 0.7, step: float = 0.5
) -> EdgeMatchReport:
    """Buffered-length edge matching per class.

    A predicted edge counts as matched when at least ``coverage`` of its
    length lies within ``tol`` of same-class ground-truth edges; recall uses
    the same rule with the roles swapped.
    """
    if not tol > 0 or not 0 < coverage <= 1:
        raise ValueError("need tol > 0 and 0 < coverage <= 1")
    gt_geoms = _to_frame(gt, pred.projection)
    report = EdgeMatchReport(tol=tol, coverage=coverage)
    for cls in EDGE_CLASSES:
        p_edges = [e.geometry for _, e in sorted(pred.edges.items()) if edge_class(e.kind) == cls]
        g_edges = [gt_geoms[i] for i, e in sorted(gt.edges.items()) if edge_class(e.kind) == cls]
        pm, pt = _matched_length(p_edges, g_edges, tol, coverage, step)
        gm, gt_total = _matched_length(g_edges, p_edges, tol, coverage, step)
        report.classes[cls] = ClassMatch(pm, pt, gm, gt_total)
    return report


def _to_frame(g: PedGraph, projection) -> dict[int, np.ndarray]:
    if projection is None or g.projection is None or g.projection == projection:
        return {i: e.geometry for i, e in g.edges.items()}
    return {i: projection.forward_coords(g.projection.inverse_coords(e.geometry)) for i, e in g.edges.items()}


# --------------------------------------------------------------------------
# pixel metrics


@dataclass
class PixelReport:
    iou: dict[str, float | None]  # None when the class is absent from both rasters
    miou: float
    accuracy: float
    confusion: np.ndarray  # rows: ground truth, cols: prediction

    def to_json(self) -> dict:
        return {"iou": self.iou, "miou": self.miou, "accuracy": self.accuracy, "confusion": self.confusion.tolist()}


def confusion_matrix(pred: LabelRaster, gt: LabelRaster) -> np.ndarray:
    if pred.values.shape != gt.values.shape:
        raise ShapeMismatch(f"raster shapes differ: {pred.values.shape} vs {gt.values.shape}")
    k = len(LabelClass)
    idx = gt.values.astype(np.int64).ravel() * k + pred.values.astype(np.int64).ravel()
    return np.bincount(idx, minlength=k * k).reshape(k, k)


def pixel_metrics(pred: LabelRaster, gt: LabelRaster) -> PixelReport:
    cm = confusion_matrix(pred, gt)
    iou: dict[str, float | None] = {}
    present = []
    for c in LabelClass:
        tp = int(cm[c, c])
        fp = int(cm[:, c].sum()) - tp
        fn = int(cm[c, :].sum()) - tp
        name = c.name.lower()
        if tp + fp + fn == 0:
            iou[name] = None
        else:
            iou[name] = tp / (tp + fp + fn)
            present.append(iou[name])
    total = int(cm.sum())
    acc = float(np.trace(cm)) / total if total else 1.0
    miou = float(np.mean(present)) if present else 1.0
    return PixelReport(iou, miou, acc, cm)


@dataclass
class InstanceReport:
    precision: float
    recall: float
    n_pred: int
    n_gt: int
    matches: int
    flags: list[str] = field(default_factory=list)

    @property
    def f1(self) -> float:
        return f1_score(self.precision, self.recall)

    def to_json(self) -> dict:
        return asdict(self)


FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


def instance_corner_metrics(pred: LabelRaster, gt: LabelRaster, iou_thresh: float = 0.5) -> InstanceReport:
    """Greedy one-to-one matching of 4-connected corner-bulb components by IoU."""
    if pred.values.shape != gt.values.shape:
        raise ShapeMismatch(f"raster shapes differ: {pred.values.shape} vs {gt.values.shape}")
    if not 0 < iou_thresh <= 1:
        raise ValueError("iou_thresh must lie in (0, 1]")
    lp, n_p = ndimage.label(pred.values == LabelClass.CORNER_BULB, structure=FOUR_CONNECTED)
    lg, n_g = ndimage.label(gt.values == LabelClass.CORNER_BULB, structure=FOUR_CONNECTED)
    flags = []
    if n_p == 0:
        flags.append("empty_prediction")
    if n_g == 0:
        flags.append("empty_ground_truth")
    if n_p == 0 and n_g == 0:
        return InstanceReport(1.0, 1.0, 0, 0, 0, flags)
    area_p = np.bincount(lp.ravel(), minlength=n_p + 1)
    area_g = np.bincount(lg.ravel(), minlength=n_g + 1)
    both = (lp > 0) & (lg > 0)
    inter = np.bincount(lp[both].astype(np.int64) * (n_g + 1) + lg[both], minlength=(n_p + 1) * (n_g + 1))
    inter = inter.reshape(n_p + 1, n_g + 1)
    pairs = []
    for i, j in zip(*np.nonzero(inter)):
        iou = inter[i, j] / (area_p[i] + area_g[j] - inter[i, j])
        pairs.append((-iou, int(i), int(j)))
    pairs.sort()
    used_p, used_g, matches = set(), set(), 0
    for neg, i, j in pairs:
        if -neg < iou_thresh:
            break
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        matches += 1
    prec = matches / n_p if n_p else 0.0
    rec = matches / n_g if n_g else 0.0
    return InstanceReport(prec, rec, int(n_p), int(n_g), matches, flags)


# --------------------------------------------------------------------------
# lint


LINT_KINDS = ("DisconnectedCrossing", "MisplacedCurb", "MissingTag", "WrongClassification")


@dataclass(frozen=True)
class LintViolation:
    kind: str
    element: str  # "node" or "edge"
    feature_id: int
    detail: str

    def to_json(self) -> dict:
        return {"kind": self.kind, "element": self.element, "id": self.feature_id, "detail": self.detail}


def _attached_to_sidewalk(g: PedGraph, curb: int) -> bool:
    for eid in g.incident(curb):
        e = g.edges[eid]
        if e.kind != "link":
            continue
        far = g.other(eid, curb)
        if any(g.edges[k].kind == "sidewalk" for k in g.incident(far)):
            return True
    return False


def _crossing_entries(g: PedGraph, eid: int) -> list[np.ndarray]:
    """Points where a crossing chain leaves the sidewalk network (link far ends)."""
    e = g.edges[eid]
    out = []
    for c in (e.u, e.v):
        for k in g.incident(c):
            if g.edges[k].kind == "link":
                out.append(g.nodes[g.other(k, c)].xy)
    return out


def lint_graph(g: PedGraph, streets: StreetNetwork | None = None, d_road: float = 1.0) -> list[LintViolation]:
    """Annotation errors: crossings not tied into sidewalks, curbs in the roadway, missing or wrong tags.

    A curb is misplaced when it is closer than ``d_road`` to a street
    centerline, unless it also lies within ``d_road`` of the point where its
    crossing enters from the sidewalk (very narrow streets).
    """
    out: list[LintViolation] = []
    for nid in sorted(g.nodes):
        k = g.nodes[nid].kind
        if k is None or k not in NODE_KINDS:
            out.append(LintViolation("MissingTag", "node", nid, f"node kind {k!r}"))
    for eid in sorted(g.edges):
        k = g.edges[eid].kind
        if k is None or k not in EDGE_KINDS:
            out.append(LintViolation("MissingTag", "edge", eid, f"edge kind {k!r}"))

    for eid in g.edges_of_kind("crossing"):
        e = g.edges[eid]
        for end in (e.u, e.v):
            if g.nodes[end].kind != "curb" or not _attached_to_sidewalk(g, end):
                out.append(LintViolation("DisconnectedCrossing", "edge", eid, f"end node {end} has no curb-link-sidewalk connection"))
                break
    for eid in g.edges_of_kind("link"):
        e = g.edges[eid]
        if g.nodes[e.u].kind != "curb" and g.nodes[e.v].kind != "curb":
            out.append(LintViolation("WrongClassification", "edge", eid, "link edge touches no curb"))
    for nid in g.nodes_of_kind("curb"):
        if not any(g.edges[k].kind == "crossing" for k in g.incident(nid)):
            out.append(LintViolation("WrongClassification", "node", nid, "curb without a crossing"))

    if streets is not None and streets.edges:
        lines = [_street_in(g, streets, s.geometry) for _, s in sorted(streets.edges.items())]
        tree = shapely.STRtree([LineString(c) for c in lines])
        for nid in g.nodes_of_kind("curb"):
            xy = g.nodes[nid].xy
            idx = tree.query_nearest(shapely.Point(xy), return_distance=True)
            dist = float(idx[1][0]) if len(idx[1]) else math.inf
            if dist >= d_road:
                continue
            entries = []
            for k in g.incident(nid):
                if g.edges[k].kind == "crossing":
                    entries.extend(_crossing_entries(g, k))
            if any(np.hypot(*(xy - p)) <= d_road for p in entries):
                continue
            out.append(LintViolation("MisplacedCurb", "node", nid, f"curb {dist:.2f} m from a street centerline"))
        for eid in g.edges_of_kind("sidewalk"):
            geom = LineString(g.edges[eid].geometry)
            for j in tree.query(geom, predicate="crosses"):
                out.append(LintViolation("WrongClassification", "edge", eid, f"sidewalk crosses street {j}"))
                break
    return out


def _street_in(g: PedGraph, streets: StreetNetwork, geom: np.ndarray) -> np.ndarray:
    if g.projection is None or streets.projection is None or g.projection == streets.projection:
        return geom
    return g.projection.forward_coords(streets.projection.inverse_coords(geom))
