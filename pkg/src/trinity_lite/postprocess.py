"""Vector artifacts from heatmaps: thresholding, clustering, matching.

All routines are deterministic: clustering processes points in input
order with neighbor lists sorted by index, hulls use the monotone chain,
and matching breaks distance ties by segment id.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError
from .geo import (
    Geometry,
    PIXEL_ZOOM,
    ground_resolution,
    parse_wkt_line,
    project,
    serialize_wkt,
    unproject,
)

_NUMERIC_FIELDS = ("score", "area_px", "weight_sum")
_OPS = {
    ">=": lambda a, b: a >= b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    "<": lambda a, b: a < b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
}


@dataclass(frozen=True)
class WeightedPixel:
    x: int                    # zoom-24 global pixel coordinates
    y: int
    weight: float


@dataclass
class RoadSegment:
    segment_id: str
    polyline: list            # [(lon, lat), ...]
    attributes: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.polyline) < 2:
            raise ValidationError(
                f"segment {self.segment_id!r} needs at least 2 vertices")


@dataclass
class ClusterResult:
    clusters: list            # list of index lists
    noise: list               # index list


def threshold_filter(heatmaps, task: str, class_index: int,
                     tau: float) -> list:
    """Pixels with confidence >= tau as weighted global zoom-24 pixels."""
    if not 0.0 < tau <= 1.0:
        raise ValidationError("tau must be in (0, 1]")
    out = []
    for hm in heatmaps:
        conf = hm.confidences[hm.task_index(task)]
        if not 0 <= class_index < conf.shape[0]:
            raise ValidationError(f"class index {class_index} out of range")
        ox, oy = hm.tile.pixel_origin()
        plane = conf[class_index]
        ys, xs = np.nonzero(plane >= tau)
        for y, x in zip(ys.tolist(), xs.tolist()):
            out.append(WeightedPixel(ox + x, oy + y, float(plane[y, x])))
    return out


# ---------------------------------------------------------------------------
# Weighted DBSCAN


_UNSEEN = -2
_NOISE = -1


def _grid_index(points, eps):
    cells = {}
    for i, p in enumerate(points):
        cells.setdefault((int(p.x // eps), int(p.y // eps)), []).append(i)
    return cells


def _neighbors(points, cells, eps, i):
    """Indices within eps of point i (itself included), sorted ascending."""
    p = points[i]
    cx, cy = int(p.x // eps), int(p.y // eps)
    found = []
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for j in cells.get((cx + dx, cy + dy), ()):
                q = points[j]
                if (p.x - q.x) ** 2 + (p.y - q.y) ** 2 <= eps * eps:
                    found.append(j)
    return sorted(found)


def weighted_dbscan(points: list, eps: float, min_weight: float) -> ClusterResult:
    """DBSCAN whose core condition sums confidences instead of counting.

    A point is core iff the weights within eps (its own included) total at
    least min_weight. Expansion follows standard DBSCAN; with unit weights
    and integer min_weight this is exactly classic DBSCAN with
    minPts = min_weight.
    """
    if eps <= 0:
        raise ValidationError("eps must be > 0")
    if min_weight <= 0:
        raise ValidationError("min_weight must be > 0")
    n = len(points)
    labels = [_UNSEEN] * n
    cells = _grid_index(points, eps)
    n_clusters = 0
    for i in range(n):
        if labels[i] != _UNSEEN:
            continue
        neigh = _neighbors(points, cells, eps, i)
        if sum(points[j].weight for j in neigh) < min_weight:
            labels[i] = _NOISE
            continue
        cid = n_clusters
        n_clusters += 1
        labels[i] = cid
        queue = [j for j in neigh if j != i]
        k = 0
        while k < len(queue):
            j = queue[k]
            k += 1
            if labels[j] == _NOISE:
                labels[j] = cid          # border point, first cluster wins
            if labels[j] != _UNSEEN:
                continue
            labels[j] = cid
            jneigh = _neighbors(points, cells, eps, j)
            if sum(points[m].weight for m in jneigh) >= min_weight:
                queue.extend(m for m in jneigh
                             if labels[m] in (_UNSEEN, _NOISE))
    clusters = [[] for _ in range(n_clusters)]
    noise = []
    for idx, lab in enumerate(labels):
        if lab == _NOISE:
            noise.append(idx)
        else:
            clusters[lab].append(idx)
    return ClusterResult(clusters=clusters, noise=noise)


# ---------------------------------------------------------------------------
# Cluster polygons


def _monotone_chain(pts: list) -> list:
    """Convex hull, counterclockwise for y-up axes, first point not repeated."""
    pts = sorted(set(pts))
    if len(pts) == 1:
        return list(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def clusters_to_polygons(result: ClusterResult, points: list) -> list:
    """One convex polygon per cluster over member-pixel unit squares."""
    polygons = []
    for members in result.clusters:
        if not members:
            raise ValidationError("empty cluster")
        corners = set()
        for i in members:
            p = points[i]
            corners.update(((p.x, p.y), (p.x + 1, p.y),
                            (p.x, p.y + 1), (p.x + 1, p.y + 1)))
        hull = _monotone_chain(list(corners))
        ring = [unproject(float(x), float(y), PIXEL_ZOOM) for x, y in hull]
        ring.append(ring[0])
        # pixel y grows southward, so flip to keep lon/lat rings CCW
        area2 = sum(ring[i][0] * ring[i + 1][1] - ring[i + 1][0] * ring[i][1]
                    for i in range(len(ring) - 1))
        if area2 < 0:
            ring.reverse()
        polygons.append(Geometry("polygon", [ring]))
    return polygons


def cluster_features(result: ClusterResult, points: list) -> list:
    """Polygon features with score (mean weight), area and weight sums."""
    feats = []
    for cid, (geom, members) in enumerate(
            zip(clusters_to_polygons(result, points), result.clusters)):
        weight_sum = sum(points[i].weight for i in members)
        feats.append({
            "cluster_id": cid,
            "geometry": geom,
            "area_px": len(members),
            "weight_sum": weight_sum,
            "score": weight_sum / len(members),
        })
    return feats


# ---------------------------------------------------------------------------
# Map matching


def _point_segment_dist_px(px, py, a, b):
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    if dx == 0 and dy == 0:
        return math.hypot(px - ax, py - ay)
    t = ((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy)
    t = min(1.0, max(0.0, t))
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


def _polyline_px(segment: RoadSegment) -> list:
    return [project(lon, lat, PIXEL_ZOOM) for lon, lat in segment.polyline]


def polyline_length_px(segment: RoadSegment) -> float:
    pts = _polyline_px(segment)
    return sum(math.hypot(b[0] - a[0], b[1] - a[1])
               for a, b in zip(pts[:-1], pts[1:]))


def point_to_polyline_px(px: float, py: float, polyline_px: list) -> float:
    return min(_point_segment_dist_px(px, py, a, b)
               for a, b in zip(polyline_px[:-1], polyline_px[1:]))


def map_match(points: list, network: list, radius_m: float,
              score_tau: float) -> list:
    """Assign each pixel to its nearest segment within radius_m and score
    segments by total assigned weight per pixel of polyline length.

    Distances are Euclidean in meters: zoom-24 pixel distance scaled by
    the ground resolution at the pixel's latitude. Equidistant segments go
    to the lexicographically smallest id. Returns (segment_id, score)
    with score >= score_tau, best first, ties by id.
    """
    if not network:
        raise ValidationError("road network is empty")
    if radius_m <= 0:
        raise ValidationError("radius_m must be > 0")
    segs = sorted(network, key=lambda s: s.segment_id)
    ids = [s.segment_id for s in segs]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate segment ids in network")
    polys = [_polyline_px(s) for s in segs]
    assigned = {s.segment_id: 0.0 for s in segs}
    for p in points:
        cx, cy = p.x + 0.5, p.y + 0.5
        _, lat = unproject(cx, cy, PIXEL_ZOOM)
        meters_per_px = ground_resolution(lat, PIXEL_ZOOM)
        best_id, best_d = None, None
        for seg, poly in zip(segs, polys):
            d = point_to_polyline_px(cx, cy, poly) * meters_per_px
            if d <= radius_m and (best_d is None or d < best_d):
                best_id, best_d = seg.segment_id, d
        if best_id is not None:
            assigned[best_id] += p.weight
    scores = []
    for seg in segs:
        length = polyline_length_px(seg)
        if length == 0:
            continue
        score = assigned[seg.segment_id] / length
        if score >= score_tau:
            scores.append((seg.segment_id, score))
    scores.sort(key=lambda t: (-t[1], t[0]))
    return scores


# ---------------------------------------------------------------------------
# Predicate filtering and serialization


def predicate_filter(items: list, predicate: dict) -> list:
    """Items passing every atom; atoms compare score / area_px / weight_sum
    or test an attribute for equality. Items missing a referenced field
    fail that atom."""
    atoms = (predicate or {}).get("atoms", [])
    for atom in atoms:
        f = atom.get("field")
        if f == "attribute":
            if "key" not in atom or "equals" not in atom:
                raise ValidationError("attribute atom needs 'key' and 'equals'")
        elif f in _NUMERIC_FIELDS:
            if atom.get("op") not in _OPS:
                raise ValidationError(f"unknown comparison {atom.get('op')!r}")
            if "value" not in atom:
                raise ValidationError("comparison atom needs 'value'")
        else:
            raise ValidationError(f"unknown predicate field {f!r}")

    def passes(item):
        for atom in atoms:
            if atom["field"] == "attribute":
                attrs = item.get("attributes") or {}
                if attrs.get(atom["key"]) != atom["equals"]:
                    return False
            else:
                got = item.get(atom["field"])
                if got is None or not _OPS[atom["op"]](got, atom["value"]):
                    return False
        return True

    return [it for it in items if passes(it)]


def parse_road_network(text: str) -> list:
    """One `LINESTRING (...)<tab>segment_id` per line."""
    segments = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if "\t" not in line:
            raise ParseError("expected '<wkt>\\t<segment_id>'", lineno)
        wkt, seg_id = line.rsplit("\t", 1)
        geom = parse_wkt_line(wkt.strip(), lineno)
        if geom.kind != "linestring":
            raise ParseError(f"road network needs LINESTRING, got {geom.kind}",
                             lineno)
        segments.append(RoadSegment(seg_id.strip(), list(geom.coordinates)))
    if not segments:
        raise ValidationError("road network is empty")
    return segments


def features_to_wkt(features: list) -> str:
    """One `WKT<tab>score` line per feature."""
    lines = []
    for feat in features:
        geom = feat["geometry"]
        lines.append(f"{serialize_wkt(geom)}\t{feat['score']!r}")
    return "\n".join(lines) + "\n" if lines else ""


def _geometry_geojson(geom: Geometry) -> dict:
    if geom.kind == "polygon":
        return {"type": "Polygon",
                "coordinates": [[[lon, lat] for lon, lat in ring]
                                for ring in geom.coordinates]}
    if geom.kind == "linestring":
        return {"type": "LineString",
                "coordinates": [[lon, lat] for lon, lat in geom.coordinates]}
    if geom.kind == "point":
        return {"type": "Point",
                "coordinates": list(geom.coordinates[0])}
    return {"type": "MultiPolygon",
            "coordinates": [[[[lon, lat] for lon, lat in ring] for ring in rings]
                            for rings in geom.coordinates]}


def features_to_geojson(features: list) -> str:
    out = []
    for feat in features:
        props = {k: v for k, v in feat.items() if k not in ("geometry",)}
        out.append({"type": "Feature",
                    "geometry": _geometry_geojson(feat["geometry"]),
                    "properties": props})
    return json.dumps({"type": "FeatureCollection", "features": out}, indent=2)
