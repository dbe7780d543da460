"""Web Mercator projection math, zoom-16 tiling and WKT geometry parsing.

The platform works on the spherical Mercator (EPSG:3857) pixel grid: the
world is a 2^24 x 2^24 grid of zoom-24 pixels (~2.38 m at the equator),
grouped into zoom-16 tiles of 256 x 256 pixels.  Pixel coordinates are
top-left anchored: a pixel is the floor of the continuous projection.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

from .errors import ParseError, ValidationError

MAX_LAT = 85.05112878          # Mercator latitude limit, degrees
PIXEL_ZOOM = 24                # zoom of the global pixel grid
TILE_ZOOM = 16                 # zoom of the storage/training tiles
TILE_SIZE = 256                # zoom-24 pixels per zoom-16 tile side
EARTH_CIRCUMFERENCE_M = 40075016.686

# Inverse projection returns coordinates nudged this many pixels inside the
# cell so the forward floor() is immune to transcendental round-off.
_CORNER_NUDGE = 1e-5


@dataclass(frozen=True)
class LatLon:
    """A longitude/latitude pair in degrees, within Mercator bounds."""

    lon: float
    lat: float

    def __post_init__(self):
        if not (math.isfinite(self.lon) and math.isfinite(self.lat)):
            raise ValidationError(f"non-finite coordinate ({self.lon}, {self.lat})")
        if not -180.0 <= self.lon <= 180.0:
            raise ValidationError(f"longitude {self.lon} outside [-180, 180]")
        if not -MAX_LAT <= self.lat <= MAX_LAT:
            raise ValidationError(f"latitude {self.lat} outside [-{MAX_LAT}, {MAX_LAT}]")


@dataclass(frozen=True, order=True)
class PixelCoord:
    """Integer cell of the zoom-24 grid, row-major, origin top-left."""

    x: int
    y: int

    def __post_init__(self):
        limit = 1 << PIXEL_ZOOM
        if not (0 <= self.x < limit and 0 <= self.y < limit):
            raise ValidationError(f"pixel ({self.x}, {self.y}) outside zoom-{PIXEL_ZOOM} grid")


@dataclass(frozen=True, order=True)
class TileKey:
    """Zoom-16 tile index; spans pixels [256x, 256x+255] x [256y, 256y+255]."""

    x: int
    y: int

    def __post_init__(self):
        limit = 1 << TILE_ZOOM
        if not (0 <= self.x < limit and 0 <= self.y < limit):
            raise ValidationError(f"tile ({self.x}, {self.y}) outside zoom-{TILE_ZOOM} grid")

    def pixel_origin(self) -> tuple[int, int]:
        return self.x * TILE_SIZE, self.y * TILE_SIZE


def _check_zoom(zoom: int) -> None:
    if not 0 <= zoom <= PIXEL_ZOOM:
        raise ValidationError(f"zoom {zoom} outside [0, {PIXEL_ZOOM}]")


def project(lon: float, lat: float, zoom: int) -> tuple[float, float]:
    """Continuous Mercator projection onto the 2^zoom grid (no flooring)."""
    phi = math.radians(lat)
    n = float(1 << zoom)
    x = ((lon + 180.0) / 360.0) * n
    y = ((1.0 - math.log(math.tan(phi) + 1.0 / math.cos(phi)) / math.pi) / 2.0) * n
    return x, y


def lonlat_to_pixel(p: LatLon, zoom: int = PIXEL_ZOOM) -> PixelCoord:
    """Floor of the continuous projection, clamped to [0, 2^zoom - 1].

    At zoom 16 the result doubles as the tile index of the point.
    """
    _check_zoom(zoom)
    x, y = project(p.lon, p.lat, zoom)
    limit = (1 << zoom) - 1
    xi = min(max(int(math.floor(x)), 0), limit)
    yi = min(max(int(math.floor(y)), 0), limit)
    return PixelCoord(xi, yi)


def unproject(x: float, y: float, zoom: int) -> tuple[float, float]:
    """Inverse of project(); accepts continuous grid coordinates."""
    n = float(1 << zoom)
    lon = (x * 360.0) / n - 180.0
    lat = math.degrees(math.atan(math.sinh(math.pi * (1.0 - 2.0 * y / n))))
    return lon, lat


def pixel_to_lonlat(px: PixelCoord, zoom: int = PIXEL_ZOOM) -> LatLon:
    """Lon/lat of the pixel's top-left corner.

    The corner is nudged a hair inside the cell so that
    lonlat_to_pixel(pixel_to_lonlat(px)) == px holds exactly for every pixel.
    """
    _check_zoom(zoom)
    lon, lat = unproject(px.x + _CORNER_NUDGE, px.y + _CORNER_NUDGE, zoom)
    return LatLon(min(max(lon, -180.0), 180.0), min(max(lat, -MAX_LAT), MAX_LAT))


def pixel_to_tile(px: PixelCoord) -> tuple[TileKey, int]:
    """Tile containing a zoom-24 pixel plus its row-major local index."""
    tile = TileKey(px.x // TILE_SIZE, px.y // TILE_SIZE)
    local = (px.y % TILE_SIZE) * TILE_SIZE + (px.x % TILE_SIZE)
    return tile, local


def tile_of_global(x: int, y: int) -> tuple[TileKey, int]:
    """pixel_to_tile for raw integer coordinates."""
    return pixel_to_tile(PixelCoord(x, y))


@dataclass(frozen=True)
class BBox:
    """Axis-aligned lon/lat box, min corner <= max corner."""

    lon_min: float
    lat_min: float
    lon_max: float
    lat_max: float

    def __post_init__(self):
        LatLon(self.lon_min, self.lat_min)
        LatLon(self.lon_max, self.lat_max)
        if self.lon_min > self.lon_max or self.lat_min > self.lat_max:
            raise ValidationError("inverted bbox: min corner exceeds max corner")

    @classmethod
    def from_list(cls, vals) -> "BBox":
        if len(vals) != 4:
            raise ValidationError("bbox must be [lon_min, lat_min, lon_max, lat_max]")
        return cls(*[float(v) for v in vals])

    def as_list(self) -> list[float]:
        return [self.lon_min, self.lat_min, self.lon_max, self.lat_max]


def tiles_covering(bbox: BBox, zoom: int = TILE_ZOOM) -> list[TileKey]:
    """All zoom-`zoom` tiles intersecting the bbox, row-major, no duplicates.

    The north-west corner has the smallest tile indices (pixel y grows
    southward).
    """
    limit = (1 << zoom) - 1

    def tile_index(lon: float, lat: float) -> tuple[int, int]:
        x, y = project(lon, lat, zoom)
        return (min(max(int(math.floor(x)), 0), limit),
                min(max(int(math.floor(y)), 0), limit))

    x0, y0 = tile_index(bbox.lon_min, bbox.lat_max)   # NW corner
    x1, y1 = tile_index(bbox.lon_max, bbox.lat_min)   # SE corner
    out = []
    for y in range(y0, y1 + 1):
        for x in range(x0, x1 + 1):
            out.append(TileKey(x, y) if zoom == TILE_ZOOM else _raw_tile(x, y))
    return out


def _raw_tile(x: int, y: int) -> TileKey:
    obj = object.__new__(TileKey)
    object.__setattr__(obj, "x", x)
    object.__setattr__(obj, "y", y)
    return obj


def tile_bbox(tile: TileKey) -> BBox:
    """Lon/lat bounds of a zoom-16 tile (corner values, no nudge)."""
    x0, y0 = tile.pixel_origin()
    west, north = unproject(x0, y0, PIXEL_ZOOM)
    east, south = unproject(x0 + TILE_SIZE, y0 + TILE_SIZE, PIXEL_ZOOM)
    return BBox(max(west, -180.0), max(south, -MAX_LAT),
                min(east, 180.0), min(north, MAX_LAT))


def ground_resolution(lat: float, zoom: int) -> float:
    """Meters spanned by one grid cell at the given latitude and zoom."""
    if not -MAX_LAT <= lat <= MAX_LAT:
        raise ValidationError(f"latitude {lat} outside Mercator bounds")
    return EARTH_CIRCUMFERENCE_M * math.cos(math.radians(lat)) / float(1 << zoom)


# ---------------------------------------------------------------------------
# Geometries and WKT


GEOMETRY_KINDS = ("point", "linestring", "polygon", "multipolygon")


@dataclass
class Geometry:
    """A point, linestring, polygon or multipolygon with an optional class tag.

    Coordinate layout by kind:
      point         [(lon, lat)]
      linestring    [(lon, lat), ...]                     >= 2 vertices
      polygon       [ring, hole, ...], rings closed       first ring is outer
      multipolygon  [polygon, ...]
    """

    kind: str
    coordinates: list = field(default_factory=list)
    class_tag: int | None = None

    def __post_init__(self):
        if self.kind not in GEOMETRY_KINDS:
            raise ValidationError(f"unknown geometry kind {self.kind!r}")
        if self.class_tag is not None and self.class_tag < 0:
            raise ValidationError("class_tag must be non-negative")
        self._validate()

    def _validate(self):
        if self.kind == "point":
            if len(self.coordinates) != 1:
                raise ValidationError("point needs exactly one vertex")
            self._check_vertices(self.coordinates)
        elif self.kind == "linestring":
            if len(self.coordinates) < 2:
                raise ValidationError("linestring needs at least 2 vertices")
            self._check_vertices(self.coordinates)
        elif self.kind == "polygon":
            self._check_rings(self.coordinates)
        else:
            if not self.coordinates:
                raise ValidationError("multipolygon needs at least one polygon")
            for rings in self.coordinates:
                self._check_rings(rings)

    @staticmethod
    def _check_vertices(verts):
        for lon, lat in verts:
            LatLon(lon, lat)

    @classmethod
    def _check_rings(cls, rings):
        if not rings:
            raise ValidationError("polygon needs at least an outer ring")
        for ring in rings:
            cls._check_vertices(ring)
            if len(ring) < 4 or ring[0] != ring[-1]:
                raise ValidationError("ring not closed (first vertex must equal last)")
            if len({(lon, lat) for lon, lat in ring}) < 3:
                raise ValidationError("ring needs at least 3 distinct vertices")

    def polygons(self) -> list:
        """Ring lists of this geometry ([] for points/linestrings)."""
        if self.kind == "polygon":
            return [self.coordinates]
        if self.kind == "multipolygon":
            return list(self.coordinates)
        return []

    def vertices(self):
        """Flat iterator over every (lon, lat) vertex."""
        if self.kind in ("point", "linestring"):
            yield from self.coordinates
        else:
            for rings in self.polygons():
                for ring in rings:
                    yield from ring

    def bbox(self) -> BBox:
        lons = [v[0] for v in self.vertices()]
        lats = [v[1] for v in self.vertices()]
        return BBox(min(lons), min(lats), max(lons), max(lats))


_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_TAG_RE = re.compile(r"\t\s*([-+]?\d+)\s*$")


def _parse_coord_pairs(text: str, line: int) -> list[tuple[float, float]]:
    pairs = []
    for part in text.split(","):
        nums = re.findall(_NUM, part)
        if len(nums) != 2:
            raise ParseError(f"expected 'lon lat' pair, got {part.strip()!r}", line)
        pairs.append((float(nums[0]), float(nums[1])))
    return pairs


def _split_parens(text: str, line: int) -> list[str]:
    """Split a parenthesized group list '(a), (b), ...' into its members."""
    items, depth, start = [], 0, None
    for i, ch in enumerate(text):
        if ch == "(":
            if depth == 0:
                start = i + 1
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise ParseError("unbalanced parentheses", line)
            if depth == 0:
                items.append(text[start:i])
    if depth != 0:
        raise ParseError("unbalanced parentheses", line)
    if not items:
        raise ParseError("empty coordinate list", line)
    return items


def parse_wkt_line(text: str, line: int = 1) -> Geometry:
    """Parse one WKT geometry, optionally suffixed with a tab + integer tag."""
    tag = None
    m = _TAG_RE.search(text)
    if m:
        tag = int(m.group(1))
        text = text[: m.start()]
    text = text.strip()
    m = re.match(r"(?i)^(POINT|LINESTRING|POLYGON|MULTIPOLYGON)\s*\((.*)\)\s*$", text, re.S)
    if not m:
        raise ParseError(f"unrecognized WKT: {text[:60]!r}", line)
    kind, body = m.group(1).lower(), m.group(2)
    try:
        if kind == "point":
            coords = _parse_coord_pairs(body, line)
            if len(coords) != 1:
                raise ParseError("POINT takes a single coordinate pair", line)
        elif kind == "linestring":
            coords = _parse_coord_pairs(body, line)
        elif kind == "polygon":
            coords = [_parse_coord_pairs(ring, line) for ring in _split_parens(body, line)]
        else:
            coords = []
            for poly in _split_parens(body, line):
                coords.append([_parse_coord_pairs(r, line) for r in _split_parens(poly, line)])
        return Geometry(kind, coords, tag)
    except ValidationError as e:
        if isinstance(e, ParseError):
            raise
        raise ParseError(str(e), line) from e


def parse_wkt(text: str) -> list[Geometry]:
    """Parse WKT text, one geometry per non-empty line.

    Raises ParseError with the offending 1-based line number on malformed
    input, and surfaces ring-closure violations as validation errors.
    """
    out = []
    for i, raw in enumerate(text.splitlines(), start=1):
        if raw.strip():
            out.append(parse_wkt_line(raw, i))
    return out


def _fmt(v: float) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def serialize_wkt(geom: Geometry) -> str:
    """Inverse of parse_wkt_line; tags re-emitted as a tab suffix."""
    def pairs(coords):
        return ", ".join(f"{_fmt(lon)} {_fmt(lat)}" for lon, lat in coords)

    if geom.kind == "point":
        body = f"POINT ({pairs(geom.coordinates)})"
    elif geom.kind == "linestring":
        body = f"LINESTRING ({pairs(geom.coordinates)})"
    elif geom.kind == "polygon":
        rings = ", ".join(f"({pairs(r)})" for r in geom.coordinates)
        body = f"POLYGON ({rings})"
    else:
        polys = ", ".join(
            "(" + ", ".join(f"({pairs(r)})" for r in rings) + ")"
            for rings in geom.coordinates
        )
        body = f"MULTIPOLYGON ({polys})"
    if geom.class_tag is not None:
        body += f"\t{geom.class_tag}"
    return body
