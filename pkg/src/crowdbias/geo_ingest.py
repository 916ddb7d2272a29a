"""Region model, GeoJSON/CSV parsing and the tract to block-group hierarchy.

Areas come from the planar shoelace formula on coordinates as given. Supply
equal-area projected coordinates for real census data; only within-tract area
ratios matter downstream, so any consistent planar system works.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import DataError

__all__ = [
    "Level",
    "Region",
    "RegionSet",
    "AttributeTable",
    "Hierarchy",
    "ring_area",
    "polygon_area",
    "point_in_polygon",
    "representative_point",
    "parse_geometry",
    "regions_to_geojson",
    "write_geojson",
    "parse_attributes",
    "build_hierarchy",
]

_THOUSANDS = re.compile(r"^-?\d{1,3}(,\d{3})+(\.\d*)?$")
MISSING_TOKENS = {"", "na", "n/a", "nan", "null", "none", "-", "--"}


class Level(str, Enum):
    tract = "tract"
    block_group = "block_group"
    custom = "custom"


Ring = tuple  # tuple of (x, y) pairs, closed
Polygon = tuple  # (outer, hole, hole, ...)


def ring_area(ring):
    """Absolute shoelace area of a closed ring."""
    xs = np.asarray([p[0] for p in ring], dtype=float)
    ys = np.asarray([p[1] for p in ring], dtype=float)
    # shift to the first vertex to limit cancellation on projected coordinates
    xs = xs - xs[0]
    ys = ys - ys[0]
    return abs(float(np.dot(xs[:-1], ys[1:]) - np.dot(xs[1:], ys[:-1]))) / 2.0


def polygon_area(polygons):
    """Area of a multipolygon: outer rings minus holes, summed over parts."""
    total = 0.0
    for poly in polygons:
        outer, holes = poly[0], poly[1:]
        total += ring_area(outer) - sum(ring_area(h) for h in holes)
    return max(total, 0.0)


def _in_ring(x, y, ring):
    inside = False
    n = len(ring) - 1
    for k in range(n):
        x1, y1 = ring[k]
        x2, y2 = ring[k + 1]
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xc:
                inside = not inside
    return inside


def point_in_polygon(point, polygons):
    """Even-odd containment test against a multipolygon with holes."""
    x, y = point
    for poly in polygons:
        if _in_ring(x, y, poly[0]) and not any(_in_ring(x, y, h) for h in poly[1:]):
            return True
    return False


def _ring_centroid(ring):
    a = 0.0
    cx = cy = 0.0
    x0, y0 = ring[0]
    for k in range(len(ring) - 1):
        x1, y1 = ring[k][0] - x0, ring[k][1] - y0
        x2, y2 = ring[k + 1][0] - x0, ring[k + 1][1] - y0
        cross = x1 * y2 - x2 * y1
        a += cross
        cx += (x1 + x2) * cross
        cy += (y1 + y2) * cross
    if a == 0:
        return None
    return (x0 + cx / (3 * a), y0 + cy / (3 * a))


def representative_point(polygons):
    """A point guaranteed to lie inside the (largest part of the) geometry.

    The centroid of the largest outer ring is used when it is interior;
    otherwise a horizontal scanline through it is intersected with the
    boundary and the midpoint of the widest interior span is returned.
    """
    largest = max(polygons, key=lambda p: ring_area(p[0]))
    c = _ring_centroid(largest[0])
    if c is not None and point_in_polygon(c, [largest]):
        return c
    ys = sorted({p[1] for ring in largest for p in ring})
    candidates = []
    if c is not None:
        candidates.append(c[1])
    candidates += [(a + b) / 2 for a, b in zip(ys, ys[1:])]
    for y in candidates:
        xs = []
        for ring in largest:
            for k in range(len(ring) - 1):
                (x1, y1), (x2, y2) = ring[k], ring[k + 1]
                if (y1 > y) != (y2 > y):
                    xs.append(x1 + (y - y1) * (x2 - x1) / (y2 - y1))
        xs.sort()
        spans = [(xs[k + 1] - xs[k], (xs[k] + xs[k + 1]) / 2) for k in range(0, len(xs) - 1, 2)]
        if spans:
            width, mid = max(spans)
            if width > 0:
                return (mid, y)
    return tuple(largest[0][0])


@dataclass(frozen=True)
class Region:
    id: str
    geometry: tuple  # tuple of polygons; polygon = (outer ring, *holes)
    area: float
    properties: Mapping = field(default_factory=dict, compare=False, repr=False)
    raw_geometry: Mapping | None = field(default=None, compare=False, repr=False)

    @property
    def degenerate(self):
        return self.area == 0.0


class RegionSet:
    """Ordered, immutable collection of regions; position is the matrix index."""

    def __init__(self, regions: Iterable[Region], level=Level.custom):
        self._regions = tuple(regions)
        self.level = Level(level)
        index = {}
        dupes = []
        for k, r in enumerate(self._regions):
            if r.id in index:
                dupes.append(r.id)
            index[r.id] = k
        if dupes:
            raise DataError(f"duplicate region id(s): {sorted(set(dupes))}")
        self._index = index

    def __len__(self):
        return len(self._regions)

    def __iter__(self):
        return iter(self._regions)

    def __getitem__(self, k):
        return self._regions[k]

    def __contains__(self, rid):
        return rid in self._index

    def index_of(self, rid):
        return self._index[rid]

    @property
    def ids(self):
        return [r.id for r in self._regions]

    @property
    def areas(self):
        return np.array([r.area for r in self._regions], dtype=float)

    @property
    def degenerate_ids(self):
        return [r.id for r in self._regions if r.degenerate]

    def by_id(self, rid):
        return self._regions[self._index[rid]]


def _parse_ring(coords, fid):
    try:
        ring = tuple((float(p[0]), float(p[1])) for p in coords)
    except (TypeError, ValueError, IndexError):
        raise DataError(f"feature {fid!r}: malformed coordinate ring")
    if len(ring) < 4:
        raise DataError(f"feature {fid!r}: ring has {len(ring)} positions, need >= 4")
    if ring[0] != ring[-1]:
        raise DataError(f"feature {fid!r}: ring is not closed")
    return ring


def _parse_polygons(geom, fid):
    if not isinstance(geom, Mapping):
        raise DataError(f"feature {fid!r}: missing geometry")
    gtype = geom.get("type")
    coords = geom.get("coordinates")
    if gtype == "Polygon":
        parts = [coords]
    elif gtype == "MultiPolygon":
        parts = coords
    else:
        raise DataError(f"feature {fid!r}: non-polygonal geometry {gtype!r}")
    if not isinstance(parts, list) or not parts:
        raise DataError(f"feature {fid!r}: empty geometry")
    polys = []
    for part in parts:
        if not isinstance(part, list) or not part:
            raise DataError(f"feature {fid!r}: malformed polygon")
        polys.append(tuple(_parse_ring(r, fid) for r in part))
    return tuple(polys)


def parse_geometry(source, id_prop="GEOID", level=Level.custom):
    """Parse a GeoJSON FeatureCollection into a :class:`RegionSet`.

    Parameters
    ----------
    source : str, Path, or mapping
        Path to a GeoJSON file or an already-decoded document.
    id_prop : str
        Feature property holding the region identifier.
    level : Level
        Aggregation level tag for the result.
    """
    if isinstance(source, Mapping):
        doc = source
    else:
        try:
            doc = json.loads(Path(source).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{source}: malformed JSON ({exc})")
    if not isinstance(doc, Mapping) or doc.get("type") != "FeatureCollection":
        raise DataError("geometry document is not a FeatureCollection")
    features = doc.get("features")
    if not isinstance(features, list):
        raise DataError("FeatureCollection has no feature list")

    regions = []
    for k, feat in enumerate(features):
        props = feat.get("properties") or {}
        if id_prop not in props or props[id_prop] is None:
            raise DataError(f"feature #{k} has no {id_prop!r} property")
        rid = str(props[id_prop])
        polys = _parse_polygons(feat.get("geometry"), rid)
        regions.append(
            Region(
                id=rid,
                geometry=polys,
                area=polygon_area(polys),
                properties=copy.deepcopy(dict(props)),
                raw_geometry=copy.deepcopy(feat["geometry"]),
            )
        )
    return RegionSet(regions, level)


def _geometry_dict(region):
    if region.raw_geometry is not None:
        return copy.deepcopy(region.raw_geometry)
    polys = [[[list(p) for p in ring] for ring in poly] for poly in region.geometry]
    if len(polys) == 1:
        return {"type": "Polygon", "coordinates": polys[0]}
    return {"type": "MultiPolygon", "coordinates": polys}


def regions_to_geojson(regions, id_prop="GEOID", extra=None):
    """Build a FeatureCollection; ``extra`` maps region index to added properties."""
    feats = []
    for k, r in enumerate(regions):
        props = dict(r.properties)
        props.setdefault(id_prop, r.id)
        if extra is not None:
            for key, val in extra[k].items():
                if val is None:
                    props.pop(key, None)
                else:
                    props[key] = val
        feats.append({"type": "Feature", "properties": props, "geometry": _geometry_dict(r)})
    return {"type": "FeatureCollection", "features": feats}


def write_geojson(doc, path):
    Path(path).write_text(json.dumps(doc, sort_keys=False) + "\n", encoding="utf-8")


def _to_float(cell):
    s = cell.strip()
    if s.lower() in MISSING_TOKENS:
        return math.nan
    if _THOUSANDS.match(s):
        s = s.replace(",", "")
    try:
        v = float(s)
    except ValueError:
        return math.nan
    return v if math.isfinite(v) else math.nan


class AttributeTable:
    """Region id -> named numeric columns. Missing cells are NaN, never 0.

    ``units`` optionally declares a unit string per column.
    """

    def __init__(self, ids, columns, units=None):
        self.ids = [str(i) for i in ids]
        if len(set(self.ids)) != len(self.ids):
            seen, dupes = set(), set()
            for i in self.ids:
                (dupes if i in seen else seen).add(i)
            raise DataError(f"attribute table has duplicate ids: {sorted(dupes)}")
        self._index = {rid: k for k, rid in enumerate(self.ids)}
        self.columns = {}
        for name, vals in columns.items():
            arr = np.asarray(vals, dtype=float)
            if arr.shape != (len(self.ids),):
                raise DataError(f"column {name!r} has wrong length")
            arr.setflags(write=False)
            self.columns[name] = arr
        self.units = dict(units or {})

    def __len__(self):
        return len(self.ids)

    def __contains__(self, name):
        return name in self.columns

    @property
    def names(self):
        return list(self.columns)

    def column(self, name):
        if name not in self.columns:
            raise DataError(f"missing column {name!r}; available: {self.names}")
        return self.columns[name]

    def missing(self, name):
        col = self.column(name)
        return [self.ids[k] for k in np.flatnonzero(np.isnan(col))]

    def require(self, name, ids=None):
        """Column values (optionally reordered to ``ids``); error on any missing."""
        col = self.column(name)
        if ids is not None:
            try:
                col = col[[self._index[i] for i in ids]]
            except KeyError as exc:
                raise DataError(f"column {name!r}: no row for region {exc.args[0]!r}")
        bad = np.flatnonzero(np.isnan(col))
        if bad.size:
            order = ids if ids is not None else self.ids
            raise DataError(f"column {name!r} has missing values for {[order[k] for k in bad[:10]]}")
        return np.array(col)

    def with_column(self, name, values, unit=None):
        cols = dict(self.columns)
        cols[name] = values
        units = dict(self.units)
        if unit is not None:
            units[name] = unit
        return AttributeTable(self.ids, cols, units)

    def join(self, regions):
        """Reorder to ``regions`` order; error listing orphans on either side."""
        table_only = [i for i in self.ids if i not in regions]
        region_only = [i for i in regions.ids if i not in self._index]
        if table_only or region_only:
            msg = []
            if table_only:
                msg.append(f"ids in table but not in regions: {table_only[:20]}")
            if region_only:
                msg.append(f"regions without table rows: {region_only[:20]}")
            raise DataError("attribute join failed; " + "; ".join(msg))
        order = [self._index[i] for i in regions.ids]
        return AttributeTable(regions.ids, {k: v[order] for k, v in self.columns.items()}, self.units)


def parse_attributes(source, id_column="GEOID", units=None):
    """Parse an RFC 4180 CSV into an :class:`AttributeTable`.

    Every non-id column is parsed as numeric; cells that do not parse become
    missing values.
    """
    if isinstance(source, (str, Path)) and Path(source).is_file():
        text = Path(source).read_text(encoding="utf-8-sig")
    elif isinstance(source, str):
        text = source
    else:
        raise DataError(f"attribute source {source!r} not found")
    reader = csv.reader(io.StringIO(text))
    rows = [r for r in reader if r]
    if not rows:
        raise DataError("attribute table is empty")
    header = [h.strip() for h in rows[0]]
    if id_column not in header:
        raise DataError(f"id column {id_column!r} missing; header is {header}")
    body = rows[1:]
    if not body:
        raise DataError("attribute table has a header but no rows")
    id_pos = header.index(id_column)
    ids = [r[id_pos].strip() for r in body]
    cols = {}
    for pos, name in enumerate(header):
        if pos == id_pos:
            continue
        cols[name] = [_to_float(r[pos]) if pos < len(r) else math.nan for r in body]
    return AttributeTable(ids, cols, units)


@dataclass(frozen=True)
class Hierarchy:
    """Total child -> parent mapping plus area diagnostics."""

    parent_of: Mapping[str, str]
    method: Mapping[str, str]  # child id -> "prefix" | "containment"
    area_ratio: Mapping[str, float]  # parent id -> sum(child areas) / parent area

    def children_of(self, parent_id):
        return [c for c, p in self.parent_of.items() if p == parent_id]

    def groups(self):
        out = {}
        for c, p in self.parent_of.items():
            out.setdefault(p, []).append(c)
        return out


def build_hierarchy(children, parents):
    """Map each child region to one parent.

    Census GEOIDs nest by prefix (block group = tract + one digit), so the
    longest parent id that prefixes the child id wins. Children that match no
    prefix fall back to the parent containing their representative point.
    """
    parent_ids = set(parents.ids)
    lengths = sorted({len(p) for p in parent_ids}, reverse=True)
    parent_of, method, orphans = {}, {}, []
    for child in children:
        match = None
        for L in lengths:
            if L < len(child.id) and child.id[:L] in parent_ids:
                match = child.id[:L]
                break
        if match is not None:
            parent_of[child.id] = match
            method[child.id] = "prefix"
            continue
        pt = representative_point(child.geometry)
        hit = next((p.id for p in parents if point_in_polygon(pt, p.geometry)), None)
        if hit is None:
            orphans.append(child.id)
        else:
            parent_of[child.id] = hit
            method[child.id] = "containment"
    if orphans:
        raise DataError(f"children with no parent by prefix or containment: {orphans[:20]}")

    child_area = {}
    for child in children:
        p = parent_of[child.id]
        child_area[p] = child_area.get(p, 0.0) + child.area
    ratio = {}
    for p in parents:
        if p.id in child_area:
            ratio[p.id] = child_area[p.id] / p.area if p.area > 0 else math.inf
    return Hierarchy(parent_of, method, ratio)
