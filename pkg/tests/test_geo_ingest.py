import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdbias.errors import DataError
from crowdbias.geo_ingest import (
    build_hierarchy,
    parse_attributes,
    parse_geometry,
    point_in_polygon,
    polygon_area,
    regions_to_geojson,
    representative_point,
    ring_area,
)
from crowdbias.synth import make_nested_lattices

from conftest import collection, feature, square


def test_unit_square_area():
    rs = parse_geometry(collection(feature("a", square(0, 0))))
    assert rs[0].area == 1.0


def test_square_with_hole():
    outer = square(0, 0)[0]
    hole = square(0.25, 0.25, 0.5)[0][::-1]
    rs = parse_geometry(collection(feature("a", (outer, hole))))
    assert rs[0].area == pytest.approx(0.75, abs=1e-15)


def test_multipolygon_sums_parts():
    doc = collection({
        "type": "Feature",
        "properties": {"GEOID": "m"},
        "geometry": {"type": "MultiPolygon", "coordinates": [[[list(p) for p in square(0, 0)[0]]], [[list(p) for p in square(5, 5, 2)[0]]]]},
    })
    assert parse_geometry(doc)[0].area == 5.0


def test_duplicate_id():
    with pytest.raises(DataError, match="duplicate"):
        parse_geometry(collection(feature("a", square(0, 0)), feature("a", square(1, 0))))


@pytest.mark.parametrize(
    "doc, msg",
    [
        ({"type": "Feature"}, "FeatureCollection"),
        (collection({"type": "Feature", "properties": {}, "geometry": {"type": "Polygon", "coordinates": [[[0, 0], [1, 0], [1, 1], [0, 0]]]}}), "GEOID"),
        (collection({"type": "Feature", "properties": {"GEOID": "p"}, "geometry": {"type": "Point", "coordinates": [0, 0]}}), "non-polygonal"),
        (collection({"type": "Feature", "properties": {"GEOID": "p"}, "geometry": {"type": "Polygon", "coordinates": [[[0, 0], [1, 0], [0, 0]]]}}), ">= 4"),
        (collection({"type": "Feature", "properties": {"GEOID": "p"}, "geometry": {"type": "Polygon", "coordinates": [[[0, 0], [1, 0], [1, 1], [0, 1]]]}}), "not closed"),
    ],
)
def test_malformed_documents(doc, msg):
    with pytest.raises(DataError, match=msg):
        parse_geometry(doc)


def test_malformed_json(tmp_path):
    p = tmp_path / "bad.geojson"
    p.write_text("{not json")
    with pytest.raises(DataError, match="malformed JSON"):
        parse_geometry(p)


def test_custom_id_prop():
    rs = parse_geometry(collection(feature("a", square(0, 0), TRACT="t1")), id_prop="TRACT")
    assert rs.ids == ["t1"]


def test_degenerate_flagged():
    flat = (((0, 0), (1, 0), (2, 0), (0, 0)),)
    rs = parse_geometry(collection(feature("a", flat), feature("b", square(0, 0))))
    assert rs.degenerate_ids == ["a"]


polygon_pts = st.lists(
    st.tuples(st.floats(-1e3, 1e3, allow_nan=False), st.floats(-1e3, 1e3, allow_nan=False)), min_size=3, max_size=12
)


@given(polygon_pts)
def test_area_independent_of_winding(pts):
    ring = tuple(pts) + (pts[0],)
    span = max(1.0, max(abs(c) for p in pts for c in p))
    assert ring_area(ring) >= 0
    assert ring_area(ring) == pytest.approx(ring_area(ring[::-1]), abs=1e-12 * span**2)


@settings(max_examples=30)
@given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 20), st.integers(1, 5)), min_size=1, max_size=10, unique_by=lambda t: (t[0], t[1])))
def test_roundtrip_preserves_ids_order_area(cells):
    doc = collection(*[feature(f"id{k}", square(x * 0.37, y * 1.3, s * 0.11)) for k, (x, y, s) in enumerate(cells)])
    first = parse_geometry(doc)
    second = parse_geometry(json.loads(json.dumps(regions_to_geojson(first))))
    assert second.ids == first.ids
    for a, b in zip(first, second):
        assert a.area == pytest.approx(b.area, abs=1e-12)


def test_attributes_parse_and_missing():
    t = parse_attributes("GEOID,damage\n1,3\n2,N/A\n3,4.5\n")
    assert len(t) == 3 and t.names == ["damage"]
    assert t.missing("damage") == ["2"]
    with pytest.raises(DataError, match="missing values"):
        t.require("damage")


def test_attributes_errors():
    with pytest.raises(DataError, match="id column"):
        parse_attributes("id,damage\n1,3\n")
    with pytest.raises(DataError, match="empty"):
        parse_attributes("")
    with pytest.raises(DataError, match="no rows"):
        parse_attributes("GEOID,damage\n")


def test_attributes_thousands_separator():
    t = parse_attributes('GEOID,pop\n1,"22,567"\n')
    assert t.column("pop")[0] == 22567.0


def test_join_reports_orphans():
    rs = parse_geometry(collection(feature("1", square(0, 0)), feature("2", square(1, 0))))
    t = parse_attributes("GEOID,damage\n1,3\n9,4\n")
    with pytest.raises(DataError) as exc:
        t.join(rs)
    assert "9" in str(exc.value) and "2" in str(exc.value)


def test_join_reorders_to_regions():
    rs = parse_geometry(collection(feature("1", square(0, 0)), feature("2", square(1, 0))))
    t = parse_attributes("GEOID,v\n2,20\n1,10\n").join(rs)
    assert list(t.column("v")) == [10.0, 20.0]


def test_hierarchy_prefix():
    parents = parse_geometry(collection(feature("48201100001", square(0, 0, 2))))
    kids = parse_geometry(collection(feature("482011000011", square(0, 0))))
    h = build_hierarchy(kids, parents)
    assert h.parent_of == {"482011000011": "48201100001"}
    assert h.method["482011000011"] == "prefix"


def test_hierarchy_containment_fallback():
    parents = parse_geometry(collection(feature("P1", square(0, 0, 2)), feature("P2", square(2, 0, 2))))
    kids = parse_geometry(collection(feature("child-x", square(2.5, 0.5))))
    h = build_hierarchy(kids, parents)
    assert h.parent_of == {"child-x": "P2"} and h.method["child-x"] == "containment"


def test_hierarchy_unmapped():
    parents = parse_geometry(collection(feature("P1", square(0, 0))))
    kids = parse_geometry(collection(feature("zz", square(10, 10))))
    with pytest.raises(DataError, match="no parent"):
        build_hierarchy(kids, parents)


def test_prefix_and_containment_agree_on_nested_grid():
    parents, kids = make_nested_lattices(4, 5, split=2)
    by_prefix = build_hierarchy(kids, parents)
    renamed = parse_geometry(collection(*[feature(f"c{k}", r.geometry[0]) for k, r in enumerate(kids)]))
    by_point = build_hierarchy(renamed, parents)
    assert all(m == "containment" for m in by_point.method.values())
    assert [by_prefix.parent_of[k.id] for k in kids] == [by_point.parent_of[f"c{k}"] for k in range(len(kids))]
    assert all(r == pytest.approx(1.0) for r in by_prefix.area_ratio.values())


def test_representative_point_nonconvex():
    # U shape: centroid falls in the notch
    u = (((0, 0), (3, 0), (3, 3), (2, 3), (2, 1), (1, 1), (1, 3), (0, 3), (0, 0)),)
    pt = representative_point((u,))
    assert point_in_polygon(pt, (u,))
    assert polygon_area((u,)) == 7.0
