import numpy as np
import pytest

from crowdbias.geo_ingest import Region, RegionSet, polygon_area
from crowdbias.weights import from_edge_list


def square(x0, y0, size=1.0):
    return (((x0, y0), (x0 + size, y0), (x0 + size, y0 + size), (x0, y0 + size), (x0, y0)),)


def feature(rid, rings, gtype="Polygon", **props):
    coords = [[list(p) for p in ring] for ring in rings]
    if gtype == "MultiPolygon":
        coords = [coords]
    return {"type": "Feature", "properties": {"GEOID": rid, **props}, "geometry": {"type": gtype, "coordinates": coords}}


def collection(*features):
    return {"type": "FeatureCollection", "features": list(features)}


def grid_edges(rows, cols, diagonal=False):
    """Edge list of a rows x cols grid graph built by index arithmetic."""
    edges = []
    for i in range(rows):
        for j in range(cols):
            k = i * cols + j
            if j + 1 < cols:
                edges.append((k, k + 1))
            if i + 1 < rows:
                edges.append((k, k + cols))
            if diagonal and i + 1 < rows:
                if j + 1 < cols:
                    edges.append((k, k + cols + 1))
                if j > 0:
                    edges.append((k, k + cols - 1))
    return edges


def random_symmetric_weights(rng, n, density=0.3):
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < density]
    return from_edge_list(n, edges)


def literal_moran(x, W):
    """Direct double-loop transcription of the global Moran formula."""
    n = len(x)
    xbar = sum(x) / n
    z = [v - xbar for v in x]
    s0 = 0.0
    num = 0.0
    for i in range(n):
        for j in range(n):
            s0 += W[i][j]
            num += W[i][j] * z[i] * z[j]
    den = sum(v * v for v in z)
    return (n / s0) * num / den


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def synth_fixture(out_dir, seed=3, rows=12, cols=12, patch=3, permutations=199, categories=None, scenario=None, **config):
    """Single-level synthetic audit fixture; returns the config path.

    ``patch=0`` injects no imbalance patches; ``scenario`` passes extra
    :class:`BiasScenario` fields.
    """
    import json

    from crowdbias import synth
    from crowdbias.weights import build_contiguity

    spec = synth.LatticeSpec(rows, cols)
    regions = synth.make_lattice(spec)
    lh = synth.block_indices(spec, 1, 1, patch, patch)
    hl = synth.block_indices(spec, rows - patch - 1, cols - patch - 1, patch, patch)
    cats = categories or {"Flooding": 0.3, "Drainage": 0.4, "Storm Debris": 0.2, "Crisis Cleanup": 0.1}
    patches = (synth.Patch(lh, "LH", {"Minority%": 0.5}), synth.Patch(hl, "HL")) if patch else ()
    sc = synth.BiasScenario(seed=seed, patches=patches, categories=cats, **(scenario or {}))
    data = synth.generate_reports(sc, regions, build_contiguity(regions, "rook"))
    paths = synth.write_fixture(out_dir, regions, data)
    cfg = {
        "seed": seed,
        "permutations": permutations,
        "alpha": 0.05,
        "adjacency": "rook",
        "scheme": "binary",
        "levels": [{"name": "lattice", "geometry": paths["geometry"].name, "attributes": paths["attributes"].name}],
        "damage": {"column": "FEMA damage", "level": "lattice"},
        "reports": [{
            "name": "311", "path": paths["reports"].name, "denominator": "Housing units", "kind": "per_housing_unit",
            "filters": {"baseline": [next(iter(cats))], "expanded": list(cats)},
        }],
        "output": "audit",
    }
    cfg.update(config)
    path = out_dir / "config.json"
    path.write_text(json.dumps(cfg, indent=2))
    return path


def two_level_fixture(out_dir, seed=5, rows=6, cols=6, permutations=99):
    """Tract and block-group fixture: damage only at tract level, reports keyed by block group."""
    import json

    import numpy as np

    from crowdbias import synth
    from crowdbias.geo_ingest import build_hierarchy

    parents, kids = synth.make_nested_lattices(rows, cols, split=2)
    data = synth.generate_reports(synth.BiasScenario(seed=seed), kids)
    h = build_hierarchy(kids, parents)
    paths = synth.write_fixture(out_dir, kids, data, name="block_group", include_damage=False)
    kid_index = {c: k for k, c in enumerate(kids.ids)}
    groups = h.groups()
    agg = {
        "Population": [], "Housing units": [], "Road length": [], "FEMA damage": [],
        **{t: [] for t in data.traits},
    }
    for p in parents.ids:
        idx = [kid_index[c] for c in groups[p]]
        agg["Population"].append(data.population[idx].sum())
        agg["Housing units"].append(data.housing_units[idx].sum())
        agg["Road length"].append(data.road_length[idx].sum())
        agg["FEMA damage"].append(float(np.round(data.damage[idx].sum())))
        for t, v in data.traits.items():
            agg[t].append(v[idx].mean())
    from crowdbias.geo_ingest import regions_to_geojson, write_geojson

    write_geojson(regions_to_geojson(parents), out_dir / "tract.geojson")
    lines = ["GEOID," + ",".join(f'"{c}"' if "," in c else c for c in agg)]
    for k, p in enumerate(parents.ids):
        lines.append(p + "," + ",".join(repr(float(agg[c][k])) for c in agg))
    (out_dir / "tract_attributes.csv").write_text("\n".join(lines) + "\n")
    cfg = {
        "seed": seed,
        "permutations": permutations,
        "levels": [
            {"name": "tract", "geometry": "tract.geojson", "attributes": "tract_attributes.csv"},
            {"name": "block_group", "geometry": paths["geometry"].name, "attributes": paths["attributes"].name},
        ],
        "damage": {"column": "FEMA damage", "level": "tract"},
        "reports": [{"name": "waze", "path": paths["reports"].name, "denominator": "Road length", "kind": "per_road_length"}],
        "output": "out",
    }
    path = out_dir / "config.json"
    path.write_text(json.dumps(cfg, indent=2))
    return path, parents, kids, h, agg


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
