import numpy as np
import pytest

from crowdbias import synth
from crowdbias.esda import global_moran
from crowdbias.geo_ingest import parse_attributes, parse_geometry
from crowdbias.transform import parse_reports
from crowdbias.weights import build_contiguity, row_standardize


def test_lattice_layout():
    rs = synth.make_lattice(synth.LatticeSpec(3, 4, 2.0))
    assert len(rs) == 12 and rs.ids[5] == "r1c1"
    assert np.all(rs.areas == 4.0)
    with pytest.raises(ValueError):
        synth.LatticeSpec(1, 3)


def test_nested_ids_and_areas():
    parents, kids = synth.make_nested_lattices(2, 3, split=2)
    assert len(kids) == 24
    assert all(k.id[:-1] in parents.ids for k in kids)
    assert kids.areas.sum() == pytest.approx(parents.areas.sum())


def test_block_indices():
    spec = synth.LatticeSpec(5, 5)
    assert synth.block_indices(spec, 1, 2, 2, 2) == [7, 8, 12, 13]


def test_sar_rho_zero_is_noise():
    w = build_contiguity(synth.make_lattice(synth.LatticeSpec(5, 5)), "rook")
    x = synth.sar_field(w, 0.0, 9).values
    assert np.allclose(x, np.random.default_rng(9).standard_normal(25), atol=1e-14)


def test_sar_monotone_small():
    w = row_standardize(build_contiguity(synth.make_lattice(synth.LatticeSpec(15, 15)), "rook"))
    means = [np.mean([global_moran(synth.sar_field(w, rho, s), w, 0).I for s in range(10)]) for rho in (0.0, 0.4, 0.8)]
    assert means[0] < means[1] < means[2]


def test_sar_rejects_bad_rho():
    w = build_contiguity(synth.make_lattice(synth.LatticeSpec(2, 2)), "rook")
    with pytest.raises(ValueError):
        synth.sar_field(w, 1.0, 0)


def test_scenario_validation():
    with pytest.raises(ValueError, match="disjoint"):
        synth.BiasScenario(patches=(synth.Patch([1, 2], "LH"), synth.Patch([2, 3], "HL")))
    with pytest.raises(ValueError):
        synth.Patch([1], "XX")
    with pytest.raises(ValueError):
        synth.BiasScenario(access=(1.5,))


def test_patches_injected():
    spec = synth.LatticeSpec(10, 10)
    regions = synth.make_lattice(spec)
    lh, hl = synth.block_indices(spec, 0, 0, 3, 3), synth.block_indices(spec, 6, 6, 3, 3)
    data = synth.generate_reports(
        synth.BiasScenario(seed=2, patches=(synth.Patch(lh, "LH", {"Minority%": 0.3}), synth.Patch(hl, "HL"))), regions
    )
    assert all(data.counts[hl] == 0) and all(data.access[hl] == 0)
    assert data.counts[lh].mean() > data.counts.mean()
    assert data.damage[lh].max() <= np.median(data.damage)
    assert data.labels[lh[0]] == "LH" and data.labels[hl[0]] == "HL" and data.labels[50] == ""
    assert len(data.reports) == data.counts.sum()
    for name, v in data.traits.items():
        assert v.min() >= 0 and v.max() <= 1, name


def test_generation_deterministic():
    regions = synth.make_lattice(synth.LatticeSpec(6, 6))
    sc = synth.BiasScenario(seed=4, categories={"A": 1, "B": 2}, category_rho=0.5)
    a, b = synth.generate_reports(sc, regions), synth.generate_reports(sc, regions)
    assert a.reports == b.reports
    assert np.array_equal(a.category_counts["B"] + a.category_counts["A"], a.counts)


def test_fixture_round_trip(tmp_path):
    regions = synth.make_lattice(synth.LatticeSpec(4, 5))
    data = synth.generate_reports(synth.BiasScenario(seed=1), regions)
    paths = synth.write_fixture(tmp_path, regions, data)
    back = parse_geometry(paths["geometry"])
    assert back.ids == regions.ids
    table = parse_attributes(paths["attributes"]).join(back)
    assert np.array_equal(table.column("FEMA damage"), data.damage)
    assert len(parse_reports(paths["reports"])) == len(data.reports)
