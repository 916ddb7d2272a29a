import numpy as np
import pytest

from crowdbias.synth import LatticeSpec, make_lattice
from crowdbias.weights import (
    Scheme,
    build_contiguity,
    from_edge_list,
    read_adjacency,
    row_standardize,
    write_adjacency,
)
from crowdbias.geo_ingest import parse_geometry

from conftest import collection, feature, grid_edges, square


def test_rook_2x2():
    w = build_contiguity(make_lattice(LatticeSpec(2, 2)), "rook")
    assert list(w.cardinalities) == [2, 2, 2, 2]
    assert w.s0 == 8


def test_queen_2x2():
    w = build_contiguity(make_lattice(LatticeSpec(2, 2)), "queen")
    assert list(w.cardinalities) == [3, 3, 3, 3]
    assert w.s0 == 12


def test_disjoint_islands():
    rs = parse_geometry(collection(feature("a", square(0, 0)), feature("b", square(11, 0))))
    w = build_contiguity(rs)
    assert w.islands == [0, 1] and w.s0 == 0


def test_snap_absorbs_noise():
    rs = parse_geometry(collection(feature("a", square(0, 0)), feature("b", square(1.0000001, 0))))
    assert build_contiguity(rs, "rook").islands == [0, 1]
    w = build_contiguity(rs, "rook", snap=1e-3)
    assert w.neighbor_ids(0) == [1]


@pytest.mark.parametrize("rows, cols", [(2, 2), (3, 5), (6, 4)])
def test_lattice_matches_index_arithmetic(rows, cols):
    regions = make_lattice(LatticeSpec(rows, cols))
    for rule, diag in (("rook", False), ("queen", True)):
        w = build_contiguity(regions, rule)
        ref = from_edge_list(rows * cols, grid_edges(rows, cols, diag))
        assert np.array_equal(w.dense(), ref.dense())
        assert w.is_symmetric()
        assert w.s0 == 2 * len(grid_edges(rows, cols, diag))


def test_queen_contains_rook():
    regions = make_lattice(LatticeSpec(5, 7))
    q, r = build_contiguity(regions, "queen"), build_contiguity(regions, "rook")
    for i in range(q.n):
        assert set(r.neighbor_ids(i)) <= set(q.neighbor_ids(i))


def test_row_standardize_values():
    w = row_standardize(from_edge_list(5, [(0, 1), (0, 2), (0, 3), (0, 4)]))
    assert [wt for _, wt in w.neighbors[0]] == [0.25] * 4


def test_row_standardize_island_and_chain():
    w = row_standardize(from_edge_list(4, [(0, 1), (1, 2)]))
    assert w.neighbors[3] == ()
    assert w.islands == [3]
    assert w.s0 == pytest.approx(3.0, abs=1e-12)
    for i in range(3):
        assert sum(wt for _, wt in w.neighbors[i]) == pytest.approx(1.0, abs=1e-12)
    assert w.scheme is Scheme.row_standardized


def test_from_edge_list():
    w = from_edge_list(3, [(0, 1), (1, 2)])
    assert w.s0 == 4
    assert w.is_symmetric()
    with pytest.raises(ValueError, match="self-loop"):
        from_edge_list(2, [(0, 0)])
    with pytest.raises(ValueError, match="out of range"):
        from_edge_list(2, [(0, 2)])
    assert from_edge_list(4, []).islands == [0, 1, 2, 3]


def test_adjacency_roundtrip_bit_exact(tmp_path):
    w = row_standardize(build_contiguity(make_lattice(LatticeSpec(3, 4)), "queen"))
    path = tmp_path / "w.txt"
    write_adjacency(w, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "12"
    back = read_adjacency(path)
    assert back.neighbors == w.neighbors
    assert back.scheme is Scheme.row_standardized
