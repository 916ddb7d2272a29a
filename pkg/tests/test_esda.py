import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdbias.errors import DataError, DegenerateError
from crowdbias.esda import (
    BivariateCluster,
    Cluster,
    bilisa,
    classify_cluster,
    global_moran,
    lisa,
    pseudo_p_value,
    write_local_csv,
)
from crowdbias.synth import LatticeSpec, make_lattice
from crowdbias.weights import build_contiguity, from_edge_list, row_standardize

from conftest import grid_edges, literal_moran, random_symmetric_weights


def test_checkerboard_is_minus_one():
    x = [(-1.0) ** (i + j) for i in range(4) for j in range(4)]
    w = from_edge_list(16, grid_edges(4, 4))
    assert global_moran(x, w, permutations=0).I == pytest.approx(-1.0, abs=1e-12)


def test_chain_is_zero():
    r = global_moran([1.0, 2.0, 3.0], from_edge_list(3, [(0, 1), (1, 2)]), permutations=0)
    assert abs(r.I) <= 1e-12
    assert r.expected == -0.5


@pytest.mark.parametrize("seed", range(10))
def test_matches_literal_formula(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 25))
    w = random_symmetric_weights(rng, n, 0.4)
    if w.s0 == 0:
        pytest.skip("no edges drawn")
    x = rng.normal(size=n)
    for ww in (w, row_standardize(w)):
        ref = literal_moran(list(x), ww.dense().tolist())
        assert global_moran(x, ww, permutations=0).I == pytest.approx(ref, abs=1e-12)


def test_decomposition_identity(rng):
    w = build_contiguity(make_lattice(LatticeSpec(6, 7)), "queen")
    for ww in (w, row_standardize(w)):
        x = rng.gamma(2.0, size=w.n)
        loc = lisa(x, ww, permutations=9, seed=1)
        g = global_moran(x, ww, permutations=0)
        assert loc.Is.sum() == pytest.approx(ww.s0 * g.I, abs=1e-10)
        assert loc.global_I == pytest.approx(g.I, abs=1e-12)


def test_degenerate_and_bad_inputs():
    w = from_edge_list(3, [(0, 1), (1, 2)])
    with pytest.raises(DegenerateError):
        global_moran([2.0, 2.0, 2.0], w)
    with pytest.raises(DegenerateError):
        lisa([2.0, 2.0, 2.0], w)
    with pytest.raises(DataError, match="length mismatch"):
        global_moran([1.0, 2.0], w)
    with pytest.raises(DataError, match="missing"):
        global_moran([1.0, np.nan, 2.0], w)
    with pytest.raises(DegenerateError, match="islands"):
        global_moran([1.0, 2.0, 3.0], from_edge_list(3, []))


def test_pseudo_p_bounds_and_ties():
    sims = np.array([0.0, 1.0, 2.0, 3.0])
    assert pseudo_p_value(10.0, sims) == pytest.approx(1 / 5)
    assert pseudo_p_value(3.0, sims) == pytest.approx(2 / 5)
    assert pseudo_p_value(-5.0, sims) == pytest.approx(1 / 5)
    # a tie up to rounding counts as extreme
    assert pseudo_p_value(3.0 - 1e-15, sims) == pytest.approx(2 / 5)


def test_global_permutation_deterministic():
    rng = np.random.default_rng(3)
    w = from_edge_list(25, grid_edges(5, 5))
    x = rng.normal(size=25)
    a = global_moran(x, w, permutations=199, seed=5)
    b = global_moran(x, w, permutations=199, seed=5)
    c = global_moran(x, w, permutations=199, seed=6)
    assert a.pseudo_p == b.pseudo_p and np.array_equal(a.sim, b.sim)
    assert not np.array_equal(a.sim, c.sim)
    assert 1 / 200 <= a.pseudo_p <= 1


def test_permutation_mean_near_expectation():
    rng = np.random.default_rng(4)
    w = from_edge_list(100, grid_edges(10, 10))
    r = global_moran(rng.normal(size=100), w, permutations=2000, seed=0)
    assert r.sim_mean == pytest.approx(r.expected, abs=0.01)


def test_lisa_workers_identical():
    rng = np.random.default_rng(8)
    w = row_standardize(from_edge_list(64, grid_edges(8, 8, diagonal=True)))
    x = rng.normal(size=64)
    one = lisa(x, w, permutations=199, seed=2, workers=1)
    four = lisa(x, w, permutations=199, seed=2, workers=4)
    assert np.array_equal(one.pseudo_p, four.pseudo_p)
    assert one.clusters == four.clusters


def test_lisa_islands():
    w = from_edge_list(5, [(0, 1), (1, 2), (2, 3)])
    r = lisa([1.0, 2.0, 5.0, 3.0, 9.0], w, permutations=99)
    assert r.clusters[4] is Cluster.island
    assert np.isnan(r.pseudo_p[4]) and r.Is[4] == 0.0


def test_hot_block_is_high_high():
    spec = LatticeSpec(12, 12)
    w = row_standardize(build_contiguity(make_lattice(spec), "queen"))
    x = np.zeros(144)
    x[[i * 12 + j for i in range(4) for j in range(4)]] = 10.0
    x += np.random.default_rng(0).normal(scale=0.1, size=144)
    r = lisa(x, w, permutations=999, seed=0)
    assert r.clusters[1 * 12 + 1] is Cluster.HH


def test_classify_cluster():
    assert classify_cluster(1.0, 1.0, 0.01) is Cluster.HH
    assert classify_cluster(-1.0, -1.0, 0.01) is Cluster.LL
    assert classify_cluster(1.0, -1.0, 0.01) is Cluster.HL
    assert classify_cluster(-1.0, 1.0, 0.01) is Cluster.LH
    assert classify_cluster(1.0, 1.0, 0.2) is Cluster.not_significant
    assert classify_cluster(0.0, 1.0, 0.01) is Cluster.not_significant
    assert classify_cluster(1.0, 1.0, 0.05) is Cluster.HH


@pytest.mark.parametrize("seed", range(5))
def test_bilisa_collapses_to_lisa(seed):
    rng = np.random.default_rng(seed)
    w = row_standardize(from_edge_list(36, grid_edges(6, 6)))
    x = rng.normal(size=36)
    a, b = lisa(x, w, permutations=99, seed=seed), bilisa(x, x, w, permutations=99, seed=seed)
    assert np.max(np.abs(a.Is - b.Is)) <= 1e-12
    assert np.array_equal(a.pseudo_p, b.pseudo_p)
    assert b.quadrants == a.clusters
    assert b.global_IB == pytest.approx(global_moran(x, w, permutations=0).I, abs=1e-12)


def test_bilisa_imbalance_labels():
    w = row_standardize(from_edge_list(100, grid_edges(10, 10)))
    rng = np.random.default_rng(1)
    damage = rng.normal(size=100)
    reports = rng.normal(size=100)
    block = [i * 10 + j for i in range(4) for j in range(4)]
    damage[block] -= 4
    reports[block] += 4
    r = bilisa(damage, reports, w, permutations=999, seed=0)
    assert r.clusters[11] is BivariateCluster.low_x_high_lagy
    assert r.quadrants[11] is Cluster.LH


def test_write_local_csv(tmp_path):
    w = from_edge_list(4, [(0, 1), (1, 2)])
    r = lisa([1.0, 3.0, 2.0, 8.0], w, permutations=9)
    path = tmp_path / "l.csv"
    write_local_csv(r, ["a", "b", "c", "d"], path)
    raw = path.read_bytes()
    assert raw.startswith(b"id,stat,pseudo_p,cluster\r\n")
    assert raw.rstrip().endswith(b"d,0.0,,island")


@settings(max_examples=40, deadline=None)
@given(
    st.integers(3, 6),
    st.integers(3, 6),
    st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=36, max_size=36),
    st.floats(0.1, 100.0),
    st.floats(-100.0, 100.0),
)
def test_moran_affine_invariant(rows, cols, vals, a, b):
    n = rows * cols
    x = np.array(vals[:n])
    if np.ptp(x) < 1e-3 * max(1.0, np.abs(x).max()):
        return
    w = from_edge_list(n, grid_edges(rows, cols))
    i1 = global_moran(x, w, permutations=0).I
    i2 = global_moran(a * x + b, w, permutations=0).I
    assert i2 == pytest.approx(i1, abs=1e-9)
    assert -1.0 - 1e-9 <= global_moran(x, row_standardize(w), permutations=0).I <= 1.0 + 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.integers(5, 20))
def test_decomposition_property(seed, n):
    rng = np.random.default_rng(seed)
    w = random_symmetric_weights(rng, n, 0.35)
    x = rng.normal(size=n)
    if w.s0 == 0:
        return
    r = lisa(x, w, permutations=1, seed=0)
    assert r.Is.sum() == pytest.approx(w.s0 * global_moran(x, w, permutations=0).I, abs=1e-10)
    assert np.all((r.pseudo_p[~np.isnan(r.pseudo_p)] > 0) & (r.pseudo_p[~np.isnan(r.pseudo_p)] <= 1))


def test_null_rejection_rate_is_twice_alpha():
    # p is taken on the observed side, so each tail contributes alpha under the null
    w = from_edge_list(100, grid_edges(10, 10))
    ps = np.array([
        global_moran(np.random.default_rng([9, t]).uniform(size=100), w, permutations=199, seed=t).pseudo_p
        for t in range(1500)
    ])
    assert 0.075 <= np.mean(ps <= 0.05) <= 0.125
    assert 0.035 <= np.mean(ps <= 0.025) <= 0.065
