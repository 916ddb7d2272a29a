"""Global Moran's I, local Moran (LISA) and bivariate local Moran.

Inference is permutation based. The global statistic uses full random
permutations of the attribute; local statistics use conditional permutation
(hold the value at ``i`` fixed, draw its neighbors from the other n-1 values).

Every region draws from its own random stream keyed on ``(seed, region)``, so
results do not depend on how work is split across threads.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DataError, DegenerateError

__all__ = [
    "PERMUTATIONS",
    "ALPHA",
    "Cluster",
    "BivariateCluster",
    "AttributeVector",
    "MoranResult",
    "LisaResult",
    "BivariateResult",
    "global_moran",
    "lisa",
    "bilisa",
    "classify_cluster",
    "pseudo_p_value",
    "write_local_csv",
]

PERMUTATIONS = 999
ALPHA = 0.05

_GLOBAL_STREAM = 1
_LOCAL_STREAM = 2
_BIVARIATE_GLOBAL_STREAM = 3
_CHUNK = 256


class Cluster(str, Enum):
    HH = "HH"
    LL = "LL"
    HL = "HL"
    LH = "LH"
    not_significant = "not_significant"
    island = "island"


class BivariateCluster(str, Enum):
    high_x_high_lagy = "high_x_high_lagy"
    low_x_low_lagy = "low_x_low_lagy"
    high_x_low_lagy = "high_x_low_lagy"
    low_x_high_lagy = "low_x_high_lagy"
    not_significant = "not_significant"
    island = "island"

    @property
    def quadrant(self):
        """The HH/LL/HL/LH code of this class (``None`` for the other two)."""
        return _BV_TO_QUADRANT.get(self)


_BV_FROM_QUADRANT = {
    Cluster.HH: BivariateCluster.high_x_high_lagy,
    Cluster.LL: BivariateCluster.low_x_low_lagy,
    Cluster.HL: BivariateCluster.high_x_low_lagy,
    Cluster.LH: BivariateCluster.low_x_high_lagy,
    Cluster.not_significant: BivariateCluster.not_significant,
    Cluster.island: BivariateCluster.island,
}
_BV_TO_QUADRANT = {v: k for k, v in _BV_FROM_QUADRANT.items() if k in (Cluster.HH, Cluster.LL, Cluster.HL, Cluster.LH)}


@dataclass(frozen=True)
class AttributeVector:
    """Index-aligned values with their deviations from the mean."""

    values: np.ndarray
    name: str = "x"

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        if arr.ndim != 1:
            raise DataError(f"{self.name}: expected a 1-D vector")
        if np.isnan(arr).any():
            raise DataError(f"{self.name}: missing values at indices {np.flatnonzero(np.isnan(arr))[:10].tolist()}")
        if not np.isfinite(arr).all():
            raise DataError(f"{self.name}: non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def n(self):
        return self.values.size

    @property
    def mean(self):
        return float(self.values.mean())

    @property
    def z(self):
        return self.values - self.values.mean()

    @property
    def m2(self):
        z = self.z
        return float(z @ z) / self.n

    def check_variance(self):
        if self.n == 0 or np.ptp(self.values) == 0:
            raise DegenerateError(f"{self.name}: degenerate variance (all values equal)")


def _as_vector(x, name):
    return x if isinstance(x, AttributeVector) else AttributeVector(x, name)


@dataclass(frozen=True)
class MoranResult:
    I: float
    expected: float
    pseudo_p: float | None
    permutations: int
    seed: int
    n: int
    s0: float
    scheme: str
    sim: np.ndarray | None = field(default=None, repr=False)

    @property
    def sim_mean(self):
        return None if self.sim is None else float(self.sim.mean())


@dataclass(frozen=True)
class LisaResult:
    Is: np.ndarray
    pseudo_p: np.ndarray  # NaN on islands
    clusters: tuple
    z: np.ndarray = field(repr=False)
    lag: np.ndarray = field(repr=False)
    alpha: float = ALPHA
    permutations: int = PERMUTATIONS
    seed: int = 0
    s0: float = 0.0
    islands: tuple = ()

    @property
    def n(self):
        return self.Is.size

    @property
    def global_I(self):
        return float(self.Is.sum() / self.s0)

    @property
    def significant(self):
        return np.array([c not in (Cluster.not_significant, Cluster.island) for c in self.clusters])

    def counts(self):
        return {c.value: sum(1 for k in self.clusters if k is c) for c in Cluster}


@dataclass(frozen=True)
class BivariateResult:
    Is: np.ndarray
    pseudo_p: np.ndarray
    clusters: tuple
    global_IB: float
    global_pseudo_p: float | None
    z_x: np.ndarray = field(repr=False)
    lag_y: np.ndarray = field(repr=False)
    alpha: float = ALPHA
    permutations: int = PERMUTATIONS
    seed: int = 0
    s0: float = 0.0
    islands: tuple = ()

    @property
    def n(self):
        return self.Is.size

    @property
    def quadrants(self):
        """Clusters expressed as HH/LL/HL/LH (or not_significant / island)."""
        return tuple(c.quadrant or Cluster(c.value) for c in self.clusters)

    @property
    def significant(self):
        return np.array([c.quadrant is not None for c in self.clusters])

    def counts(self):
        return {c.value: sum(1 for k in self.clusters if k is c) for c in BivariateCluster}


def _rng(seed, *key):
    ss = np.random.SeedSequence(entropy=int(seed) & (2**128 - 1), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def pseudo_p_value(observed, sims):
    """One-sided pseudo p-value on the observed side of the reference distribution.

    ``sims`` has permutations along its last axis. When the observed value
    is at or above the permutation mean the count is of simulations at or
    above it, otherwise at or below. Ties within a few ulps count as extreme.
    """
    sims = np.asarray(sims, dtype=float)
    observed = np.asarray(observed, dtype=float)
    P = sims.shape[-1]
    scale = np.maximum(np.abs(observed), np.abs(sims).max(axis=-1, initial=0.0))
    tol = 64 * np.finfo(float).eps * scale
    upper = observed >= sims.mean(axis=-1)
    above = (sims >= (observed - tol)[..., None]).sum(axis=-1)
    below = (sims <= (observed + tol)[..., None]).sum(axis=-1)
    count = np.where(upper, above, below)
    return (count + 1.0) / (P + 1.0)


def _global_sims(zx, zy, w, permutations, rng):
    """Cross-products sum_i zx_i (W zy_perm)_i for ``permutations`` shuffles of zy.

    With ``zx is None`` both sides are permuted together (univariate Moran).
    """
    out = np.empty(permutations)
    n = zy.size
    done = 0
    while done < permutations:
        c = min(_CHUNK, permutations - done)
        Z = rng.permuted(np.broadcast_to(zy, (c, n)), axis=1)
        lagZ = (w.sparse @ Z.T).T
        if zx is None:
            out[done:done + c] = np.einsum("ij,ij->i", Z, lagZ)
        else:
            out[done:done + c] = lagZ @ zx
        done += c
    return out


def global_moran(x, w, permutations=PERMUTATIONS, seed=0):
    """Global Moran's I with a permutation pseudo p-value.

    Parameters
    ----------
    x : array-like or AttributeVector
        Values index-aligned with the weights.
    w : WeightMatrix
    permutations : int
        Number of random permutations; 0 computes the statistic only.
    seed : int
        Master seed.

    Returns
    -------
    MoranResult
    """
    x = _as_vector(x, "x")
    n = x.n
    if n != w.n:
        raise DataError(f"length mismatch: x has {n} values, weights have {w.n} regions")
    if n < 3:
        raise DataError("global Moran's I needs at least 3 regions")
    x.check_variance()
    s0 = w.s0
    if s0 == 0:
        raise DegenerateError("all regions are islands (S0 == 0)")
    if permutations < 0:
        raise ValueError("permutations must be >= 0")
    z = x.z
    ss = float(z @ z)
    scale = n / (s0 * ss)
    I = float(z @ w.lag(z)) * scale
    p = None
    sim = None
    if permutations:
        sim = _global_sims(None, z, w, permutations, _rng(seed, _GLOBAL_STREAM)) * scale
        p = float(pseudo_p_value(I, sim))
    return MoranResult(
        I=I, expected=-1.0 / (n - 1), pseudo_p=p, permutations=permutations, seed=seed,
        n=n, s0=s0, scheme=w.scheme.value, sim=sim,
    )


def _draw_subsets(rng, m, k, P):
    """``P`` uniform k-subsets (as rows) of range(m), sampled without replacement."""
    if k == 0:
        return np.empty((P, 0), dtype=np.int64)
    if 4 * k > m:
        return np.argsort(rng.random((P, m)), axis=1)[:, :k]
    idx = rng.integers(0, m, size=(P, k))
    while True:
        s = np.sort(idx, axis=1)
        bad = (s[:, 1:] == s[:, :-1]).any(axis=1)
        nbad = int(bad.sum())
        if not nbad:
            return idx
        idx[bad] = rng.integers(0, m, size=(nbad, k))


def _local_block(indices, zx, zy, w, permutations, seed):
    n = zy.size
    lag = w.lag(zy)
    p = np.full(len(indices), np.nan)
    for out_pos, i in enumerate(indices):
        nbrs = w.neighbors[i]
        k = len(nbrs)
        if k == 0:
            continue
        wts = np.fromiter((wt for _, wt in nbrs), dtype=float, count=k)
        draws = _draw_subsets(_rng(seed, _LOCAL_STREAM, i), n - 1, k, permutations)
        draws += draws >= i  # skip the region's own value
        lag_sim = zy[draws] @ wts
        # z_x,i / m2 is a common positive or negative factor; compare raw products
        p[out_pos] = pseudo_p_value(zx[i] * lag[i], zx[i] * lag_sim)
    return p


def _local_pvalues(zx, zy, w, permutations, seed, workers):
    n = zy.size
    if workers is None or workers <= 1:
        return _local_block(range(n), zx, zy, w, permutations, seed)
    chunks = [list(range(n))[k::workers] for k in range(workers)]
    p = np.full(n, np.nan)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for chunk, part in zip(chunks, pool.map(lambda c: _local_block(c, zx, zy, w, permutations, seed), chunks)):
            p[chunk] = part
    return p


def classify_cluster(z_own, lag, pseudo_p, alpha=ALPHA):
    """Quadrant label gated by significance.

    Exact zeros in either the own deviation or the lag give ``not_significant``.
    """
    if pseudo_p is None or math.isnan(pseudo_p) or pseudo_p > alpha:
        return Cluster.not_significant
    if z_own == 0 or lag == 0:
        return Cluster.not_significant
    if z_own > 0:
        return Cluster.HH if lag > 0 else Cluster.HL
    return Cluster.LL if lag < 0 else Cluster.LH


def _check_local_args(permutations, alpha):
    if permutations < 1:
        raise ValueError("local statistics need permutations >= 1")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")


def lisa(x, w, permutations=PERMUTATIONS, seed=0, alpha=ALPHA, workers=1):
    """Local Moran's I with conditional-permutation pseudo p-values.

    ``I_i = (z_i / m2) * sum_j w_ij z_j`` with ``m2 = sum z^2 / n``. Islands
    get ``I_i = 0``, no p-value and the ``island`` class.
    """
    x = _as_vector(x, "x")
    if x.n != w.n:
        raise DataError(f"length mismatch: x has {x.n} values, weights have {w.n} regions")
    x.check_variance()
    _check_local_args(permutations, alpha)
    z = x.z
    m2 = x.m2
    lag = w.lag(z)
    Is = z * lag / m2
    p = _local_pvalues(z, z, w, permutations, seed, workers)
    islands = set(w.islands)
    clusters = tuple(
        Cluster.island if i in islands else classify_cluster(z[i], lag[i], p[i], alpha) for i in range(x.n)
    )
    return LisaResult(
        Is=Is, pseudo_p=p, clusters=clusters, z=z, lag=lag, alpha=alpha, permutations=permutations,
        seed=seed, s0=w.s0, islands=tuple(sorted(islands)),
    )


def bilisa(x, y, w, permutations=PERMUTATIONS, seed=0, alpha=ALPHA, workers=1):
    """Bivariate local Moran: ``x`` at a region against the spatial lag of ``y``.

    ``I_i^B = (zx_i / m2x) * sum_j w_ij zy_j``; the global value is
    ``sum_i I_i^B / S0``, which equals Moran's I when ``y`` is ``x``.
    Local pseudo p-values permute ``y`` over the neighbors with ``x`` held.
    """
    x = _as_vector(x, "x")
    y = _as_vector(y, "y")
    if x.n != y.n:
        raise DataError(f"length mismatch: x has {x.n} values, y has {y.n}")
    if x.n != w.n:
        raise DataError(f"length mismatch: x has {x.n} values, weights have {w.n} regions")
    x.check_variance()
    y.check_variance()
    _check_local_args(permutations, alpha)
    s0 = w.s0
    if s0 == 0:
        raise DegenerateError("all regions are islands (S0 == 0)")
    zx, zy = x.z, y.z
    m2x = x.m2
    lag = w.lag(zy)
    Is = zx * lag / m2x
    global_IB = float(Is.sum() / s0)
    sims = _global_sims(zx, zy, w, permutations, _rng(seed, _BIVARIATE_GLOBAL_STREAM)) / (m2x * s0)
    global_p = float(pseudo_p_value(global_IB, sims))
    p = _local_pvalues(zx, zy, w, permutations, seed, workers)
    islands = set(w.islands)
    clusters = tuple(
        BivariateCluster.island if i in islands else _BV_FROM_QUADRANT[classify_cluster(zx[i], lag[i], p[i], alpha)]
        for i in range(x.n)
    )
    return BivariateResult(
        Is=Is, pseudo_p=p, clusters=clusters, global_IB=global_IB, global_pseudo_p=global_p, z_x=zx,
        lag_y=lag, alpha=alpha, permutations=permutations, seed=seed, s0=s0, islands=tuple(sorted(islands)),
    )


def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


def write_local_csv(result, ids, path):
    """CSV with one row per region: id, stat, pseudo_p, cluster."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(["id", "stat", "pseudo_p", "cluster"])
        for rid, stat, p, c in zip(ids, result.Is, result.pseudo_p, result.clusters):
            writer.writerow([rid, _fmt(stat), _fmt(p), c.value])
