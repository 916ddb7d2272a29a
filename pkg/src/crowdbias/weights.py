"""Contiguity spatial weights (queen / rook) in binary and row-standardized form."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import DataError

__all__ = [
    "Scheme",
    "WeightMatrix",
    "build_contiguity",
    "row_standardize",
    "from_edge_list",
    "write_adjacency",
    "read_adjacency",
]


class Scheme(str, Enum):
    binary = "binary"
    row_standardized = "row_standardized"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"row": cls.row_standardized, "r": cls.row_standardized, "b": cls.binary}
        key = str(value).lower()
        return aliases[key] if key in aliases else cls(key)


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Sparse neighbor lists. ``neighbors[i]`` is a tuple of ``(j, w_ij)``."""

    n: int
    neighbors: tuple
    scheme: Scheme = Scheme.binary

    def __post_init__(self):
        if len(self.neighbors) != self.n:
            raise ValueError("neighbors length must equal n")
        rows, cols, vals = [], [], []
        for i, nbrs in enumerate(self.neighbors):
            for j, w in nbrs:
                rows.append(i)
                cols.append(j)
                vals.append(w)
        mat = sparse.csr_matrix(
            (np.asarray(vals, dtype=float), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
            shape=(self.n, self.n),
        )
        object.__setattr__(self, "_sparse", mat)

    @property
    def sparse(self):
        """CSR matrix view (read-only by convention)."""
        return self._sparse

    @property
    def s0(self):
        return math.fsum(w for nbrs in self.neighbors for _, w in nbrs)

    @property
    def islands(self):
        return [i for i, nbrs in enumerate(self.neighbors) if not nbrs]

    @property
    def cardinalities(self):
        return np.array([len(nbrs) for nbrs in self.neighbors], dtype=np.int64)

    def neighbor_ids(self, i):
        return [j for j, _ in self.neighbors[i]]

    def lag(self, z):
        """Spatial lag sum_j w_ij z_j; zero on islands."""
        return self._sparse @ np.asarray(z, dtype=float)

    def is_symmetric(self):
        sets = [set(self.neighbor_ids(i)) for i in range(self.n)]
        return all(i in sets[j] for i in range(self.n) for j in sets[i])

    def dense(self):
        return self._sparse.toarray()


def _snap(pt, snap):
    if snap <= 0:
        return pt
    return (round(pt[0] / snap), round(pt[1] / snap))


def _from_sets(sets):
    return WeightMatrix(
        n=len(sets),
        neighbors=tuple(tuple((j, 1.0) for j in sorted(s)) for s in sets),
        scheme=Scheme.binary,
    )


def build_contiguity(regions, rule="queen", snap=0.0):
    """Binary contiguity weights.

    Queen neighbors share at least one boundary vertex, rook neighbors share
    at least one boundary edge (identical endpoints, either direction).
    Vertices are compared after snapping to a grid of spacing ``snap``;
    ``snap=0`` means exact coordinate equality.
    """
    if rule not in ("queen", "rook"):
        raise ValueError(f"unknown contiguity rule {rule!r}")
    if len(regions) == 0:
        raise DataError("cannot build weights for an empty region set")
    owners = {}
    for i, region in enumerate(regions):
        keys = set()
        for poly in region.geometry:
            for ring in poly:
                pts = [_snap(p, snap) for p in ring]
                if rule == "queen":
                    keys.update(pts)
                else:
                    for a, b in zip(pts, pts[1:]):
                        if a != b:
                            keys.add((a, b) if a <= b else (b, a))
        for key in keys:
            owners.setdefault(key, []).append(i)

    sets = [set() for _ in range(len(regions))]
    for members in owners.values():
        if len(members) < 2:
            continue
        for a in members:
            for b in members:
                if a != b:
                    sets[a].add(b)
    return _from_sets(sets)


def row_standardize(w):
    """Divide each non-island row by its degree; islands stay empty."""
    if w.scheme is not Scheme.binary:
        raise ValueError("row_standardize expects a binary weight matrix")
    rows = []
    for nbrs in w.neighbors:
        k = len(nbrs)
        rows.append(tuple((j, wt / k) for j, wt in nbrs))
    return WeightMatrix(n=w.n, neighbors=tuple(rows), scheme=Scheme.row_standardized)


def from_edge_list(n, edges):
    """Binary weights from the symmetric closure of an undirected edge list."""
    sets = [set() for _ in range(n)]
    for i, j in edges:
        if i == j:
            raise ValueError(f"self-loop at index {i}")
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"edge ({i}, {j}) out of range for n={n}")
        sets[i].add(j)
        sets[j].add(i)
    return _from_sets(sets)


def transform(w, scheme):
    scheme = Scheme.parse(scheme)
    if scheme is w.scheme:
        return w
    if scheme is Scheme.row_standardized:
        return row_standardize(w)
    raise ValueError("cannot recover binary weights from a standardized matrix")


def write_adjacency(w, path):
    """Plain-text adjacency list: ``n`` on the first line, then ``i j w``.

    Weights use ``repr`` so the text round-trips bit-exactly.
    """
    lines = [str(w.n)]
    for i, nbrs in enumerate(w.neighbors):
        for j, wt in nbrs:
            lines.append(f"{i} {j} {wt!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_adjacency(path, scheme=None):
    lines = [ln.split() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines or len(lines[0]) != 1:
        raise DataError(f"{path}: adjacency file must start with a single count line")
    n = int(lines[0][0])
    rows = [[] for _ in range(n)]
    for parts in lines[1:]:
        if len(parts) != 3:
            raise DataError(f"{path}: malformed adjacency line {' '.join(parts)!r}")
        i, j, wt = int(parts[0]), int(parts[1]), float(parts[2])
        if i == j or not (0 <= i < n and 0 <= j < n):
            raise DataError(f"{path}: invalid entry {i} {j}")
        rows[i].append((j, wt))
    if scheme is None:
        all_one = all(wt == 1.0 for r in rows for _, wt in r)
        scheme = Scheme.binary if all_one else Scheme.row_standardized
    return WeightMatrix(n=n, neighbors=tuple(tuple(sorted(r)) for r in rows), scheme=Scheme.parse(scheme))
