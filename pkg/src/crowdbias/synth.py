"""Synthetic lattices, SAR random fields and bias-injected report generators.

These produce ground truth for end-to-end checks: a damage field with tunable
spatial autocorrelation, Poisson report counts thinned by an access
multiplier, and patches forced into known imbalance classes.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import identity
from scipy.sparse.linalg import spsolve

from .esda import AttributeVector
from .geo_ingest import Level, Region, RegionSet, polygon_area, regions_to_geojson, write_geojson
from .transform import ReportRow
from .weights import Scheme, build_contiguity, row_standardize

__all__ = [
    "LatticeSpec",
    "make_lattice",
    "make_nested_lattices",
    "block_indices",
    "sar_field",
    "TraitSpec",
    "Patch",
    "BiasScenario",
    "SyntheticData",
    "generate_reports",
    "write_fixture",
]


@dataclass(frozen=True)
class LatticeSpec:
    rows: int
    cols: int
    cell_size: float = 1.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or self.rows * self.cols < 4:
            raise ValueError("lattice needs rows * cols >= 4")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")


def _square(x0, y0, x1, y1):
    return (((x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)),)


def make_lattice(spec, level=Level.custom, id_fmt="r{i}c{j}"):
    """Row-major grid of square cells with ids ``r{i}c{j}``."""
    s = spec.cell_size
    regions = []
    for i in range(spec.rows):
        for j in range(spec.cols):
            geom = (_square(j * s, i * s, (j + 1) * s, (i + 1) * s),)
            rid = id_fmt.format(i=i, j=j, k=i * spec.cols + j)
            regions.append(Region(rid, geom, polygon_area(geom), {"GEOID": rid}))
    return RegionSet(regions, level)


def make_nested_lattices(rows, cols, split=2, cell_size=1.0, prefix="48201"):
    """Parent grid plus a child grid whose cells are exact sub-squares.

    Ids follow the census convention: parent ``prefix + 6 digits``, child
    = parent id + one digit, so the hierarchy resolves by prefix.
    """
    if not 1 <= split <= 3:
        raise ValueError("split must be 1, 2 or 3 so child suffixes stay one digit")
    parents = make_lattice(LatticeSpec(rows, cols, cell_size), Level.tract, id_fmt=prefix + "{k:06d}")
    sub = cell_size / split
    children = []
    for ci in range(rows * split):
        for cj in range(cols * split):
            pid = parents[(ci // split) * cols + cj // split].id
            digit = (ci % split) * split + cj % split + 1
            geom = (_square(cj * sub, ci * sub, (cj + 1) * sub, (ci + 1) * sub),)
            rid = f"{pid}{digit}"
            children.append(Region(rid, geom, polygon_area(geom), {"GEOID": rid}))
    return parents, RegionSet(children, Level.block_group)


def block_indices(spec, row0, col0, height, width):
    """Row-major indices of a rectangular block of cells."""
    return [i * spec.cols + j for i in range(row0, row0 + height) for j in range(col0, col0 + width)]


def sar_field(w, rho, seed):
    """Simultaneous autoregressive field ``(I - rho W)^-1 eps``, eps ~ N(0, 1)."""
    if not -1 < rho < 1:
        raise ValueError("rho must lie in (-1, 1)")
    if w.scheme is Scheme.binary:
        w = row_standardize(w)
    eps = np.random.default_rng(seed).standard_normal(w.n)
    A = (identity(w.n, format="csc") - rho * w.sparse.tocsc()).tocsc()
    x = spsolve(A, eps)
    return AttributeVector(np.asarray(x, dtype=float), "sar")


@dataclass(frozen=True)
class TraitSpec:
    name: str
    mean: float = 0.3
    scale: float = 0.08
    rho: float = 0.5
    lower: float = 0.0
    upper: float = 1.0


@dataclass(frozen=True)
class Patch:
    """Regions forced into an imbalance class.

    ``LH``: low damage, high reporting. ``HL``: high damage, no access so no
    reports.
    """

    indices: tuple
    kind: str
    trait_shift: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("LH", "HL"):
            raise ValueError("patch kind must be 'LH' or 'HL'")
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))


DEFAULT_TRAITS = (
    TraitSpec("Poverty%", 0.18, 0.06),
    TraitSpec("NOEDU%", 0.2, 0.06),
    TraitSpec("Single parent household%", 0.12, 0.04),
    TraitSpec("Minority%", 0.35, 0.08),
)


@dataclass(frozen=True)
class BiasScenario:
    seed: int = 0
    damage_rho: float = 0.6
    damage_mean: float = 4.0
    damage_noise: float = 1.0
    damage: tuple | None = None  # explicit per-region damage overrides the field
    report_rate: float = 3.0
    access: tuple | None = None  # per-region multiplier in [0, 1]; default 1
    patches: tuple = ()
    patch_intensity: float = 2.0
    traits: tuple = DEFAULT_TRAITS
    categories: dict = field(default_factory=lambda: {"Flooding": 1.0})
    category_rho: float = 0.0
    window: tuple = ("2019-09-19", "2019-09-21")
    population_mean: float = 2000.0

    def __post_init__(self):
        if self.access is not None and any(not 0.0 <= a <= 1.0 for a in self.access):
            raise ValueError("access multipliers must lie in [0, 1]")
        seen = set()
        for p in self.patches:
            if seen & set(p.indices):
                raise ValueError("patches must be disjoint")
            seen |= set(p.indices)


@dataclass(frozen=True)
class SyntheticData:
    damage: np.ndarray
    counts: np.ndarray
    access: np.ndarray
    labels: tuple  # per region: "LH", "HL" or "" (no injected imbalance)
    traits: dict  # name -> array
    population: np.ndarray
    housing_units: np.ndarray
    road_length: np.ndarray
    reports: tuple  # ReportRow objects
    category_counts: dict  # category -> per-region count array


def _category_split(rng, counts, cats, probs):
    """Split per-region counts across categories; ``probs`` is (n, k)."""
    out = np.zeros((counts.size, len(cats)), dtype=np.int64)
    for i, c in enumerate(counts):
        if c:
            out[i] = rng.multinomial(int(c), probs[i])
    return out


def generate_reports(scenario, regions, w=None):
    """Draw report counts and ground-truth imbalance labels.

    Counts are Poisson(report_rate * damage * access); inside ``LH`` patches
    damage is set to the field minimum and reports are drawn at
    ``patch_intensity`` times the 95th damage percentile; inside ``HL``
    patches damage is set high and access is 0.
    """
    n = len(regions)
    rng = np.random.default_rng(np.random.SeedSequence(scenario.seed, spawn_key=(7,)))
    if w is None:
        w = build_contiguity(regions, "rook")
    wr = row_standardize(w)
    seeds = np.random.SeedSequence(scenario.seed).generate_state(2 + len(scenario.traits) + len(scenario.categories))

    if scenario.damage is not None:
        damage = np.asarray(scenario.damage, dtype=float).copy()
    else:
        field_ = sar_field(wr, scenario.damage_rho, int(seeds[0])).values
        field_ = (field_ - field_.mean()) / field_.std()
        damage = np.clip(scenario.damage_mean + scenario.damage_noise * field_, 0.0, None)
    access = np.ones(n) if scenario.access is None else np.asarray(scenario.access, dtype=float).copy()
    counts = rng.poisson(scenario.report_rate * damage * access).astype(np.int64)

    traits = {}
    for k, ts in enumerate(scenario.traits):
        f = sar_field(wr, ts.rho, int(seeds[2 + k])).values
        f = (f - f.mean()) / f.std()
        traits[ts.name] = ts.mean + ts.scale * f

    labels = [""] * n
    high = float(np.quantile(damage, 0.95)) if damage.any() else 1.0
    low = float(damage.min())
    for patch in scenario.patches:
        idx = np.asarray(patch.indices)
        if patch.kind == "LH":
            damage[idx] = low
            counts[idx] = rng.poisson(scenario.report_rate * high * scenario.patch_intensity, size=idx.size)
        else:
            damage[idx] = high * scenario.patch_intensity
            access[idx] = 0.0
            counts[idx] = 0
        for name, shift in patch.trait_shift.items():
            traits[name][idx] += shift
        for i in idx:
            labels[i] = patch.kind
    lookup = {ts.name: ts for ts in scenario.traits}
    for name in traits:
        traits[name] = np.clip(traits[name], lookup[name].lower, lookup[name].upper)

    pop_rng = np.random.default_rng(int(seeds[1]))
    population = np.round(scenario.population_mean * pop_rng.uniform(0.7, 1.3, n))
    housing = np.round(population / 2.5)
    road = np.round(pop_rng.uniform(2.0, 4.0, n), 3)

    cats = list(scenario.categories)
    base = np.array([scenario.categories[c] for c in cats], dtype=float)
    base = base / base.sum()
    if scenario.category_rho > 0:
        logits = np.column_stack(
            [sar_field(wr, scenario.category_rho, int(seeds[2 + len(scenario.traits) + k])).values for k in range(len(cats))]
        )
        probs = base * np.exp(0.5 * logits)
        probs /= probs.sum(axis=1, keepdims=True)
    else:
        probs = np.broadcast_to(base, (n, len(cats)))
    split = _category_split(rng, counts, cats, probs)

    start = dt.date.fromisoformat(scenario.window[0])
    span = (dt.date.fromisoformat(scenario.window[1]) - start).days + 1
    rows = []
    for i, region in enumerate(regions):
        for c, cat in enumerate(cats):
            for _ in range(split[i, c]):
                day = start + dt.timedelta(days=int(rng.integers(span)))
                ts = dt.datetime(day.year, day.month, day.day, int(rng.integers(24)), int(rng.integers(60)))
                rows.append(ReportRow(region.id, cat, ts))

    return SyntheticData(
        damage=damage, counts=counts, access=access, labels=tuple(labels), traits=traits,
        population=population, housing_units=housing, road_length=road, reports=tuple(rows),
        category_counts={cat: split[:, c] for c, cat in enumerate(cats)},
    )


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_fixture(out_dir, regions, data, name="synthetic", extra_columns=None, include_damage=True):
    """Write geometry, attributes and reports in the formats the ingest reads.

    Returns a dict of the written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    geo = out / f"{name}.geojson"
    attrs = out / f"{name}_attributes.csv"
    reps = out / f"{name}_reports.csv"
    write_geojson(regions_to_geojson(regions), geo)

    header = ["GEOID", "Population", "Housing units", "Road length"]
    if include_damage:
        header.append("FEMA damage")
    header += list(data.traits)
    extra = extra_columns or {}
    header += list(extra)
    rows = []
    for i, r in enumerate(regions):
        row = [r.id, repr(float(data.population[i])), repr(float(data.housing_units[i])), repr(float(data.road_length[i]))]
        if include_damage:
            row.append(repr(float(data.damage[i])))
        row += [repr(float(v[i])) for v in data.traits.values()]
        row += [repr(float(v[i])) for v in extra.values()]
        rows.append(row)
    _write_csv(attrs, header, rows)
    _write_csv(reps, ["id", "category", "timestamp"], [[r.region_id, r.category, r.timestamp.isoformat()] for r in data.reports])
    return {"geometry": geo, "attributes": attrs, "reports": reps}


def write_config(path, config):
    Path(path).write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
