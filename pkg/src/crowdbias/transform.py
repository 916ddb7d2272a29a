"""Data shaping: category filters, rate and min-max normalization, area-weighted
disaggregation from parent to child regions, and descriptive statistics.

The audit applies these in a fixed order: category filter, rate normalization,
disaggregation (when a variable only exists at the coarser level), min-max.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DataError, DegenerateError

__all__ = [
    "RateKind",
    "CategoryFilter",
    "ReportRow",
    "CategoryCounts",
    "RateResult",
    "DescriptiveStats",
    "StatRow",
    "minmax_normalize",
    "rate_normalize",
    "disaggregate_by_area",
    "parse_reports",
    "filter_by_date",
    "apply_category_filter",
    "descriptive_stats",
]


class RateKind(str, Enum):
    per_housing_unit = "per_housing_unit"
    per_road_length = "per_road_length"
    custom = "custom"


def _norm_category(name):
    return " ".join(str(name).split()).casefold()


@dataclass(frozen=True)
class CategoryFilter:
    """Named set of report categories, matched case-insensitively after trimming."""

    label: str
    categories: frozenset | None  # None matches every category

    def __init__(self, label, categories):
        if categories is not None:
            categories = frozenset(_norm_category(c) for c in categories)
            if not categories or "" in categories:
                raise ValueError(f"category filter {label!r} needs at least one non-empty category")
        object.__setattr__(self, "label", label)
        object.__setattr__(self, "categories", categories)

    @classmethod
    def everything(cls, label):
        return cls(label, None)

    def matches(self, category):
        return self.categories is None or _norm_category(category) in self.categories

    def issubset(self, other):
        if other.categories is None:
            return True
        return self.categories is not None and self.categories <= other.categories


@dataclass(frozen=True)
class ReportRow:
    region_id: str
    category: str
    timestamp: dt.datetime | None = None


@dataclass(frozen=True)
class CategoryCounts:
    counts: dict  # region id -> matched report count
    residual: dict  # unmatched category (as written) -> count
    unknown_regions: dict = field(default_factory=dict)  # id not in the region list -> count

    @property
    def total(self):
        return sum(self.counts.values())

    def vector(self, ids):
        return np.array([self.counts.get(i, 0) for i in ids], dtype=float)


def minmax_normalize(values):
    """Scale to [0, 1] by ``(x - min) / (max - min)``.

    Raises :class:`DegenerateError` when the column is constant.
    """
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise DataError("cannot normalize an empty column")
    if np.isnan(x).any():
        raise DataError("cannot normalize a column with missing values")
    lo, hi = x.min(), x.max()
    if hi == lo:
        raise DegenerateError(f"degenerate range: every value equals {lo!r}")
    q = (x - lo) / (hi - lo)
    # pin the endpoints so min 0 / max 1 hold exactly
    q[x == lo] = 0.0
    q[x == hi] = 1.0
    return q


@dataclass(frozen=True)
class RateResult:
    rates: np.ndarray
    zero_denominator: tuple  # ids with count 0 and denominator 0 (rate set to 0)
    kind: RateKind


def rate_normalize(counts, denominator, kind=RateKind.custom, ids=None):
    """``count / denominator`` per region.

    A zero count over a zero denominator yields 0 and is flagged; a positive
    count over a non-positive denominator is an error naming the region.
    """
    c = np.asarray(counts, dtype=float)
    d = np.asarray(denominator, dtype=float)
    if c.shape != d.shape:
        raise DataError("counts and denominators differ in length")
    ids = list(ids) if ids is not None else [str(k) for k in range(c.size)]
    if np.isnan(c).any() or np.isnan(d).any():
        bad = [ids[k] for k in np.flatnonzero(np.isnan(c) | np.isnan(d))]
        raise DataError(f"missing count or denominator for {bad[:10]}")
    bad = np.flatnonzero((c > 0) & (d <= 0))
    if bad.size:
        raise DataError(f"positive count with zero denominator for region(s) {[ids[k] for k in bad[:10]]}")
    if (d < 0).any():
        raise DataError(f"negative denominator for {[ids[k] for k in np.flatnonzero(d < 0)[:10]]}")
    zero = d == 0
    rates = np.divide(c, d, out=np.zeros_like(c), where=~zero)
    return RateResult(rates, tuple(ids[k] for k in np.flatnonzero(zero)), RateKind(kind))


def disaggregate_by_area(parent_values, hierarchy, child_areas):
    """Split each parent value across its children in proportion to area.

    The denominator is the sum of sibling areas, not the parent polygon area,
    so each parent's total is conserved exactly up to rounding.

    Parameters
    ----------
    parent_values : mapping
        Parent id -> value.
    hierarchy : Hierarchy
    child_areas : mapping
        Child id -> area. Iteration order sets the output order.

    Returns
    -------
    dict
        Child id -> disaggregated value.
    """
    groups = {}
    for cid in child_areas:
        if cid not in hierarchy.parent_of:
            raise DataError(f"child {cid!r} is not mapped to a parent")
        groups.setdefault(hierarchy.parent_of[cid], []).append(cid)

    out = {}
    for pid, value in parent_values.items():
        value = float(value)
        if math.isnan(value):
            raise DataError(f"parent {pid!r} has a missing value")
        kids = groups.get(pid, [])
        total = math.fsum(child_areas[c] for c in kids)
        if value != 0 and total <= 0:
            raise DataError(f"parent {pid!r} has value {value!r} but no child with positive area")
        for c in kids:
            out[c] = value * (child_areas[c] / total) if value != 0 else 0.0
    missing = [c for c in child_areas if c not in out]
    if missing:
        raise DataError(f"children whose parent has no value: {missing[:10]}")
    return {c: out[c] for c in child_areas}


def _parse_time(text):
    text = text.strip()
    if not text:
        return None
    try:
        return dt.datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        raise DataError(f"unparseable timestamp {text!r}")


def parse_reports(source, id_column="id", category_column="category", timestamp_column="timestamp"):
    """Read report rows (id, category, timestamp) from CSV."""
    if isinstance(source, (str, Path)) and Path(source).is_file():
        text = Path(source).read_text(encoding="utf-8-sig")
    else:
        text = str(source)
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        return []
    for col in (id_column, category_column):
        if col not in reader.fieldnames:
            raise DataError(f"report table lacks column {col!r}")
    has_ts = timestamp_column in reader.fieldnames
    rows = []
    for rec in reader:
        rows.append(
            ReportRow(
                region_id=rec[id_column].strip(),
                category=rec[category_column],
                timestamp=_parse_time(rec[timestamp_column]) if has_ts else None,
            )
        )
    return rows


def filter_by_date(rows, start=None, end=None):
    """Keep rows whose date falls in the inclusive ``[start, end]`` window."""
    start = dt.date.fromisoformat(start) if isinstance(start, str) else start
    end = dt.date.fromisoformat(end) if isinstance(end, str) else end
    kept = []
    for r in rows:
        if r.timestamp is None:
            if start is not None or end is not None:
                continue
            kept.append(r)
            continue
        d = r.timestamp.date()
        if (start is None or d >= start) and (end is None or d <= end):
            kept.append(r)
    return kept


def apply_category_filter(reports, flt, region_ids=None):
    """Count reports per region whose category passes ``flt``.

    Every id in ``region_ids`` appears in the result (zeros included).
    Categories that fail the filter go to the residual tally.
    """
    counts = Counter()
    residual = Counter()
    unknown = Counter()
    known = set(region_ids) if region_ids is not None else None
    for r in reports:
        if not flt.matches(r.category):
            residual[r.category.strip()] += 1
            continue
        if known is not None and r.region_id not in known:
            unknown[r.region_id] += 1
            continue
        counts[r.region_id] += 1
    if region_ids is not None:
        full = {rid: counts.get(rid, 0) for rid in region_ids}
    else:
        full = dict(counts)
    return CategoryCounts(full, dict(residual), dict(unknown))


@dataclass(frozen=True)
class StatRow:
    variable: str
    minimum: float
    maximum: float
    mean: float
    std: float
    count: int


@dataclass(frozen=True)
class DescriptiveStats:
    rows: tuple

    def __getitem__(self, name):
        for r in self.rows:
            if r.variable == name:
                return r
        raise KeyError(name)

    @property
    def variables(self):
        return [r.variable for r in self.rows]


def descriptive_stats(table, columns=None):
    """Min, max, mean and population std per column, in column order.

    Missing values are excluded and the remaining count is reported.
    ``table`` is an :class:`AttributeTable` or a mapping of name -> values.
    """
    source = table.columns if hasattr(table, "columns") and not isinstance(table, dict) else table
    names = list(columns) if columns is not None else list(source)
    rows = []
    for name in names:
        x = np.asarray(source[name], dtype=float)
        x = x[~np.isnan(x)]
        if x.size == 0:
            raise DataError(f"column {name!r} has no values")
        mean = float(np.clip(x.mean(), x.min(), x.max()))
        rows.append(StatRow(name, float(x.min()), float(x.max()), mean, float(x.std()), int(x.size)))
    return DescriptiveStats(tuple(rows))
