"""Config-driven audit: ingest, shape, test for autocorrelation, detect
imbalance clusters, profile them demographically and regress reporting volume.

One JSON config describes one audit and owns one output directory. Stage
order is fixed. All outputs are deterministic for a given config and inputs.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import esda, infer, transform
from .errors import CrowdBiasError, DataError, DegenerateError, ValidationError
from .geo_ingest import AttributeTable, Level, build_hierarchy, parse_attributes, parse_geometry, regions_to_geojson, write_geojson
from .weights import Scheme, build_contiguity, transform as reweight

__all__ = [
    "MIN_PERMUTATIONS_FOR_STARS",
    "LevelSpec",
    "ReportSpec",
    "AuditConfig",
    "AuditReport",
    "validate_config",
    "run_audit",
    "emit_geojson",
]

MIN_PERMUTATIONS_FOR_STARS = 99
MULTIPLE_TESTING_NOTE_THRESHOLD = 10
DAMAGE = "damage"


@dataclass(frozen=True)
class LevelSpec:
    name: str
    geometry: Path
    attributes: Path
    id_column: str = "GEOID"


@dataclass(frozen=True)
class ReportSpec:
    name: str
    path: Path
    denominator: str
    kind: str = "custom"
    filters: dict = field(default_factory=dict)  # label -> list of categories
    analysis_filter: str | None = None
    id_column: str = "id"
    category_column: str = "category"
    timestamp_column: str = "timestamp"

    @property
    def variables(self):
        """(variable name, filter label or None) for every count this dataset yields."""
        if not self.filters:
            return [(self.name, None)]
        return [(f"{self.name}:{label}", label) for label in self.filters]

    @property
    def analysis_variable(self):
        if not self.filters:
            return self.name
        return f"{self.name}:{self.analysis_filter}"


@dataclass(frozen=True)
class AuditConfig:
    seed: int
    permutations: int
    alpha: float
    adjacency: str
    scheme: str
    snap: float
    id_prop: str
    levels: tuple
    damage_column: str
    damage_level: str
    reports: tuple
    traits: tuple
    regression_columns: dict
    models: tuple
    output: Path
    date_start: str | None = None
    date_end: str | None = None
    normalize: bool = True
    stars: bool = True
    workers: int = 1
    units: dict = field(default_factory=dict)  # column -> unit label for output tables
    source: dict = field(default_factory=dict, repr=False)

    @property
    def config_hash(self):
        canon = json.dumps(self.source, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def parameters(self):
        return {
            "seed": self.seed,
            "permutations": self.permutations,
            "alpha": self.alpha,
            "adjacency": self.adjacency,
            "scheme": self.scheme,
            "snap": self.snap,
        }


@dataclass
class AuditReport:
    output: Path
    config_hash: str
    parameters: dict
    tables: dict = field(default_factory=dict)  # table name -> path
    layers: dict = field(default_factory=dict)  # layer name -> (csv path, geojson path)
    global_moran: dict = field(default_factory=dict)  # (variable, level) -> MoranResult
    lisa: dict = field(default_factory=dict)  # (variable, level) -> LisaResult
    bilisa: dict = field(default_factory=dict)  # (y variable, level) -> BivariateResult
    anova: dict = field(default_factory=dict)  # (y variable, level) -> ClusterAnova
    regressions: dict = field(default_factory=dict)  # (variable, level, model) -> RegressionResult
    descriptive: dict = field(default_factory=dict)  # level -> DescriptiveStats
    diagnostics: dict = field(default_factory=dict)

    def significant_count(self, variable, level):
        return int(self.lisa[(variable, level)].significant.sum())


# config ------------------------------------------------------------------------


def _resolve(base, p):
    p = Path(p)
    return p if p.is_absolute() else (base / p)


def validate_config(source, overrides=None):
    """Load and check an audit config, collecting every violation.

    ``source`` is a path to a JSON document or an already-decoded dict
    (relative paths then resolve against the working directory).
    ``overrides`` replaces top-level keys (CLI flags) before checking.
    """
    if isinstance(source, dict):
        raw, base = dict(source), Path.cwd()
    else:
        path = Path(source)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ValidationError(f"config file {path} not found")
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {path} is not valid JSON: {exc}")
        base = path.resolve().parent
        if not isinstance(raw, dict):
            raise ValidationError("config must be a JSON object")
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v

    errs = []
    seed = raw.get("seed")
    if seed is None:
        errs.append("seed: required")
    elif isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        errs.append("seed: must be an unsigned 64-bit integer")

    perms = raw.get("permutations", esda.PERMUTATIONS)
    use_stars = raw.get("stars", True)
    if isinstance(perms, bool) or not isinstance(perms, int) or perms < 1:
        errs.append("permutations: must be a positive integer")
    elif use_stars and perms < MIN_PERMUTATIONS_FOR_STARS:
        errs.append(f"permutations: {perms} < {MIN_PERMUTATIONS_FOR_STARS} is too few to emit significance stars")

    alpha = raw.get("alpha", esda.ALPHA)
    if not isinstance(alpha, (int, float)) or not 0 < alpha < 1:
        errs.append("alpha: must lie in (0, 1)")
    adjacency = raw.get("adjacency", "queen")
    if adjacency not in ("queen", "rook"):
        errs.append("adjacency: must be 'queen' or 'rook'")
    scheme = raw.get("scheme", "binary")
    try:
        scheme = Scheme.parse(scheme).value
    except ValueError:
        errs.append("scheme: must be 'binary' or 'row'")
    snap = raw.get("snap", 0.0)
    if not isinstance(snap, (int, float)) or snap < 0:
        errs.append("snap: must be >= 0")
    workers = raw.get("workers", 1)
    if isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
        errs.append("workers: must be a positive integer")

    levels = []
    raw_levels = raw.get("levels")
    if not isinstance(raw_levels, list) or not raw_levels:
        errs.append("levels: at least one level {name, geometry, attributes} is required")
        raw_levels = []
    names = set()
    for k, lv in enumerate(raw_levels):
        if not isinstance(lv, dict):
            errs.append(f"levels[{k}]: must be an object")
            continue
        name = lv.get("name")
        if not name:
            errs.append(f"levels[{k}].name: required")
        elif name in names:
            errs.append(f"levels[{k}].name: duplicate level {name!r}")
        names.add(name)
        for key in ("geometry", "attributes"):
            if not lv.get(key):
                errs.append(f"levels[{k}].{key}: required")
            elif not _resolve(base, lv[key]).is_file():
                errs.append(f"levels[{k}].{key}: file {lv[key]} does not exist")
        if name and lv.get("geometry") and lv.get("attributes"):
            levels.append(LevelSpec(name, _resolve(base, lv["geometry"]), _resolve(base, lv["attributes"]), lv.get("id_column", "GEOID")))

    damage = raw.get("damage")
    if not isinstance(damage, dict) or not damage.get("column"):
        errs.append("damage.column: required")
        damage = {}
    damage_level = damage.get("level", raw_levels[0].get("name") if raw_levels and isinstance(raw_levels[0], dict) else None)
    if damage and damage_level not in names:
        errs.append(f"damage.level: {damage_level!r} is not a configured level")

    reports = []
    raw_reports = raw.get("reports")
    if not isinstance(raw_reports, list) or not raw_reports:
        errs.append("reports: at least one report dataset is required")
        raw_reports = []
    for k, rp in enumerate(raw_reports):
        if not isinstance(rp, dict):
            errs.append(f"reports[{k}]: must be an object")
            continue
        for key in ("name", "path", "denominator"):
            if not rp.get(key):
                errs.append(f"reports[{k}].{key}: required")
        if rp.get("path") and not _resolve(base, rp["path"]).is_file():
            errs.append(f"reports[{k}].path: file {rp['path']} does not exist")
        kind = rp.get("kind", "custom")
        if kind not in {k_.value for k_ in transform.RateKind}:
            errs.append(f"reports[{k}].kind: unknown rate kind {kind!r}")
        filters = rp.get("filters") or {}
        if not isinstance(filters, dict) or any(not isinstance(v, list) or not v for v in filters.values()):
            errs.append(f"reports[{k}].filters: must map labels to non-empty category lists")
            filters = {}
        analysis = rp.get("analysis_filter")
        if filters:
            if analysis is None:
                analysis = "expanded" if "expanded" in filters else list(filters)[-1]
            elif analysis not in filters:
                errs.append(f"reports[{k}].analysis_filter: {analysis!r} is not a defined filter")
        if rp.get("name") and rp.get("path") and rp.get("denominator"):
            reports.append(
                ReportSpec(
                    name=rp["name"], path=_resolve(base, rp["path"]), denominator=rp["denominator"], kind=kind,
                    filters=dict(filters), analysis_filter=analysis, id_column=rp.get("id_column", "id"),
                    category_column=rp.get("category_column", "category"),
                    timestamp_column=rp.get("timestamp_column", "timestamp"),
                )
            )
    if len({r.name for r in reports}) != len(reports):
        errs.append("reports: dataset names must be unique")

    window = raw.get("date_window") or {}
    for key in ("start", "end"):
        if window.get(key) is not None:
            try:
                dt.date.fromisoformat(window[key])
            except (TypeError, ValueError):
                errs.append(f"date_window.{key}: not an ISO date")

    models = raw.get("models", [1, 2, 3, 4])
    if not isinstance(models, list) or any(m not in infer.MODEL_ROLES for m in models):
        errs.append("models: must be a list drawn from 1, 2, 3, 4")
        models = []
    traits = raw.get("traits", [infer.DEFAULT_COLUMNS[r] for r in ("single_parent", "poverty", "minority", "noedu")])
    if not isinstance(traits, list) or not traits:
        errs.append("traits: must be a non-empty list of column names")
        traits = []
    reg_cols = raw.get("regression_columns", {})
    if not isinstance(reg_cols, dict) or any(k not in infer.DEFAULT_COLUMNS for k in reg_cols):
        errs.append(f"regression_columns: keys must be among {sorted(infer.DEFAULT_COLUMNS)}")
        reg_cols = {}
    units = raw.get("units", {})
    if not isinstance(units, dict) or not all(isinstance(v, str) for v in units.values()):
        errs.append("units: must map column names to unit strings")
        units = {}

    output = raw.get("output")
    if not output:
        errs.append("output: an output directory is required (config key or --out)")

    if errs:
        raise ValidationError(errs)
    return AuditConfig(
        seed=seed, permutations=perms, alpha=float(alpha), adjacency=adjacency, scheme=scheme, snap=float(snap),
        id_prop=raw.get("id_prop", "GEOID"), levels=tuple(levels), damage_column=damage["column"],
        damage_level=damage_level, reports=tuple(reports), traits=tuple(traits), regression_columns=dict(reg_cols),
        models=tuple(models), output=_resolve(base, output), date_start=window.get("start"), date_end=window.get("end"),
        normalize=bool(raw.get("normalize", True)), stars=bool(use_stars), workers=workers, units=dict(units), source=raw,
    )


# outputs -----------------------------------------------------------------------


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return ""
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def emit_geojson(result, regions, path, id_prop="GEOID"):
    """Write the input features with ``cluster``, ``stat`` and ``pseudo_p`` added.

    Islands carry no ``pseudo_p``. Geometry is copied from the parsed input.
    """
    if len(regions) != result.n:
        raise DataError("result and regions are not index-aligned")
    extra = []
    for k in range(result.n):
        p = float(result.pseudo_p[k])
        extra.append({
            "cluster": result.clusters[k].value,
            "stat": float(result.Is[k]),
            "pseudo_p": None if math.isnan(p) else p,
        })
    try:
        write_geojson(regions_to_geojson(regions, id_prop, extra), path)
    except OSError as exc:
        raise DataError(f"could not write {path}: {exc}")


def _unit(cfg, column):
    if column in cfg.units:
        return cfg.units[column]
    return "percent" if column.rstrip().endswith("%") else "count"


def _slug(name):
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in name)


# audit -------------------------------------------------------------------------


class _Stage:
    """Attach the stage name to library errors raised inside the block."""

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if isinstance(exc, CrowdBiasError) and exc.stage is None:
            exc.stage = self.name
        return False


def _level_chain(cfg, regions):
    """Hierarchies between consecutive levels, coarse to fine."""
    out = {}
    for parent, child in zip(cfg.levels, cfg.levels[1:]):
        out[(parent.name, child.name)] = build_hierarchy(regions[child.name], regions[parent.name])
    return out


def _roll_up_map(cfg, regions, hierarchies, level_name):
    """Map any known region id (at this or a finer level) to its region at ``level_name``."""
    names = [lv.name for lv in cfg.levels]
    pos = names.index(level_name)
    mapping = {rid: rid for rid in regions[level_name].ids}
    for k in range(pos + 1, len(names)):
        h = hierarchies[(names[k - 1], names[k])]
        for child, parent in h.parent_of.items():
            if parent in mapping:
                mapping[child] = mapping[parent]
    return mapping


def _damage_by_level(cfg, regions, tables, hierarchies, diagnostics):
    names = [lv.name for lv in cfg.levels]
    src = names.index(cfg.damage_level)
    values = {cfg.damage_level: tables[cfg.damage_level].require(cfg.damage_column)}
    conservation = {}
    for k in range(src + 1, len(names)):
        parent, child = names[k - 1], names[k]
        h = hierarchies[(parent, child)]
        pvals = dict(zip(regions[parent].ids, values[parent]))
        areas = dict(zip(regions[child].ids, regions[child].areas))
        split = transform.disaggregate_by_area(pvals, h, areas)
        values[child] = np.array([split[c] for c in regions[child].ids])
        # conservation check per parent
        sums = {}
        for c, v in split.items():
            sums[h.parent_of[c]] = sums.get(h.parent_of[c], 0.0) + v
        worst = max((abs(sums.get(p, 0.0) - v) / max(abs(v), 1e-300) for p, v in pvals.items() if v != 0), default=0.0)
        conservation[f"{parent}->{child}"] = {
            "max_relative_error": worst,
            "parent_total": math.fsum(pvals.values()),
            "child_total": math.fsum(split.values()),
            "zero_area_children": [c for c, a in areas.items() if a == 0],
        }
    for k in range(src - 1, -1, -1):
        parent, child = names[k], names[k + 1]
        h = hierarchies[(parent, child)]
        agg = dict.fromkeys(regions[parent].ids, 0.0)
        for c, v in zip(regions[child].ids, values[child]):
            agg[h.parent_of[c]] += v
        values[parent] = np.array([agg[p] for p in regions[parent].ids])
    diagnostics["conservation"] = conservation
    return values


def run_audit(cfg, workers=None):
    """Execute the full audit described by ``cfg`` and write every output.

    Returns an :class:`AuditReport` holding the in-memory results as well as
    the paths written.
    """
    workers = cfg.workers if workers is None else workers
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    params = cfg.parameters()
    meta_header = ["seed", "permutations", "adjacency", "scheme"]
    meta = [cfg.seed, cfg.permutations, cfg.adjacency, cfg.scheme]
    diagnostics = {"islands": {}, "degenerate_regions": {}, "degenerate_variables": [], "unmatched_report_ids": {},
                   "residual_categories": {}, "zero_denominators": {}, "area_ratio": {}, "notes": []}
    report = AuditReport(out, cfg.config_hash, params, diagnostics=diagnostics)
    level_names = [lv.name for lv in cfg.levels]

    with _Stage("ingest"):
        regions, tables = {}, {}
        for k, lv in enumerate(cfg.levels):
            tag = {"tract": Level.tract, "block_group": Level.block_group}.get(lv.name, Level.custom)
            regions[lv.name] = parse_geometry(lv.geometry, cfg.id_prop, tag)
            tables[lv.name] = parse_attributes(lv.attributes, lv.id_column).join(regions[lv.name])
            diagnostics["degenerate_regions"][lv.name] = regions[lv.name].degenerate_ids
        hierarchies = _level_chain(cfg, regions)
        for (p, c), h in hierarchies.items():
            diagnostics["area_ratio"][f"{p}->{c}"] = {
                "min": min(h.area_ratio.values()), "max": max(h.area_ratio.values()),
                "by_containment": sorted(cid for cid, m in h.method.items() if m == "containment"),
            }

    # raw (rate-level) variables per level, before min-max
    raw = {lv: {} for lv in level_names}
    with _Stage("category_filter"):
        counts = {}
        for rs in cfg.reports:
            rows = transform.parse_reports(rs.path, rs.id_column, rs.category_column, rs.timestamp_column)
            rows = transform.filter_by_date(rows, cfg.date_start, cfg.date_end) if (cfg.date_start or cfg.date_end) else rows
            for lv in level_names:
                mapping = _roll_up_map(cfg, regions, hierarchies, lv)
                mapped = [transform.ReportRow(mapping.get(r.region_id, r.region_id), r.category, r.timestamp) for r in rows]
                for var, label in rs.variables:
                    flt = transform.CategoryFilter(label, rs.filters[label]) if label else transform.CategoryFilter.everything(rs.name)
                    cc = transform.apply_category_filter(mapped, flt, regions[lv].ids)
                    counts[(var, lv)] = cc
                    if cc.unknown_regions:
                        diagnostics["unmatched_report_ids"][f"{var}@{lv}"] = dict(sorted(cc.unknown_regions.items()))
                    if label:
                        diagnostics["residual_categories"][f"{var}@{lv}"] = dict(sorted(cc.residual.items()))

    with _Stage("rate_normalization"):
        for rs in cfg.reports:
            for lv in level_names:
                denom = tables[lv].require(rs.denominator)
                for var, _ in rs.variables:
                    res = transform.rate_normalize(counts[(var, lv)].vector(regions[lv].ids), denom, rs.kind, regions[lv].ids)
                    raw[lv][var] = res.rates
                    if res.zero_denominator:
                        diagnostics["zero_denominators"][f"{var}@{lv}"] = list(res.zero_denominator)

    with _Stage("disaggregation"):
        damage = _damage_by_level(cfg, regions, tables, hierarchies, diagnostics)
        for lv in level_names:
            raw[lv][DAMAGE] = damage[lv]

    report_vars = [v for rs in cfg.reports for v, _ in rs.variables]
    analysis_vars = [rs.analysis_variable for rs in cfg.reports]
    with _Stage("minmax_normalization"):
        scaled = {lv: {} for lv in level_names}
        for lv in level_names:
            for var in [DAMAGE] + report_vars:
                x = raw[lv][var]
                if np.ptp(x) == 0:
                    if var == DAMAGE or var in analysis_vars:
                        raise DegenerateError(f"variable {var!r} is constant at level {lv!r}")
                    diagnostics["degenerate_variables"].append(f"{var}@{lv}")
                    continue
                scaled[lv][var] = transform.minmax_normalize(x) if cfg.normalize else x

    with _Stage("descriptive_statistics"):
        desc_vars = [DAMAGE] + analysis_vars
        demo = [infer.DEFAULT_COLUMNS["population"]] if infer.DEFAULT_COLUMNS["population"] in tables[level_names[0]] else []
        demo += [t for t in cfg.traits if t not in demo]
        header = ["variable"]
        per_level = {}
        for lv in level_names:
            cols = {v: raw[lv][v] for v in desc_vars}
            for t in demo:
                if t in tables[lv]:
                    cols[t] = tables[lv].column(t)
            per_level[lv] = transform.descriptive_stats(cols)
            report.descriptive[lv] = per_level[lv]
            header += [f"{lv}_{s}" for s in ("minimum", "maximum", "mean", "std", "count")]
        rows = []
        for var in per_level[level_names[0]].variables:
            row = [var]
            for lv in level_names:
                try:
                    r = per_level[lv][var]
                    row += [r.minimum, r.maximum, r.mean, r.std, r.count]
                except KeyError:
                    row += [None] * 5
            rows.append(row)
        path = out / "descriptive_stats.csv"
        _write_csv(path, header, rows)
        report.tables["descriptive_stats"] = path

    with _Stage("weights"):
        weights = {}
        for lv in level_names:
            w = build_contiguity(regions[lv], cfg.adjacency, cfg.snap)
            weights[lv] = reweight(w, cfg.scheme)
            diagnostics["islands"][lv] = [regions[lv][i].id for i in w.islands]

    def star(p):
        return infer.stars(p) if cfg.stars else ""

    with _Stage("global_moran"):
        for lv in level_names:
            for var in [DAMAGE] + report_vars:
                if var in scaled[lv]:
                    report.global_moran[(var, lv)] = esda.global_moran(scaled[lv][var], weights[lv], cfg.permutations, cfg.seed)

        def moran_cells(var, lv):
            res = report.global_moran.get((var, lv))
            if res is None:
                return [0.0, None, "", "degenerate: constant or no matching reports"]
            return [res.I, res.pseudo_p, star(res.pseudo_p), ""]

        # baseline vs expanded per filtered dataset
        header = ["dataset", "filter"] + [f"{lv}_{c}" for lv in level_names for c in ("I", "pseudo_p", "stars", "note")] + meta_header
        rows = []
        for rs in cfg.reports:
            for var, label in rs.variables:
                if label is None:
                    continue
                rows.append([rs.name, label] + [c for lv in level_names for c in moran_cells(var, lv)] + meta)
        if rows:
            path = out / "moran_filters.csv"
            _write_csv(path, header, rows)
            report.tables["moran_filters"] = path

        header = ["variable"] + [f"{lv}_{c}" for lv in level_names for c in ("I", "pseudo_p", "stars", "note")] + meta_header
        rows = [[var] + [c for lv in level_names for c in moran_cells(var, lv)] + meta for var in [DAMAGE] + analysis_vars]
        path = out / "moran_global.csv"
        _write_csv(path, header, rows)
        report.tables["moran_global"] = path

    with _Stage("lisa"):
        count_rows = []
        for lv in level_names:
            for var in [DAMAGE] + report_vars:
                if var not in scaled[lv]:
                    continue
                res = esda.lisa(scaled[lv][var], weights[lv], cfg.permutations, cfg.seed, cfg.alpha, workers)
                report.lisa[(var, lv)] = res
                stem = f"lisa_{_slug(var)}_{lv}"
                esda.write_local_csv(res, regions[lv].ids, out / f"{stem}.csv")
                emit_geojson(res, regions[lv], out / f"{stem}.geojson", cfg.id_prop)
                report.layers[stem] = (out / f"{stem}.csv", out / f"{stem}.geojson")
                c = res.counts()
                count_rows.append([var, lv] + [c[k.value] for k in esda.Cluster] + [int(res.significant.sum())] + meta)
        path = out / "lisa_cluster_counts.csv"
        _write_csv(path, ["variable", "level"] + [k.value for k in esda.Cluster] + ["significant"] + meta_header, count_rows)
        report.tables["lisa_cluster_counts"] = path

    with _Stage("bilisa"):
        rows = []
        for var in analysis_vars:
            row = [f"{DAMAGE} with {var}"]
            for lv in level_names:
                res = esda.bilisa(scaled[lv][DAMAGE], scaled[lv][var], weights[lv], cfg.permutations, cfg.seed, cfg.alpha, workers)
                report.bilisa[(var, lv)] = res
                stem = f"bilisa_{DAMAGE}_{_slug(var)}_{lv}"
                esda.write_local_csv(res, regions[lv].ids, out / f"{stem}.csv")
                emit_geojson(res, regions[lv], out / f"{stem}.geojson", cfg.id_prop)
                report.layers[stem] = (out / f"{stem}.csv", out / f"{stem}.geojson")
                row += [res.global_IB, res.global_pseudo_p, star(res.global_pseudo_p)]
            rows.append(row + meta)
        path = out / "bivariate_global.csv"
        _write_csv(path, ["pair"] + [f"{lv}_{c}" for lv in level_names for c in ("I", "pseudo_p", "stars")] + meta_header, rows)
        report.tables["bivariate_global"] = path

    with _Stage("anova"):
        n_tests = 0
        for lv in level_names:
            header = ["trait", "unit"]
            cells = {t: [_unit(cfg, t)] for t in cfg.traits}
            qrows = []
            for var in analysis_vars:
                header += [f"{var}_{c}" for c in ("F", "df_between", "df_within", "p", "stars")]
                try:
                    ca = infer.anova_over_clusters(report.bilisa[(var, lv)], tables[lv], cfg.traits)
                except DataError as exc:
                    if "populated clusters" not in str(exc):
                        raise
                    diagnostics["notes"].append(f"ANOVA skipped for {var}@{lv}: {exc.message}")
                    for t in cfg.traits:
                        cells[t] += [None] * 5
                    continue
                report.anova[(var, lv)] = ca
                for t in cfg.traits:
                    r = ca.results[t]
                    n_tests += 1
                    cells[t] += [r.F, r.df_between, r.df_within, r.p, star(r.p)]
                for q in ca.quartiles:
                    qrows.append([var, q.trait, q.cluster, q.n, q.minimum, q.q1, q.median, q.q3, q.maximum])
            path = out / f"anova_{lv}.csv"
            _write_csv(path, header + meta_header, [[t] + cells[t] + meta for t in cfg.traits])
            report.tables[f"anova_{lv}"] = path
            path = out / f"quartiles_{lv}.csv"
            _write_csv(path, ["pair", "trait", "cluster", "n", "minimum", "q1", "median", "q3", "maximum"], qrows)
            report.tables[f"quartiles_{lv}"] = path
        if n_tests > MULTIPLE_TESTING_NOTE_THRESHOLD:
            diagnostics["notes"].append(f"{n_tests} ANOVA tests were run without multiple-comparison correction")

    with _Stage("regression"):
        roles = dict(infer.DEFAULT_COLUMNS)
        roles.update(cfg.regression_columns)
        for var in analysis_vars:
            rows = []
            for lv in level_names:
                cols = {}
                for role in ("population", "poverty", "noedu", "single_parent", "minority"):
                    name = roles[role]
                    if name in tables[lv]:
                        cols[name] = tables[lv].require(name)
                    elif role == "noedu" and "NOHSDP%" in tables[lv]:
                        cols["NOHSDP%"] = tables[lv].require("NOHSDP%")
                if cfg.normalize:
                    cols = {k: transform.minmax_normalize(v) for k, v in cols.items()}
                cols[roles["damage"]] = scaled[lv][DAMAGE]
                design_table = AttributeTable(regions[lv].ids, cols)
                fits = {}
                for m in cfg.models:
                    design = infer.model_matrix(design_table, m, roles)
                    fits[m] = infer.ols(scaled[lv][var], design, m)
                    report.regressions[(var, lv, m)] = fits[m]
                terms = []
                for m in cfg.models:
                    for nm in fits[m].names:
                        if nm not in terms:
                            terms.append(nm)
                for term in terms:
                    row = [lv, "Constant" if term == "const" else term]
                    for m in cfg.models:
                        c = fits[m].coefficients().get(term)
                        row += [None] * 4 if c is None else [c[0], c[1], c[3], star(c[3])]
                    rows.append(row + meta)
                rows.append([lv, "R2_adjusted"] + [c for m in cfg.models for c in (fits[m].adj_r2, None, None, "")] + meta)
                rows.append([lv, "R2"] + [c for m in cfg.models for c in (fits[m].r2, None, None, "")] + meta)
                rows.append([lv, "N"] + [c for m in cfg.models for c in (fits[m].N, None, None, "")] + meta)
            header = ["level", "term"] + [f"model{m}_{c}" for m in cfg.models for c in ("coef", "se", "p", "stars")] + meta_header
            path = out / f"regression_{_slug(var)}.csv"
            _write_csv(path, header, rows)
            report.tables[f"regression_{var}"] = path

    with _Stage("report"):
        summary = {
            "config_hash": report.config_hash,
            "parameters": params,
            "stages": ["ingest", "category_filter", "rate_normalization", "disaggregation", "minmax_normalization",
                       "descriptive_statistics", "weights", "global_moran", "lisa", "bilisa", "anova", "regression"],
            "levels": {lv: len(regions[lv]) for lv in level_names},
            "significant_lisa": {f"{v}@{lv}": int(r.significant.sum()) for (v, lv), r in report.lisa.items()},
            "significant_bilisa": {f"{v}@{lv}": r.counts() for (v, lv), r in report.bilisa.items()},
            "tables": {k: p.name for k, p in report.tables.items()},
            "layers": {k: [c.name, g.name] for k, (c, g) in report.layers.items()},
            "diagnostics": diagnostics,
        }
        (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    return report


def _json_default(o):
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o)}")
