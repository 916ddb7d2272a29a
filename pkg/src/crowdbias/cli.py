"""Command-line entry point: ``crowdbias <subcommand> ...``.

Exit codes: 0 success, 2 validation error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import esda, infer, synth
from .errors import CrowdBiasError, DataError, ValidationError
from .geo_ingest import build_hierarchy, parse_attributes, parse_geometry
from .pipeline import emit_geojson, run_audit, validate_config
from .transform import minmax_normalize
from .weights import build_contiguity, transform as reweight, write_adjacency

log = logging.getLogger("crowdbias")


def _common(p):
    p.add_argument("--config", help="audit config JSON")
    p.add_argument("--out", help="output directory or file")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--permutations", type=int, help="number of permutations")
    p.add_argument("--alpha", type=float, help="significance level for cluster maps")
    p.add_argument("--adjacency", choices=["queen", "rook"], help="contiguity rule")
    p.add_argument("--scheme", choices=["binary", "row"], help="weights scheme")
    p.add_argument("--id-prop", default=None, help="GeoJSON property holding region ids (default GEOID)")
    p.add_argument("--workers", type=int, default=None, help="threads for permutation loops")


def _geo(p, attributes=True):
    p.add_argument("--geometry", required=True, help="GeoJSON FeatureCollection")
    if attributes:
        p.add_argument("--attributes", required=True, help="attribute CSV")
    p.add_argument("--id-column", default="GEOID", help="id column in the attribute CSV")
    p.add_argument("--snap", type=float, default=0.0, help="vertex snapping tolerance")
    p.add_argument("--no-normalize", action="store_true", help="skip min-max scaling")


def build_parser():
    parser = argparse.ArgumentParser(prog="crowdbias", description="Audit crowdsourced disaster reports for sample, spatial and demographic bias.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest-check", help="parse geometry/attributes and report problems")
    _common(p)
    _geo(p, attributes=False)
    p.add_argument("--attributes", help="attribute CSV to join")
    p.add_argument("--parent-geometry", help="parent-level GeoJSON for hierarchy checks")

    p = sub.add_parser("weights", help="build contiguity weights and export an adjacency list")
    _common(p)
    _geo(p, attributes=False)

    for name, helptext in (("moran", "global Moran's I"), ("lisa", "local Moran clusters")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        _geo(p)
        p.add_argument("--column", required=True)

    p = sub.add_parser("bilisa", help="bivariate local Moran (x against lag of y)")
    _common(p)
    _geo(p)
    p.add_argument("--x", required=True, help="column at the region (e.g. damage)")
    p.add_argument("--y", required=True, help="column whose spatial lag is used (e.g. reports)")

    p = sub.add_parser("anova", help="one-way ANOVA of traits across significant clusters")
    _common(p)
    p.add_argument("--clusters", required=True, help="CSV from lisa/bilisa (id, stat, pseudo_p, cluster)")
    p.add_argument("--attributes", required=True)
    p.add_argument("--id-column", default="GEOID")
    p.add_argument("--traits", required=True, help="comma-separated trait columns")

    p = sub.add_parser("regress", help="OLS regression model 1-4")
    _common(p)
    p.add_argument("--attributes", required=True)
    p.add_argument("--id-column", default="GEOID")
    p.add_argument("--dependent", required=True)
    p.add_argument("--model", type=int, action="append", choices=[1, 2, 3, 4])
    p.add_argument("--column", action="append", default=[], metavar="ROLE=NAME", help="map a model role to a column")

    p = sub.add_parser("synth", help="write a synthetic bias scenario and matching audit config")
    _common(p)
    p.add_argument("--rows", type=int, default=30)
    p.add_argument("--cols", type=int, default=30)
    p.add_argument("--patch-size", type=int, default=5)

    p = sub.add_parser("audit", help="run the full audit from a config")
    _common(p)
    return parser


def _emit(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=float))


def _load(args):
    regions = parse_geometry(args.geometry, args.id_prop or "GEOID")
    table = parse_attributes(args.attributes, args.id_column).join(regions)
    w = build_contiguity(regions, args.adjacency or "queen", args.snap)
    return regions, table, reweight(w, args.scheme or "binary")


def _values(table, column, normalize):
    x = table.require(column)
    return minmax_normalize(x) if normalize else x


def _seed(args):
    if args.seed is None:
        raise ValidationError("seed: required (--seed)")
    return args.seed


def cmd_ingest_check(args):
    regions = parse_geometry(args.geometry, args.id_prop or "GEOID")
    out = {"regions": len(regions), "total_area": float(regions.areas.sum()), "degenerate": regions.degenerate_ids}
    if args.attributes:
        table = parse_attributes(args.attributes, args.id_column).join(regions)
        out["columns"] = {c: {"missing": table.missing(c)} for c in table.names}
    if args.parent_geometry:
        parents = parse_geometry(args.parent_geometry, args.id_prop or "GEOID")
        h = build_hierarchy(regions, parents)
        out["hierarchy"] = {
            "parents": len(parents),
            "by_containment": sorted(c for c, m in h.method.items() if m == "containment"),
            "area_ratio_min": min(h.area_ratio.values()),
            "area_ratio_max": max(h.area_ratio.values()),
        }
    _emit(out)


def cmd_weights(args):
    regions = parse_geometry(args.geometry, args.id_prop or "GEOID")
    w = reweight(build_contiguity(regions, args.adjacency or "queen", args.snap), args.scheme or "binary")
    if args.out:
        write_adjacency(w, args.out)
    _emit({"n": w.n, "s0": w.s0, "scheme": w.scheme.value, "islands": [regions[i].id for i in w.islands]})


def cmd_moran(args):
    regions, table, w = _load(args)
    res = esda.global_moran(_values(table, args.column, not args.no_normalize), w, _perms(args), _seed(args))
    _emit({"column": args.column, "I": res.I, "expected": res.expected, "pseudo_p": res.pseudo_p,
           "stars": infer.stars(res.pseudo_p), "permutations": res.permutations, "seed": res.seed,
           "s0": res.s0, "scheme": res.scheme})


def _perms(args):
    return esda.PERMUTATIONS if args.permutations is None else args.permutations


def _alpha(args):
    return esda.ALPHA if args.alpha is None else args.alpha


def _write_local(res, regions, args, stem):
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    esda.write_local_csv(res, regions.ids, out / f"{stem}.csv")
    emit_geojson(res, regions, out / f"{stem}.geojson", args.id_prop or "GEOID")
    return out / f"{stem}.csv"


def cmd_lisa(args):
    regions, table, w = _load(args)
    res = esda.lisa(_values(table, args.column, not args.no_normalize), w, _perms(args), _seed(args), _alpha(args), args.workers or 1)
    path = _write_local(res, regions, args, f"lisa_{args.column}")
    _emit({"csv": str(path), "counts": res.counts(), "islands": [regions[i].id for i in res.islands]})


def cmd_bilisa(args):
    regions, table, w = _load(args)
    norm = not args.no_normalize
    res = esda.bilisa(_values(table, args.x, norm), _values(table, args.y, norm), w, _perms(args), _seed(args), _alpha(args), args.workers or 1)
    path = _write_local(res, regions, args, f"bilisa_{args.x}_{args.y}")
    _emit({"csv": str(path), "global_IB": res.global_IB, "global_pseudo_p": res.global_pseudo_p, "counts": res.counts()})


class _Labels:
    def __init__(self, clusters):
        self.clusters = tuple(esda.Cluster(_QUAD.get(c, c)) for c in clusters)


_QUAD = {b.value: a.value for a, b in esda._BV_FROM_QUADRANT.items()}


def cmd_anova(args):
    with open(args.clusters, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "cluster" not in rows[0]:
        raise DataError(f"{args.clusters}: expected columns id, stat, pseudo_p, cluster")
    ids = [r["id"] for r in rows]
    table = parse_attributes(args.attributes, args.id_column)
    traits = [t.strip() for t in args.traits.split(",") if t.strip()]
    ca = infer.anova_over_clusters(_Labels([r["cluster"] for r in rows]), table, traits, ids)
    _emit({
        "clusters": list(ca.clusters),
        "anova": {t: {"F": r.F, "df": [r.df_between, r.df_within], "p": r.p, "stars": r.stars} for t, r in ca.results.items()},
        "ranking": ca.ranking(),
    })


def cmd_regress(args):
    table = parse_attributes(args.attributes, args.id_column)
    roles = {}
    for item in args.column:
        role, _, name = item.partition("=")
        if role not in infer.DEFAULT_COLUMNS or not name:
            raise ValidationError(f"--column {item!r}: expected ROLE=NAME with ROLE in {sorted(infer.DEFAULT_COLUMNS)}")
        roles[role] = name
    y = table.require(args.dependent)
    out = {}
    for m in args.model or [1, 2, 3, 4]:
        fit = infer.ols(y, infer.model_matrix(table, m, roles), m)
        out[f"model{m}"] = {
            "coefficients": {nm: {"coef": c, "se": s, "t": t, "p": p, "stars": infer.stars(p)} for nm, (c, s, t, p) in fit.coefficients().items()},
            "r2": fit.r2, "adj_r2": fit.adj_r2, "N": fit.N,
        }
    _emit(out)


def cmd_synth(args):
    seed = _seed(args)
    out = Path(args.out or "synthetic")
    spec = synth.LatticeSpec(args.rows, args.cols)
    regions = synth.make_lattice(spec)
    s = args.patch_size
    lh = synth.block_indices(spec, 1, 1, s, s)
    hl = synth.block_indices(spec, args.rows - s - 1, args.cols - s - 1, s, s)
    scenario = synth.BiasScenario(
        seed=seed,
        patches=(synth.Patch(lh, "LH", {"Minority%": 0.5}), synth.Patch(hl, "HL")),
        categories={"Flooding": 0.25, "Drainage": 0.45, "Storm Debris Collection": 0.2, "Crisis Cleanup": 0.1},
    )
    data = synth.generate_reports(scenario, regions, build_contiguity(regions, "rook"))
    paths = synth.write_fixture(out, regions, data)
    config = {
        "seed": seed,
        "permutations": _perms(args),
        "alpha": _alpha(args),
        "adjacency": args.adjacency or "rook",
        "scheme": "row" if args.scheme == "row" else "binary",
        "levels": [{"name": "lattice", "geometry": paths["geometry"].name, "attributes": paths["attributes"].name}],
        "damage": {"column": "FEMA damage", "level": "lattice"},
        "reports": [{
            "name": "311", "path": paths["reports"].name, "denominator": "Housing units", "kind": "per_housing_unit",
            "filters": {"baseline": ["Flooding"], "expanded": ["Flooding", "Drainage", "Storm Debris Collection", "Crisis Cleanup"]},
        }],
        "date_window": {"start": scenario.window[0], "end": scenario.window[1]},
        "output": "audit",
    }
    synth.write_config(out / "config.json", config)
    truth = out / "ground_truth.csv"
    with open(truth, "w", encoding="utf-8", newline="") as fh:
        fh.write("id,label\r\n")
        for r, lab in zip(regions, data.labels):
            fh.write(f"{r.id},{lab}\r\n")
    _emit({"config": str(out / "config.json"), "regions": len(regions), "reports": len(data.reports)})


def cmd_audit(args):
    if not args.config:
        raise ValidationError("--config is required for audit")
    overrides = {
        "seed": args.seed, "permutations": args.permutations, "alpha": args.alpha, "adjacency": args.adjacency,
        "scheme": args.scheme, "id_prop": args.id_prop, "output": str(Path(args.out).resolve()) if args.out else None,
        "workers": args.workers,
    }
    cfg = validate_config(args.config, overrides)
    rep = run_audit(cfg)
    _emit({"output": str(rep.output), "config_hash": rep.config_hash, "tables": sorted(p.name for p in rep.tables.values())})


COMMANDS = {
    "ingest-check": cmd_ingest_check,
    "weights": cmd_weights,
    "moran": cmd_moran,
    "lisa": cmd_lisa,
    "bilisa": cmd_bilisa,
    "anova": cmd_anova,
    "regress": cmd_regress,
    "synth": cmd_synth,
    "audit": cmd_audit,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except CrowdBiasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ValidationError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
