"""Command-line interface.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .data import (FeaturizerSpec, GroupingSpec, featurize, generate_synthetic, group_users,
                   load_dataset, load_items, load_ratings, save_catalog, save_dataset)
from .errors import ConfigError, DataError, NumericalError
from .harness import (ExperimentSpec, read_report, render_charts, report_csv, report_json,
                      run_experiment, write_report)
from .recourse import RecourseConfig, RecourseRequest, compute_recourse

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("itemrecourse")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_grouping(text: str, n_groups: int) -> GroupingSpec:
    if text == "activity":
        return GroupingSpec("activity", None, n_groups)
    if text.startswith("metadata:"):
        return GroupingSpec("metadata", text.split(":", 1)[1], n_groups)
    raise ConfigError(f"grouping must be 'activity' or 'metadata:<field>', got {text!r}")


def cmd_featurize(args):
    spec = FeaturizerSpec.from_json(args.spec)
    catalog = featurize(load_items(args.items), spec)
    out = Path(args.out)
    if args.ratings:
        ratings = load_ratings(args.ratings, item_index=catalog.item_index)
        save_dataset(out, catalog, ratings)
    else:
        save_catalog(catalog, out)
    print(f"wrote {catalog.n_items} items x {catalog.n_features} features to {out}")


def cmd_synth(args):
    catalog, ratings, meta = generate_synthetic(
        args.users, args.items, args.features, args.density, rng_seed=args.seed,
        feature_density=args.feature_density, feature_law=args.feature_law)
    save_dataset(args.out, catalog, ratings, meta)
    print(f"wrote {ratings.n_users} users, {catalog.n_items} items, "
          f"{ratings.n_ratings} ratings to {args.out}")


def cmd_recourse(args):
    ds = load_dataset(args.data)
    groups = group_users(ds.ratings, ds.metadata, _parse_grouping(args.grouping, args.n_groups))
    if not 0 <= args.group < len(groups):
        raise ConfigError(f"group index {args.group} out of range (0..{len(groups) - 1})")
    item = ds.catalog.resolve_item(args.item)
    cfg = RecourseConfig(
        k=args.k, lam=args.lam, learning_rate=args.lr, max_iterations=args.max_iters,
        iht_success_loss=args.iht_loss, iht_chunk=args.iht_chunk, sample_fraction=args.sample,
        rng_seed=args.seed, max_changes=args.max_changes, normalize_step=not args.no_normalize,
        exclude_rated=not args.include_rated)
    res = compute_recourse(ds.catalog, ds.ratings, RecourseRequest(item, tuple(groups[args.group]), cfg))
    names = ds.catalog.feature_names
    out = {
        "item": res.item,
        "item_id": ds.catalog.item_ids[res.item] if ds.catalog.item_ids else None,
        "group": args.group,
        "config": asdict(cfg),
        "success_rate_full_before": res.success_rate_full_before,
        "success_rate_full": res.success_rate_full,
        "success_rate_full_converged": res.success_rate_full_converged,
        "success_rate_sample": res.success_rate_sample,
        "success_rate_sample_converged": res.success_rate_sample_converged,
        "group_size": int(res.group.size),
        "sample_size": int(res.sample.size),
        "removed_users": int(res.removed_users.size),
        "empty_profiles": res.n_empty_profiles,
        "iterations": res.iterations,
        "converged": res.converged,
        "max_changes_forced": res.max_changes_forced,
        "l0_converged": res.l0_converged,
        "changes": [
            {"index": i, "name": names[i] if names else None, "old": old, "new": new}
            for i, old, new in res.changes()
        ],
        "trace": [asdict(t) for t in res.trace],
    }
    Path(args.out).write_text(json.dumps(out, indent=1) + "\n", encoding="utf-8")
    print(f"success {res.success_rate_full:.3f} over {res.group.size} users, "
          f"{len(out['changes'])} features changed -> {args.out}")


def cmd_experiment(args):
    ds = load_dataset(args.data)
    spec = ExperimentSpec.from_json(args.spec)
    if args.timing:
        spec = replace(spec, record_timing=True)
    report = run_experiment(ds.catalog, ds.ratings, ds.metadata, spec, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, "csv", out / "report.csv")
    write_report(report, "json", out / "report.json")
    if args.charts:
        render_charts(report, out / "charts")
    agg = report.aggregates()
    print(f"{agg['n_cells']} cells ({agg['n_failed']} failed) -> {out}")


def cmd_report(args):
    path = Path(args.input)
    if path.is_dir():
        path = path / "report.json"
    try:
        report = read_report(path)
    except FileNotFoundError:
        raise DataError(f"no report at {path}") from None
    sys.stdout.write(report_csv(report) if args.format == "csv" else report_json(report))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="itemrecourse", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("featurize", help="featurize item metadata into a catalog")
    s.add_argument("--items", required=True)
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--ratings", help="optional ratings CSV to store alongside the catalog")
    s.set_defaults(func=cmd_featurize)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--users", type=int, required=True)
    s.add_argument("--items", type=int, required=True)
    s.add_argument("--features", type=int, required=True)
    s.add_argument("--density", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--feature-density", type=float, default=0.1)
    s.add_argument("--feature-law", choices=["zipf", "uniform"], default="zipf")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("recourse", help="compute a recourse for one item and group")
    s.add_argument("--data", required=True)
    s.add_argument("--item", required=True, help="internal index or external id")
    s.add_argument("--group", type=int, required=True)
    s.add_argument("--grouping", default="activity", help="activity | metadata:<field>")
    s.add_argument("--n-groups", type=int, default=5)
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--sample", type=float, default=1.0)
    s.add_argument("--lambda", dest="lam", type=float, default=0.1)
    s.add_argument("--lr", type=float, default=0.01)
    s.add_argument("--max-iters", type=int, default=500)
    s.add_argument("--iht-loss", type=float, default=0.20)
    s.add_argument("--iht-chunk", type=int, default=1)
    s.add_argument("--max-changes", type=int)
    s.add_argument("--no-normalize", action="store_true", help="use the raw learning rate")
    s.add_argument("--include-rated", action="store_true", help="keep already-rated items in rankings")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_recourse)

    s = sub.add_parser("experiment", help="run the group x rank x sample grid")
    s.add_argument("--data", required=True)
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--charts", action="store_true")
    s.add_argument("--timing", action="store_true", help="record wall-clock per cell")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("report", help="print a stored report")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--format", choices=["csv", "json"], default="csv")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except json.JSONDecodeError as e:
        print(f"config error: invalid JSON: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
