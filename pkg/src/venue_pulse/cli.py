"""Command-line front-end: ``venue-pulse <subcommand> [flags]``.

Exit status is 0 on success, 1 on user error (bad flags, missing or invalid
inputs) and 2 on internal failures. Data goes to files or standard output,
diagnostics to standard error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from datetime import date
from pathlib import Path
from typing import Optional

from . import __version__
from .batch import CRITERIA, DEFAULT_K, canonical_criteria, run_batch_experiment, sweep_k
from .core import parse_timestamp, to_epoch
from .errors import ConfigError, VenuePulseError
from .ingest import (DEFAULT_CUTOFF, DEFAULT_MAX_REJECT_RATE, DEFAULT_MIN_CHECKINS,
                     identify_new_venues, ingest_files, load_dataset, save_dataset)
from .online import ONLINE_CRITERIA, evaluate_online
from .profiles import (DEFAULT_STATIONARITY_THRESHOLD, CityProfiles, normalize, stable_profile,
                       write_profiles_csv)
from .report import (build_report, config_digest, discover, fmt_float, header_line,
                     write_auc_csv, write_batch_csv, write_json, write_records_csv)
from .similarity import jsd_matrix, k_nearest_wards, top_wards
from .synth import (CityConfig, batch_scenario, generate_city, online_scenario, write_city)

log = logging.getLogger("venue_pulse")

SCENARIOS = {"batch": batch_scenario, "online": online_scenario}
# Flags that locate files or tune logging; they do not change results.
_NOT_DIGESTED = {"command", "config", "log_level", "out", "data", "results", "checkins",
                 "venues", "wards", "taxonomy", "transitions", "batch", "online", "handler"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse with exit status 1 on bad usage."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# helpers

def _split(value) -> list:
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return [str(v).strip() for v in value if str(v).strip()]
    return [v.strip() for v in str(value).split(",") if v.strip()]


def parse_months(value) -> list:
    """``"2..6"`` or ``"2,3,5"`` (or a JSON list) to a sorted list of month counts."""
    if isinstance(value, (list, tuple)):
        months = [int(v) for v in value]
    else:
        text = str(value).strip()
        try:
            if ".." in text:
                lo, hi = text.split("..", 1)
                months = list(range(int(lo), int(hi) + 1))
            else:
                months = [int(v) for v in _split(text)]
        except ValueError:
            raise ConfigError(f"cannot parse months {value!r}; use e.g. 2..6") from None
    if not months or min(months) < 2:
        raise ConfigError("months must be a non-empty range starting at 2 or later")
    return sorted(set(months))


def parse_instant(value) -> Optional[int]:
    """RFC 3339 instant, ``YYYY-MM-DD`` date or integer epoch seconds."""
    if value is None:
        return None
    text = str(value).strip()
    if text.lstrip("-").isdigit():
        return int(text)
    try:
        return to_epoch(parse_timestamp(text))
    except ValueError:
        raise ConfigError(f"cannot parse time {value!r}; use RFC 3339, YYYY-MM-DD or epoch seconds") from None


def _require(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n, None) is None]
    if missing:
        raise ConfigError(f"{args.command}: missing required {', '.join(missing)}")


def _existing(path, what="input") -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


def provenance(args, extra: Optional[dict] = None) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_DIGESTED}
    if extra:
        cfg.update(extra)
    return {"tool": f"venue-pulse {__version__}", "command": args.command,
            "config_digest": config_digest(cfg), "seed": args.seed}


def _emit_text(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _cohort(args, dataset) -> list:
    cutoff = date.fromisoformat(str(args.cutoff)) if args.cutoff else DEFAULT_CUTOFF
    cohort = identify_new_venues(dataset.venues.values(), cutoff, args.min_checkins)
    if not len(cohort):
        raise ConfigError(f"no venue created after {cutoff} with >= {args.min_checkins} check-ins")
    return cohort.sorted()


def _store(args, dataset) -> CityProfiles:
    return CityProfiles(dataset, before=parse_instant(args.before), after=parse_instant(args.after))


# ---------------------------------------------------------------------------
# subcommands

def cmd_ingest(args) -> int:
    _require(args, "checkins", "venues", "wards", "out")
    for name in ("checkins", "venues", "wards", "taxonomy", "transitions"):
        if getattr(args, name):
            _existing(getattr(args, name), name)
    grid_start = parse_timestamp(args.grid_start) if args.grid_start else None
    ds, stats = ingest_files(args.checkins, args.venues, args.wards, args.taxonomy, args.format,
                             args.max_reject_rate, args.utc_offset, grid_start,
                             parse_instant(args.window_end), args.transitions)
    save_dataset(ds, args.out, stats, provenance(args))
    log.info("ingested %d venues, %d check-ins into %s", len(ds.venues), len(ds.checkins), args.out)
    return 0


def city_config(args) -> CityConfig:
    """A ``scenario`` key picks a ready-made scenario (other keys are its arguments);
    otherwise the JSON holds :class:`CityConfig` fields. ``--seed`` overrides either."""
    doc = {}
    if args.config:
        doc = json.loads(_existing(args.config, "city config").read_text(encoding="utf-8"))
        if not isinstance(doc, dict):
            raise ConfigError(f"{args.config}: city config must be a JSON object")
    seed = {} if args.seed is None else {"seed": args.seed}
    if doc and "scenario" not in doc:
        cfg = CityConfig.from_json(doc)
        return replace(cfg, **seed)
    name = doc.pop("scenario", args.scenario)
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    try:
        return SCENARIOS[name](**{**doc, **seed})
    except TypeError as exc:
        raise ConfigError(f"scenario {name}: {exc}") from None


def cmd_simulate(args) -> int:
    _require(args, "out")
    cfg = city_config(args)
    args.seed = cfg.seed
    city = generate_city(cfg)
    prov = provenance(args, {"city": cfg.to_json()})
    write_city(city, args.out, prov)
    write_json(Path(args.out) / "city_config.json", cfg.to_json())
    log.info("simulated %d venues, %d check-ins into %s", len(city.venues), len(city.checkins),
             args.out)
    return 0


def cmd_profile(args) -> int:
    _require(args, "data", "id")
    ds = load_dataset(_existing(args.data, "data directory"))
    if args.kind == "stable":
        if args.scope != "venue":
            raise ConfigError("--kind stable applies to --scope venue only")
        prof = stable_profile(ds, args.id)
    else:
        store = _store(args, ds)
        if args.scope == "ward":
            prof = store.ward_profile(args.id)
        elif args.scope == "venue":
            prof = store.venue_profile(args.id)
        else:
            _require(args, "category")
            prof = store.category_ward_profile(args.category, args.id)
        if args.kind == "normalized":
            prof = normalize(prof)
    if args.out:
        write_profiles_csv(args.out, [prof], header_line(provenance(args)))
    else:
        fh = sys.stdout
        fh.write(f"# {header_line(provenance(args))}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "kind"] + [f"t{t}" for t in range(prof.T)])
        w.writerow([prof.subject, prof.kind] + [fmt_float(x) for x in prof.values])
    return 0


def cmd_similar(args) -> int:
    _require(args, "data", "ward")
    ds = load_dataset(_existing(args.data, "data directory"))
    ranked = k_nearest_wards(_store(args, ds), args.ward, args.category, args.k)
    _emit_text(json.dumps([[w, v] for w, v in ranked]) + "\n", args.out)
    return 0


def cmd_jsd_matrix(args) -> int:
    _require(args, "data", "out")
    ds = load_dataset(_existing(args.data, "data directory"))
    store = _store(args, ds)
    wards = top_wards(store, args.top)
    profiles = {w: store.category_ward_profile(args.category, w) for w in wards}
    mat = jsd_matrix(profiles, force=args.force)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# {header_line(provenance(args))}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ward_id"] + list(mat.subjects))
        for s, row in zip(mat.subjects, mat.values):
            w.writerow([s] + [fmt_float(x) for x in row])
    if mat.excluded:
        log.warning("excluded low-support wards: %s", ", ".join(mat.excluded))
    return 0


def cmd_predict_batch(args) -> int:
    _require(args, "data", "out")
    ds = load_dataset(_existing(args.data, "data directory"))
    criteria = [canonical_criteria(c) for c in _split(args.criteria)]
    if not criteria:
        raise ConfigError("no criteria given")
    rep = run_batch_experiment(ds, _cohort(args, ds), criteria, args.k, args.seed,
                               threshold=args.threshold)
    prov = provenance(args)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_batch_csv(args.out, rep.rows, prov)
    write_json(Path(args.out).with_suffix(".summary.json"),
               {"provenance": prov, "summary": rep.summary})
    return 0


def cmd_sweep_k(args) -> int:
    _require(args, "data", "out")
    ds = load_dataset(_existing(args.data, "data directory"))
    try:
        ks = [int(k) for k in _split(args.ks)]
    except ValueError:
        raise ConfigError(f"--ks must be a comma-separated list of integers, got {args.ks!r}") from None
    res = sweep_k(ds, _cohort(args, ds), args.criteria, ks, args.seed)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        prov = provenance(args)
        fh.write(f"# {header_line(prov)} argmin_k={res['argmin_k']}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["criteria", "k", "n", "mean_nrmse", "median_nrmse"])
        for row in res["table"]:
            w.writerow([res["criteria"], row["k"], row["n"], fmt_float(row["mean_nrmse"]),
                        fmt_float(row["median_nrmse"])])
    return 0


def cmd_predict_online(args) -> int:
    _require(args, "data", "out")
    ds = load_dataset(_existing(args.data, "data directory"))
    criteria = [canonical_criteria(c, ONLINE_CRITERIA) for c in _split(args.criteria)]
    if not criteria:
        raise ConfigError("no criteria given")
    months = parse_months(args.months)
    rep = evaluate_online(ds, _cohort(args, ds), criteria, months, args.k, args.seed)
    # the GP regresses stacked month-over-month ratios; record that design with the results
    prov = {**provenance(args), "forecast": "ratio-stacking"}
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_auc_csv(args.out, rep.auc, months, prov)
    write_records_csv(Path(args.out).with_suffix(".records.csv"), rep.records, prov)
    return 0


def cmd_report(args) -> int:
    _require(args, "out")
    batch, auc = list(map(Path, _split(args.batch))), list(map(Path, _split(args.online)))
    missing = [str(p) for p in batch + auc if not p.exists()]
    if args.results:
        if not Path(args.results).is_dir():
            missing.append(str(args.results))
        else:
            found = discover(args.results)
            batch += found["batch"]
            auc += found["auc"]
    if missing:
        raise ConfigError(f"missing inputs: {', '.join(missing)}")
    if not batch and not auc:
        where = args.results or "the command line"
        raise ConfigError(f"no batch report (venue_id,criteria,k,nrmse,status) or AUC table "
                          f"found in {where}")
    build_report(batch, auc, args.out, provenance(args))
    return 0


# ---------------------------------------------------------------------------
# parser

def _common(p, seed=True):
    p.add_argument("--config", help="JSON file whose keys set flag defaults (flags win)")
    p.add_argument("--log-level", default="WARNING",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="stderr log level")
    if seed:
        p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")


def _window(p):
    p.add_argument("--before", help="only check-ins strictly before this instant")
    p.add_argument("--after", help="only check-ins at or after this instant")


def _cohort_flags(p):
    p.add_argument("--cutoff", help=f"cohort creation cutoff date (default {DEFAULT_CUTOFF})")
    p.add_argument("--min-checkins", type=int, default=DEFAULT_MIN_CHECKINS,
                   help="cohort minimum total check-ins")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="venue-pulse",
                     description="Temporal check-in profiles, ward similarity and demand forecasts.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)

    p = sub.add_parser("ingest", help="parse check-ins, venues and wards into a dataset directory")
    _common(p)
    p.add_argument("--checkins", help="check-in file (CSV or JSONL)")
    p.add_argument("--venues", help="venues.csv")
    p.add_argument("--wards", help="wards.geojson")
    p.add_argument("--taxonomy", help="optional taxonomy JSON {general: [specific, ...]}")
    p.add_argument("--transitions", help="optional from_venue_id,to_venue_id,timestamp CSV (stored only)")
    p.add_argument("--format", default="csv", choices=["csv", "jsonl"])
    p.add_argument("--max-reject-rate", type=float, default=DEFAULT_MAX_REJECT_RATE)
    p.add_argument("--utc-offset", type=float, default=0.0, help="dataset UTC offset in hours")
    p.add_argument("--grid-start", help="time grid origin (defaults to the week of the first check-in)")
    p.add_argument("--window-end", help="end of the observation window (default: after last check-in)")
    p.add_argument("--out", help="output dataset directory")
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("simulate", help="generate a seeded synthetic city in ingest formats")
    p.add_argument("--config", help="city config JSON (CityConfig fields, or {'scenario': ..., kwargs})")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--scenario", default="batch", choices=sorted(SCENARIOS),
                   help="ready-made scenario when no config is given (default batch)")
    p.add_argument("--out", help="output directory")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("profile", help="export one temporal profile as CSV")
    _common(p)
    p.add_argument("--data", help="ingested dataset directory")
    p.add_argument("--scope", default="ward", choices=["ward", "venue", "category"])
    p.add_argument("--id", help="ward id (ward/category scope) or venue id")
    p.add_argument("--category", help="general or specific category for --scope category")
    p.add_argument("--kind", default="raw", choices=["raw", "normalized", "stable"])
    _window(p)
    p.add_argument("--out", help="output CSV (default stdout)")
    p.set_defaults(handler=cmd_profile)

    p = sub.add_parser("similar", help="k most temporally similar wards as a JSON list")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--ward")
    p.add_argument("--category", help="category profile to compare (default all categories)")
    p.add_argument("--k", type=int, default=DEFAULT_K)
    _window(p)
    p.add_argument("--out", help="output JSON (default stdout)")
    p.set_defaults(handler=cmd_similar)

    p = sub.add_parser("jsd-matrix", help="pairwise JSD among the busiest wards as a CSV matrix")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--top", type=int, default=15)
    p.add_argument("--category")
    p.add_argument("--force", action="store_true", help="keep low-support wards")
    _window(p)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_jsd_matrix)

    p = sub.add_parser("predict-batch", help="predict stable signatures of new venues, NRMSE report")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--criteria", default="TempSpec",
                   help=f"comma-separated subset of {','.join(CRITERIA)}")
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--threshold", type=float, default=DEFAULT_STATIONARITY_THRESHOLD)
    _cohort_flags(p)
    p.add_argument("--out", help="report CSV; a .summary.json is written alongside")
    p.set_defaults(handler=cmd_predict_batch)

    p = sub.add_parser("sweep-k", help="mean/median NRMSE as a function of k")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--criteria", default="TempSpec")
    p.add_argument("--ks", default="1,2,5,10,15,20")
    _cohort_flags(p)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_sweep_k)

    p = sub.add_parser("predict-online", help="month-ahead change forecasts, AUC per training month")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--criteria", default="History,SameSpec,Random",
                   help=f"comma-separated subset of {','.join(ONLINE_CRITERIA)}")
    p.add_argument("--months", default="2..6")
    p.add_argument("--k", type=int, default=DEFAULT_K)
    _cohort_flags(p)
    p.add_argument("--out", help="AUC CSV; per-venue records go to .records.csv alongside")
    p.set_defaults(handler=cmd_predict_online)

    p = sub.add_parser("report", help="summary JSON and long-format CSVs from run outputs")
    _common(p)
    p.add_argument("--results", help="directory scanned for batch reports and AUC tables")
    p.add_argument("--batch", help="comma-separated batch report CSVs")
    p.add_argument("--online", help="comma-separated AUC CSVs")
    p.add_argument("--out")
    p.set_defaults(handler=cmd_report)
    return parser


def _apply_config(parser, argv, args):
    """Re-parse with the --config file's keys as defaults so explicit flags win."""
    doc = json.loads(_existing(args.config, "config").read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ConfigError(f"{args.config}: config must be a JSON object")
    doc = {k.replace("-", "_"): v for k, v in doc.items()}
    known = set(vars(args)) - {"command", "handler", "config"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"{args.config}: unknown keys for {args.command}: {', '.join(unknown)}")
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    subparser.set_defaults(**doc)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("venue-pulse: error: a subcommand is required")
        if args.config and args.command != "simulate":
            args = _apply_config(parser, argv, args)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (VenuePulseError, OSError, json.JSONDecodeError) as exc:
        print(f"venue-pulse: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=getattr(logging, args.log_level), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except (VenuePulseError, FileNotFoundError, NotADirectoryError, IsADirectoryError,
            PermissionError, json.JSONDecodeError) as exc:
        print(f"venue-pulse {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - report, never traceback by default
        log.debug("internal error", exc_info=True)
        print(f"venue-pulse {args.command}: internal error: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
