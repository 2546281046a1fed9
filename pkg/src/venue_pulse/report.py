"""Run outputs: provenance headers, result CSVs and the summary/plot-data export.

Every file written here starts with a ``# key=value ...`` comment line carrying
the config digest and seed. Readers skip comment lines.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .batch import CRITERIA, improvement
from .errors import ConfigError

BATCH_FIELDS = ("venue_id", "criteria", "k", "nrmse", "status")
RECORD_FIELDS = ("venue_id", "criteria", "months", "predicted_ratio", "predicted_label",
                 "true_label", "true_ratio", "n_predictors")


def config_digest(config: Mapping) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def header_line(provenance: Optional[Mapping]) -> Optional[str]:
    if not provenance:
        return None
    return " ".join(f"{k}={provenance[k]}" for k in sorted(provenance))


def fmt_float(x) -> str:
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def _write_rows(path, fields: Sequence[str], rows: Iterable[Sequence], provenance=None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        head = header_line(provenance)
        if head:
            fh.write(f"# {head}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        w.writerows(rows)


def read_rows(path) -> tuple:
    """``(header, rows)`` of a CSV written by this module, comment lines skipped."""
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader, None)
    if header is None:
        raise ConfigError(f"{path}: empty file")
    return header, list(reader)


def _finite(obj):
    """Replace NaN and infinities by ``None`` so the output stays strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, Mapping):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def write_json(path, doc: Mapping) -> None:
    Path(path).write_text(json.dumps(_finite(doc), indent=2, sort_keys=True, allow_nan=False) + "\n",
                          encoding="utf-8")


# ---------------------------------------------------------------------------
# batch

def write_batch_csv(path, rows: Iterable[Mapping], provenance=None) -> None:
    rows = sorted(rows, key=lambda r: (r["criteria"], r["venue_id"]))
    _write_rows(path, BATCH_FIELDS,
                ([r["venue_id"], r["criteria"], r["k"], fmt_float(r["nrmse"]), r["status"]]
                 for r in rows), provenance)


def read_batch_csv(path) -> list:
    header, rows = read_rows(path)
    if tuple(header) != BATCH_FIELDS:
        raise ConfigError(f"{path}: not a batch report (header {','.join(header)})")
    return [{"venue_id": r[0], "criteria": r[1], "k": int(r[2]), "nrmse": float(r[3]),
             "status": r[4]} for r in rows]


def nrmse_table(rows: Sequence[Mapping]) -> list:
    """Criteria x (n, mean, median, improvement vs Random) from per-venue rows."""
    present = {r["criteria"] for r in rows}
    order = [c for c in CRITERIA if c in present] + sorted(present - set(CRITERIA))
    table = []
    for c in order:
        vals = sorted(r["nrmse"] for r in rows if r["criteria"] == c and r["status"] == "ok")
        n_bad = sum(1 for r in rows if r["criteria"] == c and r["status"] != "ok")
        mean = math.fsum(vals) / len(vals) if vals else math.nan
        if vals:
            mid = len(vals) // 2
            median = vals[mid] if len(vals) % 2 else 0.5 * (vals[mid - 1] + vals[mid])
        else:
            median = math.nan
        table.append({"criteria": c, "n": len(vals), "excluded": n_bad,
                      "mean_nrmse": mean, "median_nrmse": median})
    ref = next((t for t in table if t["criteria"] == "Random"), None)
    for t in table:
        for stat in ("mean", "median"):
            base = ref[f"{stat}_nrmse"] if ref else math.nan
            t[f"improvement_vs_random_{stat}"] = improvement(base, t[f"{stat}_nrmse"])
    return table


# ---------------------------------------------------------------------------
# online

def write_auc_csv(path, auc: Mapping[str, Mapping[int, float]], months: Sequence[int],
                  provenance=None) -> None:
    _write_rows(path, ["criteria"] + [str(m) for m in months],
                ([c] + [fmt_float(auc[c].get(m, math.nan)) for m in months] for c in auc),
                provenance)


def read_auc_csv(path) -> tuple:
    """``(months, {criteria: {month: auc}})``."""
    header, rows = read_rows(path)
    if not header or header[0] != "criteria" or not all(h.isdigit() for h in header[1:]):
        raise ConfigError(f"{path}: not an AUC table (header {','.join(header)})")
    months = [int(h) for h in header[1:]]
    return months, {r[0]: {m: float(x) for m, x in zip(months, r[1:])} for r in rows}


def write_records_csv(path, records: Iterable[Mapping], provenance=None) -> None:
    def cell(v):
        return fmt_float(v) if isinstance(v, float) else v
    recs = sorted(records, key=lambda r: (r["criteria"], r["months"], r["venue_id"]))
    _write_rows(path, RECORD_FIELDS, ([cell(r[f]) for f in RECORD_FIELDS] for r in recs),
                provenance)


# ---------------------------------------------------------------------------
# report subcommand

def _classify(path: Path) -> Optional[str]:
    try:
        header, _ = read_rows(path)
    except (ConfigError, UnicodeDecodeError):
        return None
    if tuple(header) == BATCH_FIELDS:
        return "batch"
    if header and header[0] == "criteria" and len(header) > 1 and all(h.isdigit() for h in header[1:]):
        return "auc"
    return None


def discover(results_dir) -> dict:
    """Batch reports and AUC tables found directly inside ``results_dir``."""
    found = {"batch": [], "auc": []}
    for p in sorted(Path(results_dir).glob("*.csv")):
        kind = _classify(p)
        if kind:
            found[kind].append(p)
    return found


def build_report(batch_paths: Sequence, auc_paths: Sequence, out_dir, provenance=None) -> dict:
    """Write summary.json plus long-format nrmse_long.csv / auc_long.csv into ``out_dir``."""
    if not batch_paths and not auc_paths:
        raise ConfigError("no batch report or AUC table to summarize")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"provenance": dict(provenance or {}),
               "inputs": [p.name for p in map(Path, list(batch_paths) + list(auc_paths))]}
    if batch_paths:
        rows = [r for p in batch_paths for r in read_batch_csv(p)]
        summary["nrmse"] = nrmse_table(rows)
        rows.sort(key=lambda r: (r["criteria"], r["k"], r["venue_id"]))
        _write_rows(out / "nrmse_long.csv", BATCH_FIELDS,
                    ([r["venue_id"], r["criteria"], r["k"], fmt_float(r["nrmse"]), r["status"]]
                     for r in rows), provenance)
    if auc_paths:
        grid, months = {}, set()
        for p in auc_paths:
            ms, table = read_auc_csv(p)
            months.update(ms)
            for c, row in table.items():
                grid.setdefault(c, {}).update(row)
        months = sorted(months)
        summary["auc"] = {"months": months,
                          "rows": [{"criteria": c, "auc": [grid[c].get(m, math.nan) for m in months]}
                                   for c in grid]}
        _write_rows(out / "auc_long.csv", ("criteria", "months", "auc"),
                    ([c, m, fmt_float(grid[c][m])] for c in grid for m in months if m in grid[c]),
                    provenance)
    write_json(out / "summary.json", summary)
    return summary
