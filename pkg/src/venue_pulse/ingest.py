"""Parse check-in, venue and ward files; assign venues to wards; pick the new-venue cohort."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping, Optional, Sequence, Union

import numpy as np

from .core import (CategoryTaxonomy, CheckIn, CheckinLog, TimeGrid, Venue, format_timestamp,
                   parse_timestamp, to_epoch)
from .errors import IngestError, TaxonomyError

log = logging.getLogger(__name__)

CHECKIN_FIELDS = ("venue_id", "timestamp", "user_id")
VENUE_FIELDS = ("venue_id", "lat", "lon", "general", "specific", "created_at", "total_checkins")
TRANSITION_FIELDS = ("from_venue_id", "to_venue_id", "timestamp")
DEFAULT_MAX_REJECT_RATE = 0.01

Source = Union[str, Path, IO]


@dataclass
class ParseReport:
    rows: int = 0
    rejected: int = 0
    samples: list = field(default_factory=list)

    @property
    def reject_rate(self) -> float:
        return self.rejected / self.rows if self.rows else 0.0

    def reject(self, line_no, row, reason, max_samples=5):
        self.rejected += 1
        if len(self.samples) < max_samples:
            self.samples.append(f"line {line_no}: {reason}: {row!r}")

    def enforce(self, what, max_reject_rate):
        if self.reject_rate > max_reject_rate:
            raise IngestError(f"{what}: {self.rejected}/{self.rows} rows rejected "
                              f"({self.reject_rate:.2%} > {max_reject_rate:.2%})", self.samples)
        if self.rejected:
            log.warning("%s: %d/%d malformed rows skipped", what, self.rejected, self.rows)

    def to_dict(self) -> dict:
        return {"rows": self.rows, "rejected": self.rejected, "samples": list(self.samples)}


def _open_text(source: Source):
    if isinstance(source, (str, Path)):
        return open(source, encoding="utf-8", newline=""), True
    if isinstance(source, io.TextIOBase):
        return source, False
    return io.TextIOWrapper(source, encoding="utf-8", newline=""), False


def _uncommented(lines: Iterable[str]) -> Iterator[str]:
    for line in lines:
        if not line.startswith("#"):
            yield line


def _csv_records(fh, expected: Sequence[str]) -> Iterator[tuple]:
    reader = csv.reader(_uncommented(fh))
    header = next(reader, None)
    if header is None:
        return
    header = [h.strip() for h in header]
    missing = [f for f in expected if f not in header and f != "user_id"]
    if missing:
        raise IngestError(f"missing columns {missing}; got header {header}")
    pos = {name: header.index(name) for name in expected if name in header}
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        rec = {name: row[i].strip() if i < len(row) else None for name, i in pos.items()}
        yield line_no, row, rec


def _jsonl_records(fh) -> Iterator[tuple]:
    for line_no, line in enumerate(_uncommented(fh), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            if not isinstance(rec, dict):
                raise ValueError("not an object")
        except ValueError:
            yield line_no, line.rstrip("\n"), None
            continue
        yield line_no, line.rstrip("\n"), rec


def iter_checkin_rows(source: Source, fmt: str, report: ParseReport) -> Iterator[tuple]:
    """Yield ``(venue_id, epoch_seconds, user_id)``; malformed rows go to ``report``."""
    if fmt not in ("csv", "jsonl"):
        raise IngestError(f"unsupported check-in format {fmt!r}")
    fh, owned = _open_text(source)
    try:
        records = _csv_records(fh, CHECKIN_FIELDS) if fmt == "csv" else _jsonl_records(fh)
        for line_no, raw, rec in records:
            report.rows += 1
            if rec is None:
                report.reject(line_no, raw, "unparseable record")
                continue
            venue, ts = rec.get("venue_id"), rec.get("timestamp")
            if not venue or not ts:
                report.reject(line_no, raw, "missing venue_id or timestamp")
                continue
            try:
                epoch = to_epoch(parse_timestamp(str(ts)))
            except ValueError:
                report.reject(line_no, raw, "invalid timestamp")
                continue
            user = rec.get("user_id") or None
            yield str(venue), epoch, None if user is None else str(user)
    finally:
        if owned:
            fh.close()


def parse_checkins(source: Source, fmt: str = "csv",
                   max_reject_rate: float = DEFAULT_MAX_REJECT_RATE):
    """Parse check-in records. Returns ``(checkins, report)``.

    Rows with a missing field or bad timestamp are counted as rejects; more than
    ``max_reject_rate`` of them raises :class:`IngestError` carrying row samples.
    """
    report = ParseReport()
    out = [CheckIn(v, datetime.fromtimestamp(e, tz=timezone.utc), u)
           for v, e, u in iter_checkin_rows(source, fmt, report)]
    report.enforce("check-ins", max_reject_rate)
    return out, report


def read_checkin_log(source: Source, venue_ids: Sequence[str], fmt: str = "csv",
                     max_reject_rate: float = DEFAULT_MAX_REJECT_RATE,
                     window: Optional[tuple] = None):
    """Columnar variant of :func:`parse_checkins`.

    Events at unknown venues, or outside ``window`` (epoch half-open interval),
    are rejected.
    """
    report = ParseReport()
    lookup = {v: i for i, v in enumerate(venue_ids)}
    idx, ts, users = [], [], []
    for venue, epoch, user in iter_checkin_rows(source, fmt, report):
        k = lookup.get(venue)
        if k is None:
            report.reject(report.rows, venue, "unknown venue")
            continue
        if window is not None and not window[0] <= epoch < window[1]:
            report.reject(report.rows, venue, "timestamp outside observation window")
            continue
        idx.append(k)
        ts.append(epoch)
        users.append(user)
    report.enforce("check-ins", max_reject_rate)
    return CheckinLog(tuple(venue_ids), np.array(idx, np.int64), np.array(ts, np.int64),
                      np.array(users, dtype=object)), report


@dataclass(frozen=True)
class Transition:
    """A user moving from one venue to another. Stored with the dataset, used by no algorithm."""

    from_venue: str
    to_venue: str
    timestamp: int  # epoch seconds


def parse_transitions(source: Source, max_reject_rate: float = DEFAULT_MAX_REJECT_RATE):
    """Parse ``from_venue_id,to_venue_id,timestamp`` rows. Returns ``(transitions, report)``."""
    report = ParseReport()
    out = []
    fh, owned = _open_text(source)
    try:
        for line_no, raw, rec in _csv_records(fh, TRANSITION_FIELDS):
            report.rows += 1
            if not rec.get("from_venue_id") or not rec.get("to_venue_id") or not rec.get("timestamp"):
                report.reject(line_no, raw, "missing field")
                continue
            try:
                epoch = to_epoch(parse_timestamp(rec["timestamp"]))
            except ValueError:
                report.reject(line_no, raw, "invalid timestamp")
                continue
            out.append(Transition(rec["from_venue_id"], rec["to_venue_id"], epoch))
    finally:
        if owned:
            fh.close()
    report.enforce("transitions", max_reject_rate)
    return tuple(out), report


def write_transitions_csv(path, transitions: Iterable[Transition],
                          header_comment: Optional[str] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRANSITION_FIELDS)
        for t in sorted(transitions, key=lambda t: (t.timestamp, t.from_venue, t.to_venue)):
            w.writerow((t.from_venue, t.to_venue, format_timestamp(t.timestamp)))


def _parse_date(text: str) -> date:
    text = text.strip()
    if len(text) == 10:
        return date.fromisoformat(text)
    return parse_timestamp(text).date()


def parse_venues(source: Source, max_reject_rate: float = DEFAULT_MAX_REJECT_RATE):
    """Parse ``venues.csv``. Returns ``(venues, report)``."""
    report = ParseReport()
    out = []
    fh, owned = _open_text(source)
    try:
        for line_no, raw, rec in _csv_records(fh, VENUE_FIELDS):
            report.rows += 1
            try:
                out.append(Venue(id=rec["venue_id"], lat=float(rec["lat"]), lon=float(rec["lon"]),
                                 general=rec["general"], specific=rec["specific"],
                                 created_at=_parse_date(rec["created_at"]),
                                 total_checkins=int(rec["total_checkins"])))
            except (TypeError, ValueError) as exc:
                report.reject(line_no, raw, str(exc))
    finally:
        if owned:
            fh.close()
    report.enforce("venues", max_reject_rate)
    return out, report


def taxonomy_from_venues(venues: Iterable[Venue]) -> CategoryTaxonomy:
    parent = {}
    for v in venues:
        if parent.setdefault(v.specific, v.general) != v.general:
            raise TaxonomyError(f"specific category {v.specific!r} listed under both "
                                f"{parent[v.specific]!r} and {v.general!r}")
    return CategoryTaxonomy(parent)


# ---------------------------------------------------------------------------
# Wards

def ward_sort_key(ward_id: str):
    """Numeric ids order numerically, everything else lexicographically after them."""
    return (0, int(ward_id), "") if ward_id.isdigit() else (1, 0, ward_id)


def _on_segment(py, px, y1, x1, y2, x2, eps=1e-12) -> bool:
    cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
    scale = max(abs(x2 - x1), abs(y2 - y1), 1.0)
    if abs(cross) > eps * scale:
        return False
    return (min(x1, x2) - eps <= px <= max(x1, x2) + eps
            and min(y1, y2) - eps <= py <= max(y1, y2) + eps)


def point_in_polygon(lat: float, lon: float, rings: Sequence[Sequence[tuple]]) -> Optional[bool]:
    """Even-odd ray casting over all rings of one polygon (holes included).

    Returns ``None`` when the point lies on a ring boundary, otherwise a bool.
    """
    inside = False
    for ring in rings:
        for (y1, x1), (y2, x2) in zip(ring[:-1], ring[1:]):
            if _on_segment(lat, lon, y1, x1, y2, x2):
                return None
            if (y1 > lat) != (y2 > lat):
                x_cross = x1 + (lat - y1) * (x2 - x1) / (y2 - y1)
                if lon < x_cross:
                    inside = not inside
    return inside


@dataclass(frozen=True)
class Ward:
    ward_id: str
    polygons: tuple  # polygons -> rings -> (lat, lon) points
    bbox: tuple = None  # (min_lat, min_lon, max_lat, max_lon)

    def __post_init__(self):
        for poly in self.polygons:
            for ring in poly:
                if len(ring) < 4 or tuple(ring[0]) != tuple(ring[-1]):
                    raise IngestError(f"ward {self.ward_id}: ring must be closed with >= 4 points")
        pts = [p for poly in self.polygons for ring in poly for p in ring]
        lats, lons = [p[0] for p in pts], [p[1] for p in pts]
        object.__setattr__(self, "bbox", (min(lats), min(lons), max(lats), max(lons)))

    def contains(self, lat: float, lon: float) -> bool:
        """Closed containment: boundary points count as inside."""
        b = self.bbox
        if not (b[0] <= lat <= b[2] and b[1] <= lon <= b[3]):
            return False
        for poly in self.polygons:
            hit = point_in_polygon(lat, lon, poly)
            if hit is None or hit:
                return True
        return False


@dataclass
class WardIndex:
    wards: list
    venue_to_ward: dict = field(default_factory=dict)
    unassigned: list = field(default_factory=list)

    def __post_init__(self):
        self.wards = sorted(self.wards, key=lambda w: ward_sort_key(w.ward_id))
        ids = [w.ward_id for w in self.wards]
        if len(set(ids)) != len(ids):
            raise IngestError("duplicate ward_id in ward boundaries")

    @property
    def ward_ids(self) -> list:
        return [w.ward_id for w in self.wards]

    def assign(self, venues: Iterable[Venue]) -> None:
        self.venue_to_ward, self.unassigned = {}, []
        for v in venues:
            ward = assign_ward(v.loc, self)
            if ward is None:
                self.unassigned.append(v.id)
            else:
                self.venue_to_ward[v.id] = ward
        if self.unassigned:
            log.warning("%d venues fall outside every ward", len(self.unassigned))


def assign_ward(loc: tuple, index: WardIndex) -> Optional[str]:
    """Ward containing ``loc``; on shared boundaries the lowest ward id wins."""
    lat, lon = loc
    for ward in index.wards:  # sorted by ward id
        if ward.contains(lat, lon):
            return ward.ward_id
    return None


def _rings_latlon(rings) -> tuple:
    return tuple(tuple((float(pt[1]), float(pt[0])) for pt in ring) for ring in rings)


def load_wards(source: Source) -> WardIndex:
    """Read a GeoJSON FeatureCollection with a ``ward_id`` property per feature."""
    if isinstance(source, (str, Path)):
        data = json.loads(Path(source).read_text(encoding="utf-8"))
    else:
        data = json.load(source)
    if data.get("type") != "FeatureCollection":
        raise IngestError("ward file must be a GeoJSON FeatureCollection")
    wards = []
    for feat in data.get("features", []):
        props = feat.get("properties") or {}
        if "ward_id" not in props:
            raise IngestError("ward feature without 'ward_id' property")
        geom = feat.get("geometry") or {}
        if geom.get("type") == "Polygon":
            polys = (_rings_latlon(geom["coordinates"]),)
        elif geom.get("type") == "MultiPolygon":
            polys = tuple(_rings_latlon(p) for p in geom["coordinates"])
        else:
            raise IngestError(f"ward {props['ward_id']}: unsupported geometry {geom.get('type')!r}")
        wards.append(Ward(str(props["ward_id"]), polys))
    return WardIndex(wards)


def wards_to_geojson(wards: Sequence[Ward], metadata: Optional[dict] = None) -> dict:
    feats = []
    for w in sorted(wards, key=lambda w: ward_sort_key(w.ward_id)):
        coords = [[[[lon, lat] for lat, lon in ring] for ring in poly] for poly in w.polygons]
        geom = ({"type": "Polygon", "coordinates": coords[0]} if len(coords) == 1
                else {"type": "MultiPolygon", "coordinates": coords})
        feats.append({"type": "Feature", "properties": {"ward_id": w.ward_id}, "geometry": geom})
    doc = {"type": "FeatureCollection", "features": feats}
    if metadata:
        doc["metadata"] = metadata
    return doc


# ---------------------------------------------------------------------------
# Cohort

@dataclass(frozen=True)
class NewVenueCohort:
    members: frozenset
    cutoff_date: date
    min_checkins: int

    def __len__(self):
        return len(self.members)

    def sorted(self) -> list:
        return sorted(self.members)


DEFAULT_CUTOFF = date(2011, 6, 30)
DEFAULT_MIN_CHECKINS = 100


def identify_new_venues(venues: Iterable[Venue], cutoff_date: date = DEFAULT_CUTOFF,
                        min_checkins: int = DEFAULT_MIN_CHECKINS) -> NewVenueCohort:
    members = frozenset(v.id for v in venues
                        if v.created_at > cutoff_date and v.total_checkins >= min_checkins)
    return NewVenueCohort(members, cutoff_date, min_checkins)


# ---------------------------------------------------------------------------
# Dataset

@dataclass
class Dataset:
    """Ingested, ward-assigned data ready for profiling."""

    venues: dict
    checkins: CheckinLog
    wards: WardIndex
    taxonomy: CategoryTaxonomy
    grid: TimeGrid
    window_end: int  # epoch seconds, exclusive
    transitions: tuple = ()

    @property
    def venue_ids(self) -> tuple:
        return self.checkins.venue_ids

    @property
    def window_start(self) -> int:
        return self.grid.origin_epoch

    def ward_of(self, venue_id: str) -> Optional[str]:
        return self.wards.venue_to_ward.get(venue_id)


def build_dataset(venues: Sequence[Venue], checkins: CheckinLog, wards: WardIndex,
                  taxonomy: Optional[CategoryTaxonomy] = None, grid: Optional[TimeGrid] = None,
                  window_end: Optional[int] = None) -> Dataset:
    venues = sorted(venues, key=lambda v: v.id)
    taxonomy = taxonomy or taxonomy_from_venues(venues)
    for v in venues:
        if taxonomy.parent.get(v.specific) != v.general:
            raise TaxonomyError(f"venue {v.id}: {v.specific!r} does not map to {v.general!r}")
    ids = [v.id for v in venues]
    checkins = checkins.reindexed(ids)
    if grid is None:
        first = int(checkins.timestamps.min()) if len(checkins) else 0
        grid = TimeGrid.weekly(datetime.fromtimestamp(first, tz=timezone.utc))
    if window_end is None:
        last = int(checkins.timestamps.max()) if len(checkins) else grid.origin_epoch
        window_end = (last // 3600 + 1) * 3600
    if len(checkins) and checkins.timestamps.min() < grid.origin_epoch:
        raise IngestError("check-ins precede the time grid origin")
    wards.assign(venues)
    return Dataset({v.id: v for v in venues}, checkins, wards, taxonomy, grid, int(window_end))


def write_checkins_csv(path, dataset_or_log, header_comment: Optional[str] = None) -> None:
    checkins = getattr(dataset_or_log, "checkins", dataset_or_log)
    order = np.lexsort((checkins.venue_index, checkins.timestamps))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CHECKIN_FIELDS)
        users = checkins.user_ids
        coded = users is not None and users.dtype.kind in "iu"
        for k in order:
            if users is None or users[k] is None:
                user = ""
            else:
                user = f"u{users[k]}" if coded else users[k]
            w.writerow((checkins.venue_ids[checkins.venue_index[k]],
                        format_timestamp(checkins.timestamps[k]), user))


def write_venues_csv(path, venues: Iterable[Venue], venue_to_ward: Optional[Mapping] = None,
                     header_comment: Optional[str] = None) -> None:
    cols = list(VENUE_FIELDS) + (["ward_id"] if venue_to_ward is not None else [])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for v in sorted(venues, key=lambda v: v.id):
            row = [v.id, repr(float(v.lat)), repr(float(v.lon)), v.general, v.specific,
                   v.created_at.isoformat(), v.total_checkins]
            if venue_to_ward is not None:
                row.append(venue_to_ward.get(v.id, ""))
            w.writerow(row)


def ingest_files(checkins_path, venues_path, wards_path, taxonomy_path=None,
                 fmt: str = "csv", max_reject_rate: float = DEFAULT_MAX_REJECT_RATE,
                 utc_offset_hours: float = 0.0, grid_start: Optional[date] = None,
                 window_end: Optional[int] = None, transitions_path=None):
    """Parse the three input files into a :class:`Dataset`. Returns ``(dataset, stats)``."""
    venues, vrep = parse_venues(venues_path, max_reject_rate)
    taxonomy = CategoryTaxonomy.load(taxonomy_path) if taxonomy_path else None
    ids = sorted(v.id for v in venues)
    log_, crep = read_checkin_log(checkins_path, ids, fmt, max_reject_rate)
    grid = None
    if grid_start is not None:
        grid = TimeGrid.weekly(grid_start, utc_offset_hours)
    elif len(log_):
        first = datetime.fromtimestamp(int(log_.timestamps.min()), tz=timezone.utc)
        grid = TimeGrid.weekly(first, utc_offset_hours)
    wards = load_wards(wards_path)
    ds = build_dataset(venues, log_, wards, taxonomy, grid, window_end)
    stats = {"venues": vrep.to_dict(), "checkins": crep.to_dict(),
             "unassigned_venues": list(ds.wards.unassigned)}
    if transitions_path is not None:
        ds.transitions, trep = parse_transitions(transitions_path, max_reject_rate)
        stats["transitions"] = trep.to_dict()
    return ds, stats


def save_dataset(ds: Dataset, out_dir, stats: Optional[dict] = None,
                 provenance: Optional[dict] = None) -> None:
    """Write an ingested dataset directory readable by :func:`load_dataset`."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    comment = None
    if provenance:
        comment = " ".join(f"{k}={provenance[k]}" for k in sorted(provenance))
    write_venues_csv(out / "venues.csv", ds.venues.values(), ds.wards.venue_to_ward, comment)
    write_checkins_csv(out / "checkins.csv", ds.checkins, comment)
    (out / "wards.geojson").write_text(
        json.dumps(wards_to_geojson(ds.wards.wards, provenance), sort_keys=True) + "\n",
        encoding="utf-8")
    ds.taxonomy.dump(out / "taxonomy.json")
    if ds.transitions:
        write_transitions_csv(out / "transitions.csv", ds.transitions, comment)
    meta = {"grid_origin": ds.grid.origin.strftime("%Y-%m-%dT%H:%M:%SZ"),
            "grid_delta": ds.grid.delta, "grid_T": ds.grid.T,
            "window_end": format_timestamp(ds.window_end),
            "n_venues": len(ds.venues), "n_checkins": len(ds.checkins),
            "n_wards": len(ds.wards.wards), "unassigned_venues": sorted(ds.wards.unassigned)}
    if stats:
        meta["parse"] = stats
    if provenance:
        meta["provenance"] = provenance
    (out / "dataset.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")


def load_dataset(data_dir) -> Dataset:
    d = Path(data_dir)
    missing = [n for n in ("venues.csv", "checkins.csv", "wards.geojson") if not (d / n).exists()]
    if missing:
        raise IngestError(f"{d}: missing {', '.join(missing)}")
    meta = {}
    if (d / "dataset.json").exists():
        meta = json.loads((d / "dataset.json").read_text(encoding="utf-8"))
    taxonomy = CategoryTaxonomy.load(d / "taxonomy.json") if (d / "taxonomy.json").exists() else None
    venues, _ = parse_venues(d / "venues.csv")
    ids = sorted(v.id for v in venues)
    checkins, _ = read_checkin_log(d / "checkins.csv", ids)
    grid = None
    if "grid_origin" in meta:
        grid = TimeGrid(parse_timestamp(meta["grid_origin"]), meta.get("grid_delta", 3600),
                        meta.get("grid_T", 168))
    end = to_epoch(parse_timestamp(meta["window_end"])) if "window_end" in meta else None
    ds = build_dataset(venues, checkins, load_wards(d / "wards.geojson"), taxonomy, grid, end)
    if (d / "transitions.csv").exists():
        ds.transitions, _ = parse_transitions(d / "transitions.csv")
    return ds
