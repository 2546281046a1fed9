"""Foundational types: time grid, check-ins, venues and the category taxonomy."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, OutOfWindowError, TaxonomyError

HOURS_PER_WEEK = 168
SECONDS_PER_HOUR = 3600
SECONDS_PER_DAY = 86400
SECONDS_PER_WEEK = 604800

Instant = Union[datetime, int, float, np.integer]


def parse_timestamp(text: str) -> datetime:
    """Parse an RFC 3339 timestamp into an aware UTC datetime."""
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(epoch: int) -> str:
    return datetime.fromtimestamp(int(epoch), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def to_epoch(ts: Instant) -> int:
    """Seconds since the Unix epoch; naive datetimes are taken as UTC."""
    if isinstance(ts, datetime):
        if ts.tzinfo is None:
            ts = ts.replace(tzinfo=timezone.utc)
        return int(ts.timestamp())
    return int(ts)


def date_to_epoch(d: date) -> int:
    return to_epoch(datetime(d.year, d.month, d.day, tzinfo=timezone.utc))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of time into half-open intervals ``[t*delta, (t+1)*delta)``.

    ``origin`` is the UTC instant of interval 0. For weekly profiles the origin
    should sit on the configured week start (Monday 00:00 in dataset time).
    """

    origin: datetime
    delta: int = SECONDS_PER_HOUR
    T: int = HOURS_PER_WEEK

    def __post_init__(self):
        if self.delta <= 0 or self.T <= 0:
            raise ConfigError(f"invalid time grid: delta={self.delta}, T={self.T}")
        if self.origin.tzinfo is None:
            object.__setattr__(self, "origin", self.origin.replace(tzinfo=timezone.utc))

    @classmethod
    def weekly(cls, start: Union[date, datetime], utc_offset_hours: float = 0.0,
               week_start: int = 0) -> "TimeGrid":
        """Hourly grid whose origin is the week start (0=Monday) at or before ``start``.

        ``utc_offset_hours`` is the dataset's fixed offset from UTC; local
        midnight is mapped back to its UTC instant.
        """
        d = start.date() if isinstance(start, datetime) else start
        d = d - timedelta(days=(d.weekday() - week_start) % 7)
        local_midnight = datetime(d.year, d.month, d.day, tzinfo=timezone.utc)
        return cls(origin=local_midnight - timedelta(hours=utc_offset_hours))

    @property
    def origin_epoch(self) -> int:
        return to_epoch(self.origin)

    @property
    def is_weekly_hourly(self) -> bool:
        return self.delta == SECONDS_PER_HOUR and self.T == HOURS_PER_WEEK

    def bins(self, epochs: np.ndarray) -> np.ndarray:
        """Vectorized :func:`time_bin` over an array of epoch seconds."""
        offsets = np.asarray(epochs, dtype=np.int64) - self.origin_epoch
        if offsets.size and offsets.min() < 0:
            raise OutOfWindowError("event before grid origin")
        return offsets // self.delta

    def hours_of_week(self, epochs: np.ndarray) -> np.ndarray:
        if not self.is_weekly_hourly:
            raise ConfigError("hour-of-week folding needs an hourly grid with T=168")
        return self.bins(epochs) % HOURS_PER_WEEK


def time_bin(ts: Instant, grid: TimeGrid) -> int:
    """Index of the half-open interval containing ``ts``."""
    offset = to_epoch(ts) - grid.origin_epoch
    if offset < 0:
        raise OutOfWindowError(f"timestamp {ts!r} precedes grid origin {grid.origin.isoformat()}")
    return offset // grid.delta


def hour_of_week(ts: Instant, grid: TimeGrid) -> int:
    if not grid.is_weekly_hourly:
        raise ConfigError("hour_of_week requires delta=3600 s and T=168")
    return time_bin(ts, grid) % HOURS_PER_WEEK


@dataclass(frozen=True)
class CheckIn:
    venue_id: str
    timestamp: datetime
    user_id: Optional[str] = None


@dataclass(frozen=True)
class Venue:
    id: str
    lat: float
    lon: float
    general: str
    specific: str
    created_at: date
    total_checkins: int = 0

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0 or not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"venue {self.id}: coordinates out of range ({self.lat}, {self.lon})")
        if self.total_checkins < 0:
            raise ValueError(f"venue {self.id}: negative check-in count")

    @property
    def loc(self) -> tuple:
        return (self.lat, self.lon)

    @property
    def created_epoch(self) -> int:
        return date_to_epoch(self.created_at)


@dataclass(frozen=True)
class CategoryTaxonomy:
    """Two-level category tree: every specific category has exactly one general parent."""

    parent: Mapping[str, str]

    def __post_init__(self):
        object.__setattr__(self, "parent", dict(self.parent))

    @property
    def general(self) -> frozenset:
        return frozenset(self.parent.values())

    @property
    def specific(self) -> frozenset:
        return frozenset(self.parent)

    def children(self, general: str) -> list:
        return sorted(s for s, g in self.parent.items() if g == general)

    def is_general(self, category: str) -> bool:
        return category in self.general

    def check(self, category: str) -> str:
        if category not in self.parent and category not in self.general:
            raise TaxonomyError(f"unknown category {category!r}")
        return category

    @classmethod
    def from_tree(cls, tree: Mapping[str, Sequence[str]]) -> "CategoryTaxonomy":
        parent = {}
        for general, children in tree.items():
            if not children:
                raise TaxonomyError(f"general category {general!r} has no children")
            for s in children:
                if s in parent and parent[s] != general:
                    raise TaxonomyError(f"specific category {s!r} has two parents: "
                                        f"{parent[s]!r} and {general!r}")
                parent[s] = general
        return cls(parent)

    @classmethod
    def load(cls, path) -> "CategoryTaxonomy":
        with open(path, encoding="utf-8") as fh:
            return cls.from_tree(json.load(fh))

    def to_tree(self) -> dict:
        return {g: self.children(g) for g in sorted(self.general)}

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_tree(), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")


def category_resolve(specific: str, tax: CategoryTaxonomy) -> str:
    try:
        return tax.parent[specific]
    except KeyError:
        raise TaxonomyError(f"unknown specific category {specific!r}") from None


@dataclass(frozen=True)
class CheckinLog:
    """Columnar store of check-ins.

    ``venue_index`` indexes into ``venue_ids``; ``timestamps`` are epoch
    seconds. Iterating yields :class:`CheckIn` records.
    """

    venue_ids: tuple
    venue_index: np.ndarray
    timestamps: np.ndarray
    user_ids: Optional[np.ndarray] = None
    _lookup: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "venue_ids", tuple(self.venue_ids))
        object.__setattr__(self, "venue_index", np.asarray(self.venue_index, dtype=np.int64))
        object.__setattr__(self, "timestamps", np.asarray(self.timestamps, dtype=np.int64))
        if self.venue_index.shape != self.timestamps.shape:
            raise ValueError("venue_index and timestamps differ in length")
        object.__setattr__(self, "_lookup", {v: i for i, v in enumerate(self.venue_ids)})

    def __len__(self) -> int:
        return int(self.timestamps.size)

    def __iter__(self) -> Iterator[CheckIn]:
        for k in range(len(self)):
            user = None if self.user_ids is None else self.user_ids[k]
            yield CheckIn(self.venue_ids[self.venue_index[k]],
                          datetime.fromtimestamp(int(self.timestamps[k]), tz=timezone.utc),
                          user)

    def index_of(self, venue_id: str) -> int:
        return self._lookup[venue_id]

    @classmethod
    def empty(cls, venue_ids: Sequence[str] = ()) -> "CheckinLog":
        return cls(tuple(venue_ids), np.zeros(0, np.int64), np.zeros(0, np.int64))

    @classmethod
    def from_checkins(cls, checkins: Iterable[CheckIn],
                      venue_ids: Optional[Sequence[str]] = None) -> "CheckinLog":
        """Build from records; unknown venue ids raise ``KeyError`` when ``venue_ids`` is given."""
        order = list(venue_ids) if venue_ids is not None else []
        lookup = {v: i for i, v in enumerate(order)}
        idx, ts, users = [], [], []
        for c in checkins:
            if c.venue_id not in lookup:
                if venue_ids is not None:
                    raise KeyError(c.venue_id)
                lookup[c.venue_id] = len(order)
                order.append(c.venue_id)
            idx.append(lookup[c.venue_id])
            ts.append(to_epoch(c.timestamp))
            users.append(c.user_id)
        return cls(tuple(order), np.array(idx, np.int64), np.array(ts, np.int64),
                   np.array(users, dtype=object))

    def select(self, mask: np.ndarray) -> "CheckinLog":
        users = None if self.user_ids is None else self.user_ids[mask]
        return CheckinLog(self.venue_ids, self.venue_index[mask], self.timestamps[mask], users)

    def reindexed(self, venue_ids: Sequence[str]) -> "CheckinLog":
        """Same events, codebook replaced by ``venue_ids`` (must cover every used venue)."""
        lookup = {v: i for i, v in enumerate(venue_ids)}
        remap = np.array([lookup.get(v, -1) for v in self.venue_ids], dtype=np.int64)
        new_idx = remap[self.venue_index] if len(self) else self.venue_index
        if new_idx.size and new_idx.min() < 0:
            missing = sorted({self.venue_ids[i] for i in np.unique(self.venue_index[new_idx < 0])})
            raise KeyError(f"check-ins reference unknown venues: {missing[:5]}")
        return CheckinLog(tuple(venue_ids), new_idx, self.timestamps, self.user_ids)

    def counts_per_venue(self) -> np.ndarray:
        return np.bincount(self.venue_index, minlength=len(self.venue_ids))
