"""Weekly temporal profiles of wards, venues and categories-within-wards.

Everything is derived from one venue x hour-of-week count matrix, so venue,
category-ward and ward profiles are additive by construction.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .core import HOURS_PER_WEEK, SECONDS_PER_WEEK
from .errors import ProfileError, TaxonomyError

log = logging.getLogger(__name__)

RAW = "raw"
NORMALIZED = "normalized"
CUMULATIVE = "cumulative-normalized"

DEFAULT_STATIONARITY_THRESHOLD = 2.6e-5
DEFAULT_MIN_SUPPORT = 10


@dataclass(frozen=True)
class TemporalProfile:
    """Length-T series of check-in mass for one subject.

    ``total`` is the raw event count behind the profile, retained after
    normalization so low-support profiles can still be recognised.
    """

    values: np.ndarray
    kind: str = RAW
    subject: str = ""
    total: float = float("nan")

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if np.isnan(self.total):
            object.__setattr__(self, "total", float(vals.sum()))
        if self.kind in (NORMALIZED, CUMULATIVE) and abs(vals.sum() - 1.0) > 1e-9:
            raise ProfileError(f"{self.subject}: normalized profile sums to {vals.sum()!r}")

    def __len__(self):
        return self.values.size

    @property
    def T(self) -> int:
        return self.values.size

    def low_support(self, floor: float = DEFAULT_MIN_SUPPORT) -> bool:
        return self.total < floor


def normalize(profile) -> TemporalProfile:
    """Divide by the total mass; all-zero profiles cannot be normalized."""
    if not isinstance(profile, TemporalProfile):
        profile = TemporalProfile(np.asarray(profile, dtype=float))
    s = profile.values.sum()
    if not s > 0:
        raise ProfileError(f"cannot normalize all-zero profile {profile.subject!r}")
    kind = profile.kind if profile.kind == CUMULATIVE else NORMALIZED
    return TemporalProfile(profile.values / s, kind, profile.subject, profile.total)


class CityProfiles:
    """Profile cache over a dataset restricted to ``[after, before)`` (epoch seconds).

    ``aggregate="mean"`` divides the weekly sums by the number of weeks spanned
    by the window; the default is the plain sum.
    """

    def __init__(self, dataset, before: Optional[int] = None, after: Optional[int] = None,
                 aggregate: str = "sum"):
        if aggregate not in ("sum", "mean"):
            raise ValueError(f"aggregate must be 'sum' or 'mean', got {aggregate!r}")
        self.dataset = dataset
        self.before, self.after = before, after
        self.aggregate = aggregate
        log_ = dataset.checkins
        mask = np.ones(len(log_), dtype=bool)
        if before is not None:
            mask &= log_.timestamps < before
        if after is not None:
            mask &= log_.timestamps >= after
        ts = log_.timestamps[mask]
        how = dataset.grid.hours_of_week(ts)
        n = len(log_.venue_ids)
        counts = np.bincount(log_.venue_index[mask] * HOURS_PER_WEEK + how,
                             minlength=n * HOURS_PER_WEEK).reshape(n, HOURS_PER_WEEK)
        self.counts = counts.astype(float)
        start = after if after is not None else dataset.window_start
        end = before if before is not None else dataset.window_end
        self.n_weeks = max((end - start) / SECONDS_PER_WEEK, 1e-12)

        self.venue_ids = log_.venue_ids
        self._venue_row = {v: i for i, v in enumerate(self.venue_ids)}
        self.ward_ids = list(dataset.wards.ward_ids)
        self._ward_col = {w: i for i, w in enumerate(self.ward_ids)}
        venues = dataset.venues
        self.venue_ward = np.array([self._ward_col.get(dataset.ward_of(v), -1)
                                    for v in self.venue_ids], dtype=np.int64)
        self.venue_general = np.array([venues[v].general for v in self.venue_ids], dtype=object)
        self.venue_specific = np.array([venues[v].specific for v in self.venue_ids], dtype=object)
        self._ward_mats = {}

    # -- raw matrices -----------------------------------------------------

    def _scale(self, arr):
        return arr / self.n_weeks if self.aggregate == "mean" else arr

    def category_mask(self, category: Optional[str]) -> np.ndarray:
        if category is None:
            return np.ones(len(self.venue_ids), dtype=bool)
        tax = self.dataset.taxonomy
        if category in tax.general:
            return self.venue_general == category
        if category in tax.specific:
            return self.venue_specific == category
        raise TaxonomyError(f"unknown category {category!r}")

    def ward_matrix(self, category: Optional[str] = None) -> np.ndarray:
        """Wards x 168 raw counts for ``category`` (``None`` = all categories)."""
        if category not in self._ward_mats:
            sel = self.category_mask(category) & (self.venue_ward >= 0)
            mat = np.zeros((len(self.ward_ids), HOURS_PER_WEEK))
            np.add.at(mat, self.venue_ward[sel], self.counts[sel])
            self._ward_mats[category] = mat
        return self._ward_mats[category]

    def venue_counts(self, venue_id: str) -> np.ndarray:
        return self.counts[self._row(venue_id)]

    def _row(self, venue_id):
        try:
            return self._venue_row[venue_id]
        except KeyError:
            raise ProfileError(f"unknown venue {venue_id!r}") from None

    def _col(self, ward_id):
        try:
            return self._ward_col[ward_id]
        except KeyError:
            raise ProfileError(f"unknown ward {ward_id!r}") from None

    # -- profiles ---------------------------------------------------------

    def ward_profile(self, ward_id: str) -> TemporalProfile:
        raw = self.ward_matrix(None)[self._col(ward_id)]
        return TemporalProfile(self._scale(raw), RAW, ward_id, raw.sum())

    def venue_profile(self, venue_id: str) -> TemporalProfile:
        raw = self.venue_counts(venue_id)
        return TemporalProfile(self._scale(raw), RAW, venue_id, raw.sum())

    def category_ward_profile(self, category: Optional[str], ward_id: str) -> TemporalProfile:
        raw = self.ward_matrix(category)[self._col(ward_id)]
        return TemporalProfile(self._scale(raw), RAW, f"{category}@{ward_id}", raw.sum())

    def city_profile(self, category: Optional[str] = None) -> TemporalProfile:
        raw = self.counts[self.category_mask(category) & (self.venue_ward >= 0)].sum(axis=0)
        return TemporalProfile(self._scale(raw), RAW, f"{category or 'all'}@city", raw.sum())

    def ward_totals(self, category: Optional[str] = None) -> np.ndarray:
        return self.ward_matrix(category).sum(axis=1)

    def venues_in_ward(self, ward_id: str, category: Optional[str] = None) -> list:
        sel = self.category_mask(category) & (self.venue_ward == self._col(ward_id))
        return [self.venue_ids[i] for i in np.flatnonzero(sel)]


def _window_store(dataset, window, aggregate="sum") -> CityProfiles:
    after, before = window if window is not None else (None, None)
    return CityProfiles(dataset, before=before, after=after, aggregate=aggregate)


def ward_profile(dataset, ward_id: str, window: Optional[tuple] = None,
                 aggregate: str = "sum") -> TemporalProfile:
    """Check-ins to any venue of ``ward_id`` per hour-of-week, summed over the window."""
    return _window_store(dataset, window, aggregate).ward_profile(ward_id)


def venue_profile(dataset, venue_id: str, window: Optional[tuple] = None,
                  aggregate: str = "sum") -> TemporalProfile:
    return _window_store(dataset, window, aggregate).venue_profile(venue_id)


def category_ward_profile(dataset, category: str, ward_id: str, window: Optional[tuple] = None,
                          aggregate: str = "sum") -> TemporalProfile:
    """Profile of the venues of a general or specific category inside one ward."""
    return _window_store(dataset, window, aggregate).category_ward_profile(category, ward_id)


# ---------------------------------------------------------------------------
# New-venue weekly curves

def venue_weekly_counts(dataset, venue_id: str, n_weeks: Optional[int] = None) -> np.ndarray:
    """Raw weeks x 168 counts for the complete weeks since the venue's creation.

    Week 1 is ``[created, created + 7 days)``; bins are calendar hours-of-week.
    """
    venue = dataset.venues.get(venue_id)
    if venue is None:
        raise ProfileError(f"unknown venue {venue_id!r}")
    start = venue.created_epoch
    full = max((dataset.window_end - start) // SECONDS_PER_WEEK, 0)
    n_weeks = full if n_weeks is None else min(n_weeks, full)
    log_ = dataset.checkins
    idx = log_.index_of(venue_id)
    ts = log_.timestamps[log_.venue_index == idx]
    ts = ts[(ts >= start) & (ts < start + n_weeks * SECONDS_PER_WEEK)]
    week = (ts - start) // SECONDS_PER_WEEK
    how = dataset.grid.hours_of_week(ts)
    out = np.bincount(week * HOURS_PER_WEEK + how, minlength=n_weeks * HOURS_PER_WEEK)
    return out.reshape(n_weeks, HOURS_PER_WEEK).astype(float)


def cumulative_curves(weekly: np.ndarray) -> np.ndarray:
    """Row w-1 is the normalized running sum of weeks 1..w; NaN rows where nothing was seen."""
    cum = np.cumsum(np.asarray(weekly, dtype=float), axis=0)
    tot = cum.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        curves = np.where(tot > 0, cum / np.where(tot > 0, tot, 1.0), np.nan)
    return curves


def cumulative_weekly_profile(dataset, venue_id: str, week: int) -> TemporalProfile:
    """Normalized cumulative profile of weeks 1..``week`` since creation."""
    if week < 1:
        raise ProfileError("week index starts at 1")
    weekly = venue_weekly_counts(dataset, venue_id, week)
    if weekly.shape[0] < week:
        raise ProfileError(f"venue {venue_id!r}: only {weekly.shape[0]} complete weeks observed")
    cum = weekly.sum(axis=0)
    if cum.sum() <= 0:
        raise ProfileError(f"venue {venue_id!r}: no check-ins by week {week}")
    return TemporalProfile(cum / cum.sum(), CUMULATIVE, venue_id, cum.sum())


@dataclass(frozen=True)
class StationarityTrace:
    weeks: tuple
    weekly_variances: tuple
    threshold: float
    stationary_week: Optional[int]

    def as_dict(self) -> dict:
        return {"weeks": list(self.weeks), "variances": list(self.weekly_variances),
                "threshold": self.threshold, "stationary_week": self.stationary_week}


def stationarity_trace(weekly: np.ndarray,
                       threshold: float = DEFAULT_STATIONARITY_THRESHOLD) -> StationarityTrace:
    """Week-over-week population variance of the change in the cumulative curve.

    Weeks whose curve or predecessor is undefined (no check-ins yet) are skipped.
    """
    weekly = np.asarray(weekly, dtype=float)
    if weekly.shape[0] < 2:
        raise ProfileError("stationarity needs at least 2 weeks of data")
    curves = cumulative_curves(weekly)
    weeks, variances = [], []
    stationary = None
    for w in range(2, weekly.shape[0] + 1):
        prev, cur = curves[w - 2], curves[w - 1]
        if np.isnan(prev).any() or np.isnan(cur).any():
            continue
        var = float(np.var(cur - prev))
        weeks.append(w)
        variances.append(var)
        if stationary is None and var < threshold:
            stationary = w
    return StationarityTrace(tuple(weeks), tuple(variances), threshold, stationary)


def stationarity_week(dataset, venue_id: str,
                      threshold: float = DEFAULT_STATIONARITY_THRESHOLD) -> StationarityTrace:
    return stationarity_trace(venue_weekly_counts(dataset, venue_id), threshold)


def stable_profile(dataset, venue_id: str) -> TemporalProfile:
    """Cumulative normalized profile over every complete week since creation."""
    weekly = venue_weekly_counts(dataset, venue_id)
    if weekly.shape[0] == 0:
        raise ProfileError(f"venue {venue_id!r}: no complete week observed")
    return cumulative_weekly_profile(dataset, venue_id, weekly.shape[0])


def write_profiles_csv(path, profiles: Iterable[TemporalProfile],
                       header_comment: Optional[str] = None) -> None:
    profiles = list(profiles)
    T = profiles[0].T if profiles else HOURS_PER_WEEK
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "kind"] + [f"t{t}" for t in range(T)])
        for p in profiles:
            w.writerow([p.subject, p.kind] + [repr(float(x)) for x in p.values])
