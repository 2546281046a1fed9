"""Month-ahead demand change forecasting for new venues.

A month is a 28-day window counted from the venue's creation date. For each
number of observed months ``m`` the GP is trained on month-over-month demand
ratios (the venue's own, plus those of the predictor venues picked by the
selection criterion) and extrapolated to month ``m + 1``. The predicted ratio
is both the class decision (increase / decrease / stable within 10%) and the
ranking score for the AUC.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .batch import (CRITERIA, DEFAULT_K, SelectionCriteria, StoreCache, _scope, canonical_criteria,
                    select_wards)
from .core import SECONDS_PER_DAY
from .errors import ConfigError, SelectionError, VenuePulseError
from .gp import HyperGrid, fit, optimize_hyper, predict

log = logging.getLogger(__name__)

MONTH_SECONDS = 28 * SECONDS_PER_DAY
ONLINE_CRITERIA = ("History",) + CRITERIA
CLASSES = ("increase", "decrease", "stable")
_UPPER = Fraction(11, 10)
_LOWER = Fraction(9, 10)

# Month-index RBF; variance/noise are multiples of the target variance.
ONLINE_GRID = HyperGrid(length_day=(1.0, 2.0, 4.0, 8.0), length_week=(math.inf,),
                        variance=(0.5, 1.0, 2.0), noise=(1e-2, 1e-1, 1.0),
                        relative=True, periodic=False)


class UndefinedRatio(VenuePulseError):
    """The previous month had no demand, so the change ratio is undefined."""


@dataclass(frozen=True)
class ChangeLabel:
    label: str
    observed_ratio: float


def classify_ratio(ratio) -> str:
    r = Fraction(ratio)
    if r > _UPPER:
        return "increase"
    if r < _LOWER:
        return "decrease"
    return "stable"


def label_change(prev, nxt) -> ChangeLabel:
    """Three-way label; a ratio within 10% of 1 (boundaries included) is stable."""
    if not prev > 0:
        raise UndefinedRatio(f"previous demand is {prev!r}; ratio undefined")
    ratio = Fraction(nxt) / Fraction(prev)
    return ChangeLabel(classify_ratio(ratio), float(ratio))


@dataclass(frozen=True)
class MonthlySeries:
    venue_id: str
    values: tuple

    @property
    def months(self) -> int:
        return len(self.values)


def monthly_counts(dataset, start: int, n_months: int) -> np.ndarray:
    """Venues x months check-in counts over consecutive 28-day windows from ``start``."""
    log_ = dataset.checkins
    ts = log_.timestamps
    sel = (ts >= start) & (ts < start + n_months * MONTH_SECONDS)
    month = (ts[sel] - start) // MONTH_SECONDS
    n = len(log_.venue_ids)
    out = np.bincount(log_.venue_index[sel] * n_months + month, minlength=n * n_months)
    return out.reshape(n, n_months)


def complete_months(dataset, venue_id: str) -> int:
    start = dataset.venues[venue_id].created_epoch
    return max((dataset.window_end - start) // MONTH_SECONDS, 0)


def monthly_demand(dataset, venue_id: str) -> MonthlySeries:
    """Check-ins per complete 28-day month since creation; trailing partial month dropped."""
    if venue_id not in dataset.venues:
        raise SelectionError(f"unknown venue {venue_id!r}")
    start = dataset.venues[venue_id].created_epoch
    n = complete_months(dataset, venue_id)
    log_ = dataset.checkins
    ts = log_.timestamps[log_.venue_index == log_.index_of(venue_id)]
    ts = ts[(ts >= start) & (ts < start + n * MONTH_SECONDS)]
    counts = np.bincount((ts - start) // MONTH_SECONDS, minlength=n)
    return MonthlySeries(venue_id, tuple(int(c) for c in counts))


class OnlineContext:
    """Caches pre-opening profiles and month-aligned count matrices per creation time."""

    def __init__(self, dataset, k: int = DEFAULT_K, seed: int = 0,
                 grid: HyperGrid = ONLINE_GRID):
        self.dataset = dataset
        self.k, self.seed, self.grid = k, seed, grid
        self.stores = StoreCache(dataset)
        self._counts = {}
        ids = dataset.checkins.venue_ids
        self._row = {v: i for i, v in enumerate(ids)}

    def counts(self, start: int) -> np.ndarray:
        if start not in self._counts:
            n = max((self.dataset.window_end - start) // MONTH_SECONDS, 0)
            self._counts[start] = monthly_counts(self.dataset, start, n)
        return self._counts[start]

    def predictor_venues(self, venue_id: str, criteria: str) -> list:
        """Venues whose own monthly series inform the forecast for ``venue_id``."""
        if criteria == "History":
            return []
        ds = self.dataset
        venue = ds.venues[venue_id]
        store = self.stores.before(venue.created_epoch)
        crit = SelectionCriteria(criteria, self.k, self.seed)
        scope = venue.specific if crit.variant == "Random" else _scope(crit.variant, venue)
        if crit.variant.startswith("All"):
            mask = store.category_mask(scope) & (store.venue_ward >= 0)
            peers = [store.venue_ids[i] for i in np.flatnonzero(mask)]
        else:
            peers = []
            for w in select_wards(store, venue, crit):
                peers.extend(store.venues_in_ward(w, scope))
        return [p for p in peers if p != venue_id]


def _ratios(series: np.ndarray) -> Optional[np.ndarray]:
    if (series[:-1] <= 0).any():
        return None
    return series[1:] / series[:-1]


@dataclass
class Forecast:
    venue_id: str
    criteria: str
    months: int
    predicted_ratio: float
    label: ChangeLabel
    n_predictors: int
    fell_back: bool = False


def forecast_next_month(dataset, venue_id: str, criteria: str, m: int,
                        context: Optional[OnlineContext] = None) -> Forecast:
    """Predict the demand ratio of month ``m + 1`` over month ``m`` from months 1..m."""
    criteria = canonical_criteria(criteria, ONLINE_CRITERIA)
    if m < 2:
        raise SelectionError("need at least 2 observed months")
    ctx = context or OnlineContext(dataset)
    venue = dataset.venues.get(venue_id)
    if venue is None:
        raise SelectionError(f"unknown venue {venue_id!r}")
    counts = ctx.counts(venue.created_epoch)
    if counts.shape[1] < m:
        raise SelectionError(f"{venue_id}: only {counts.shape[1]} complete months observed")
    own = _ratios(counts[ctx._row[venue_id], :m].astype(float))
    if own is None:
        raise UndefinedRatio(f"{venue_id}: a zero-demand month among months 1..{m}")
    rows = [own]
    for p in ctx.predictor_venues(venue_id, criteria) if criteria != "History" else []:
        r = _ratios(counts[ctx._row[p], :m].astype(float))
        if r is not None:
            rows.append(r)
    fell_back = criteria != "History" and len(rows) == 1
    if fell_back:
        log.warning("%s/%s: no usable predictor series, falling back to History", venue_id, criteria)
    X = np.arange(2, m + 1, dtype=float)
    Y = np.vstack(rows)
    params = optimize_hyper(X, Y, ctx.grid)
    mean, _ = predict(fit(X, Y, params), [m + 1.0])
    ratio = float(mean[0])
    return Forecast(venue_id, criteria, m, ratio, ChangeLabel(classify_ratio(ratio), ratio),
                    len(rows) - 1, fell_back)


# ---------------------------------------------------------------------------
# AUC

def roc_auc(labels: Sequence[bool], scores: Sequence[float]) -> float:
    """Binary ROC AUC via the rank-sum statistic; tied scores share their mean rank."""
    y = np.asarray(labels, dtype=bool)
    s = np.asarray(scores, dtype=float)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative examples")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def class_scores(ratios: Sequence[float]) -> dict:
    """One-vs-rest score per class derived from the predicted ratio."""
    r = np.asarray(ratios, dtype=float)
    return {"increase": r, "decrease": -r, "stable": -np.abs(r - 1.0)}


def macro_auc(labels: Sequence[str], ratios: Sequence[float]) -> tuple:
    """Macro-averaged one-vs-rest AUC. Returns ``(auc, per_class, skipped_classes)``."""
    labels = np.asarray(labels)
    scores = class_scores(ratios)
    per, skipped = {}, []
    for c in CLASSES:
        pos = labels == c
        if pos.all() or not pos.any():
            skipped.append(c)
            continue
        per[c] = roc_auc(pos, scores[c])
    auc = float(np.mean(list(per.values()))) if per else math.nan
    return auc, per, skipped


@dataclass
class OnlineReport:
    auc: dict                      # criteria -> {months: macro AUC}
    per_class: dict                # criteria -> {months: {class: AUC}}
    records: list                  # per venue-month predictions
    excluded: dict = field(default_factory=dict)
    skipped_classes: dict = field(default_factory=dict)

    def table(self, months: Sequence[int]) -> list:
        return [[c] + [self.auc[c].get(m, math.nan) for m in months] for c in self.auc]


def evaluate_online(dataset, cohort: Iterable[str], criteria: Sequence[str],
                    months: Iterable[int] = range(2, 7), k: int = DEFAULT_K, seed: int = 0,
                    grid: HyperGrid = ONLINE_GRID) -> OnlineReport:
    """Macro AUC per criteria and training-month count over the cohort's venue-months.

    The ground-truth class of a venue-month is the observed change from month
    ``m`` to ``m + 1``; venue-months with zero demand in month ``m`` are excluded.
    """
    names = [canonical_criteria(c, ONLINE_CRITERIA) for c in criteria]
    months = list(months)
    if any(m < 2 for m in months):
        raise ConfigError("training months start at 2")
    ctx = OnlineContext(dataset, k, seed, grid)
    venues = sorted(cohort)
    report = OnlineReport({}, {}, [])
    for c in names:
        report.auc[c], report.per_class[c] = {}, {}
        for m in months:
            labels, scores, excluded = [], [], 0
            for v in venues:
                series = ctx.counts(dataset.venues[v].created_epoch)[ctx._row[v]]
                if series.size < m + 1:
                    excluded += 1
                    continue
                try:
                    truth = label_change(series[m - 1], series[m])
                    fc = forecast_next_month(dataset, v, c, m, ctx)
                except VenuePulseError:
                    excluded += 1
                    continue
                labels.append(truth.label)
                scores.append(fc.predicted_ratio)
                report.records.append({"venue_id": v, "criteria": c, "months": m,
                                       "predicted_ratio": fc.predicted_ratio,
                                       "predicted_label": fc.label.label,
                                       "true_label": truth.label,
                                       "true_ratio": truth.observed_ratio,
                                       "n_predictors": fc.n_predictors})
            auc, per, skipped = macro_auc(labels, scores) if labels else (math.nan, {}, list(CLASSES))
            report.auc[c][m] = auc
            report.per_class[c][m] = per
            report.excluded[f"{c}|{m}"] = excluded
            if skipped:
                report.skipped_classes[f"{c}|{m}"] = skipped
    return report
