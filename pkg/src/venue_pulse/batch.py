"""Predict the stable weekly signature of a new venue from neighbouring ward profiles.

Pipeline per venue: resolve categories and ward, rank the other wards by JSD
of their general-category profiles (data before the venue opened only), take
the training profiles the selection criterion asks for, feed them to the GP,
and score the renormalized posterior mean against the venue's stable profile.
"""

from __future__ import annotations

import logging
import math
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import HOURS_PER_WEEK
from .errors import ConfigError, ProfileError, SelectionError, VenuePulseError
from .gp import DEFAULT_GRID, HyperGrid, fit, optimize_hyper, predict
from .profiles import (NORMALIZED, CityProfiles, TemporalProfile, normalize, stable_profile,
                       stationarity_week, DEFAULT_STATIONARITY_THRESHOLD)
from .similarity import rank_wards

log = logging.getLogger(__name__)

CRITERIA = ("TempGen", "TempSpec", "Random", "SameAll", "SameGen", "SameSpec",
            "AllAll", "AllGen", "AllSpec")
DEFAULT_K = 10
_BY_LOWER = {c.lower(): c for c in CRITERIA}


def canonical_criteria(name: str, allowed: Sequence[str] = CRITERIA) -> str:
    canon = {c.lower(): c for c in allowed}.get(name.strip().lower())
    if canon is None:
        raise ConfigError(f"unknown criteria {name!r}; expected one of {', '.join(allowed)}")
    return canon


@dataclass(frozen=True)
class SelectionCriteria:
    variant: str
    k: int = DEFAULT_K
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", canonical_criteria(self.variant))
        if self.k < 1:
            raise ConfigError("k must be >= 1")


def thread_count() -> int:
    env = os.environ.get("VENUE_PULSE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"VENUE_PULSE_THREADS must be an integer, got {env!r}") from None
    return 1


class StoreCache:
    """One :class:`CityProfiles` per creation cutoff, shared across venues."""

    def __init__(self, dataset):
        self.dataset = dataset
        self._stores = {}

    def before(self, cutoff: int) -> CityProfiles:
        if cutoff not in self._stores:
            self._stores[cutoff] = CityProfiles(self.dataset, before=cutoff)
        return self._stores[cutoff]


def venue_rng(seed: int, venue_id: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(venue_id.encode("utf-8"))])


def _scope(variant: str, venue) -> Optional[str]:
    """Category whose profiles are used as training data (``None`` = all categories)."""
    if variant.endswith("All"):
        return None
    if variant.endswith("Gen"):
        return venue.general
    return venue.specific


def select_wards(store: CityProfiles, venue, criteria: SelectionCriteria,
                 ward_id: Optional[str] = None) -> list:
    """Ward ids supplying training data for the Temp*, Random and Same* variants.

    Temp* rank wards on the general-category profile and skip wards that lack
    the needed scope, moving on to the next nearest. Random samples uniformly
    among the eligible wards. All* variants return an empty list.
    """
    variant = criteria.variant
    ward_id = ward_id or store.dataset.ward_of(venue.id)
    if ward_id is None:
        raise SelectionError(f"venue {venue.id} lies outside every ward")
    scope = venue.specific if variant == "Random" else _scope(variant, venue)
    if variant.startswith("Same"):
        return [ward_id]
    if variant.startswith("All"):
        return []
    totals = store.ward_totals(scope)
    eligible = {w for w, t in zip(store.ward_ids, totals) if t > 0 and w != ward_id}
    if variant == "Random":
        pool = sorted(eligible, key=store.ward_ids.index)
        if not pool:
            raise SelectionError(f"no ward besides {ward_id} has {scope!r} activity")
        k = min(criteria.k, len(pool))
        if k < criteria.k:
            log.warning("Random: only %d eligible wards for k=%d", k, criteria.k)
        picks = venue_rng(criteria.seed, venue.id).choice(len(pool), size=k, replace=False)
        return [pool[i] for i in picks]
    try:
        ranked = rank_wards(store, ward_id, venue.general)
    except ProfileError as exc:
        raise SelectionError(str(exc)) from None
    chosen = [w for w, _ in ranked if w in eligible][:criteria.k]
    if not chosen:
        raise SelectionError(f"no temporally similar ward with {scope!r} activity for {venue.id}")
    if len(chosen) < criteria.k:
        log.warning("%s: only %d eligible wards for k=%d", variant, len(chosen), criteria.k)
    return chosen


@dataclass
class Selection:
    profiles: list
    wards: list
    criteria: SelectionCriteria


def select_training_profiles(dataset, venue_id: str, criteria: SelectionCriteria,
                             stores: Optional[StoreCache] = None) -> Selection:
    """Normalized training profiles for ``venue_id`` built only from pre-opening data."""
    venue = dataset.venues.get(venue_id)
    if venue is None:
        raise SelectionError(f"unknown venue {venue_id!r}")
    stores = stores or StoreCache(dataset)
    store = stores.before(venue.created_epoch)
    variant = criteria.variant
    scope = _scope(variant, venue) if variant != "Random" else venue.specific
    if variant.startswith("All"):
        prof = store.city_profile(scope)
        if prof.total <= 0:
            raise SelectionError(f"{variant}: no city-wide {scope or 'all'} activity before opening")
        return Selection([normalize(prof)], [], criteria)
    wards = select_wards(store, venue, criteria)
    profiles = []
    for w in wards:
        prof = store.category_ward_profile(scope, w) if scope else store.ward_profile(w)
        if prof.total > 0:
            profiles.append(normalize(prof))
    if not profiles:
        what = "same-category peer" if variant == "SameSpec" else "training profile"
        raise SelectionError(f"{variant}: no {what} for {venue_id} in ward(s) {wards}")
    return Selection(profiles, wards, criteria)


def nrmse(predicted, actual) -> float:
    """RMSE over the bins divided by the mean of the actual profile."""
    p = np.asarray(getattr(predicted, "values", predicted), dtype=float)
    a = np.asarray(getattr(actual, "values", actual), dtype=float)
    if p.shape != a.shape:
        raise ProfileError(f"profile lengths differ: {p.shape} vs {a.shape}")
    mean = a.mean()
    if not mean > 0:
        raise ProfileError("NRMSE undefined: actual profile has zero mean")
    return float(np.sqrt(np.mean((p - a) ** 2)) / mean)


def gp_signature(profiles: Sequence[TemporalProfile], grid: HyperGrid = DEFAULT_GRID):
    """Fit the GP to stacked profiles and return ``(normalized prediction, params)``."""
    X = np.arange(HOURS_PER_WEEK, dtype=float)
    Y = np.vstack([p.values for p in profiles])
    params = optimize_hyper(X, Y, grid)
    mean, _ = predict(fit(X, Y, params), X)
    mean = np.clip(mean, 0.0, None)
    if mean.sum() <= 0:
        raise ProfileError("GP posterior mean is non-positive everywhere")
    return mean / mean.sum(), params


@dataclass
class SignaturePrediction:
    venue_id: str
    criteria: SelectionCriteria
    predicted: Optional[TemporalProfile]
    actual_stable: Optional[TemporalProfile]
    nrmse: float
    status: str = "ok"
    wards: list = field(default_factory=list)
    params: object = None
    stationary_week: Optional[int] = None


def predict_signature(dataset, venue_id: str, criteria: SelectionCriteria,
                      grid: HyperGrid = DEFAULT_GRID, stores: Optional[StoreCache] = None,
                      threshold: float = DEFAULT_STATIONARITY_THRESHOLD) -> SignaturePrediction:
    sel = select_training_profiles(dataset, venue_id, criteria, stores)
    values, params = gp_signature(sel.profiles, grid)
    predicted = TemporalProfile(values, NORMALIZED, f"{venue_id}:{criteria.variant}", 1.0)
    actual = stable_profile(dataset, venue_id)
    trace = stationarity_week(dataset, venue_id, threshold)
    status = "ok" if trace.stationary_week is not None else "not_stationary"
    return SignaturePrediction(venue_id, criteria, predicted, actual, nrmse(predicted, actual),
                               status, sel.wards, params, trace.stationary_week)


# ---------------------------------------------------------------------------
# Experiments

@dataclass
class BatchReport:
    rows: list             # dicts: venue_id, criteria, k, nrmse, status
    summary: list          # one dict per criteria, Table-1 shaped
    predictions: list = field(default_factory=list)


def _safe_predict(args):
    dataset, venue_id, criteria, grid, stores, threshold = args
    try:
        return predict_signature(dataset, venue_id, criteria, grid, stores, threshold)
    except VenuePulseError as exc:
        return SignaturePrediction(venue_id, criteria, None, None, math.nan,
                                   f"error: {exc}".replace("\n", " "))


def summarize(rows: Iterable[dict], criteria: Sequence[str]) -> list:
    """Per-criteria mean/median NRMSE over successful venues, plus improvement vs Random."""
    rows = list(rows)
    out = []
    for c in criteria:
        vals = [r["nrmse"] for r in rows if r["criteria"] == c and r["status"] == "ok"]
        failed = sum(1 for r in rows if r["criteria"] == c and r["status"] != "ok")
        out.append({"criteria": c, "n": len(vals), "excluded": failed,
                    "mean_nrmse": float(np.mean(vals)) if vals else math.nan,
                    "median_nrmse": float(np.median(vals)) if vals else math.nan})
    ref = next((s for s in out if s["criteria"] == "Random"), None)
    for s in out:
        for stat in ("mean", "median"):
            key = f"improvement_vs_random_{stat}"
            base = ref[f"{stat}_nrmse"] if ref else math.nan
            s[key] = improvement(base, s[f"{stat}_nrmse"])
    return out


def improvement(random_nrmse: float, criteria_nrmse: float) -> float:
    """Relative NRMSE reduction against the Random baseline."""
    if not (random_nrmse > 0) or math.isnan(criteria_nrmse):
        return math.nan
    return (random_nrmse - criteria_nrmse) / random_nrmse


def run_batch_experiment(dataset, cohort: Iterable[str], criteria: Sequence[str],
                         k: int = DEFAULT_K, seed: int = 0, grid: HyperGrid = DEFAULT_GRID,
                         threshold: float = DEFAULT_STATIONARITY_THRESHOLD) -> BatchReport:
    venues = sorted(cohort)
    if not venues:
        raise SelectionError("empty cohort")
    names = [canonical_criteria(c) for c in criteria]
    stores = StoreCache(dataset)
    for v in venues:  # populate caches before any threads run
        if v in dataset.venues:
            stores.before(dataset.venues[v].created_epoch)
    jobs = [(dataset, v, SelectionCriteria(c, k, seed), grid, stores, threshold)
            for c in names for v in venues]
    n_threads = thread_count()
    if n_threads > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            preds = list(pool.map(_safe_predict, jobs))
    else:
        preds = [_safe_predict(j) for j in jobs]
    rows = [{"venue_id": p.venue_id, "criteria": p.criteria.variant, "k": k,
             "nrmse": p.nrmse, "status": p.status} for p in preds]
    return BatchReport(rows, summarize(rows, names), preds)


def sweep_k(dataset, cohort: Iterable[str], criteria: str, ks: Iterable[int], seed: int = 0,
            grid: HyperGrid = DEFAULT_GRID) -> dict:
    """Mean and median NRMSE per neighbour count, with the arg-min ``k``."""
    table = []
    for k in ks:
        rep = run_batch_experiment(dataset, cohort, [criteria], k, seed, grid)
        s = rep.summary[0]
        table.append({"k": k, "mean_nrmse": s["mean_nrmse"], "median_nrmse": s["median_nrmse"],
                      "n": s["n"]})
    finite = [row for row in table if not math.isnan(row["mean_nrmse"])]
    best = min(finite, key=lambda r: (r["mean_nrmse"], r["k"]))["k"] if finite else None
    return {"criteria": canonical_criteria(criteria), "table": table, "argmin_k": best}
