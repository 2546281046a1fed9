"""Seeded synthetic city with planted ground truth.

Wards are square cells on a lat/lon grid, each tagged with a behavioural
archetype. An incumbent venue's check-ins are Poisson draws per hour from its
archetype/category rate template scaled by a popularity factor. Planted new
venues add a logistic opening ramp and a month-over-month trend.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from datetime import date, timedelta
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import (HOURS_PER_WEEK, SECONDS_PER_DAY, SECONDS_PER_HOUR, SECONDS_PER_WEEK,
                   CategoryTaxonomy, CheckinLog, TimeGrid, Venue, date_to_epoch)
from .errors import ConfigError
from .ingest import (Dataset, Ward, WardIndex, build_dataset, wards_to_geojson,
                     write_checkins_csv, write_venues_csv)

MONTH_SECONDS = 28 * SECONDS_PER_DAY
TREND_FACTORS = {"increase": 1.25, "decrease": 0.8, "stable": 1.0}

DEFAULT_TAXONOMY = {
    "Food": ["Italian Restaurant", "Chinese Restaurant", "Café"],
    "Travel & Transport": ["Train Station", "Bus Stop"],
    "Nightlife Spots": ["Pub", "Nightclub"],
    "Outdoors & Recreation": ["Park", "Gym"],
}

_HOURS = np.arange(HOURS_PER_WEEK)
_DAY = _HOURS // 24          # 0 = Monday
_HOD = (_HOURS % 24).astype(float)
_WEEKEND = _DAY >= 5


def _bump(mu: float, sd: float) -> np.ndarray:
    d = np.abs(_HOD - mu) % 24
    d = np.minimum(d, 24 - d)
    return np.exp(-d ** 2 / (2 * sd ** 2))


def _split(weekday: np.ndarray, weekend: np.ndarray) -> np.ndarray:
    return np.where(_WEEKEND, weekend, weekday)


def _category_shapes() -> dict:
    """Hour-of-week visiting propensity of each specific category, before ward effects."""
    b = _bump
    friday_night = np.where((_DAY == 4) & (_HOD >= 18), 1.4, 1.0)
    shapes = {
        "Italian Restaurant": _split(0.4 * b(13, 1.2) + 1.0 * b(20, 1.5),
                                     0.6 * b(13, 1.5) + 1.2 * b(20, 1.8)) * friday_night,
        "Chinese Restaurant": _split(0.6 * b(12.5, 1.2) + 0.8 * b(19, 1.5) + 0.3 * b(22.5, 1.0),
                                     0.7 * b(13, 1.5) + 0.9 * b(19, 1.8) + 0.4 * b(23, 1.0)),
        "Café": _split(1.0 * b(8.5, 1.2) + 0.5 * b(15, 2.0), 0.8 * b(11, 2.0) + 0.3 * b(15, 2.0)),
        "Train Station": _split(1.0 * b(8, 1.0) + 1.0 * b(17.5, 1.2) + 0.15 * b(13, 3.0),
                                0.4 * b(13, 3.5)),
        "Bus Stop": _split(0.8 * b(7.5, 1.3) + 0.8 * b(16.5, 1.5) + 0.3 * b(12, 4.0),
                           0.35 * b(13, 4.0)),
        "Pub": _split(0.3 * b(13, 1.2) + 1.0 * b(19.5, 2.0),
                      0.6 * b(14, 2.0) + 1.2 * b(20, 2.5)) * friday_night,
        "Nightclub": np.where((_DAY >= 5) | ((_DAY == 4) & (_HOD >= 18)), 1.5, 0.5) * b(23.5, 1.8),
        "Park": _split(0.4 * b(13, 3.0), 1.0 * b(14, 3.0)),
        "Gym": _split(0.9 * b(7, 1.0) + 1.0 * b(18.5, 1.3), 0.5 * b(10.5, 2.0)),
    }
    return {k: v + 0.02 for k, v in shapes.items()}


def _archetype_modulation() -> dict:
    """Ward-level time-of-week multiplier and per-general-category volume weights."""
    b = _bump
    evening = 0.4 + 1.2 / (1 + np.exp(-(_HOD - 16) / 2.0))
    late_weekend = np.where(((_DAY == 4) | (_DAY == 5)) & (_HOD >= 17), 1.6, 1.0)
    late_weekend = late_weekend * np.where(((_DAY == 5) | (_DAY == 6)) & (_HOD < 4), 1.6, 1.0)
    return {
        "commuter": (_split(1.4 * (1 + 0.8 * b(8, 1.5) + 0.8 * b(17.5, 1.5)), 0.5 * np.ones(168)),
                     {"Travel & Transport": 3.0, "Food": 1.2, "Nightlife Spots": 0.5,
                      "Outdoors & Recreation": 0.6}),
        "nightlife": (evening * late_weekend,
                      {"Nightlife Spots": 3.0, "Food": 1.5, "Travel & Transport": 0.8,
                       "Outdoors & Recreation": 0.4}),
        "tourist": (_split(0.9, 1.6) * (0.3 + 1.2 * b(14, 3.5)),
                    {"Food": 2.0, "Outdoors & Recreation": 2.0, "Travel & Transport": 1.2,
                     "Nightlife Spots": 0.8}),
        "residential": (0.8 + 0.4 * b(19, 3.0) + _split(0.0, 0.3) * b(10, 2.0),
                        {"Food": 1.0, "Outdoors & Recreation": 1.2, "Travel & Transport": 0.8,
                         "Nightlife Spots": 0.6}),
    }


@dataclass(frozen=True)
class Archetype:
    """Expected hourly check-ins per unit-popularity venue, by specific category."""

    name: str
    templates: Mapping[str, np.ndarray]

    def __post_init__(self):
        temps = {k: np.asarray(v, dtype=float) for k, v in self.templates.items()}
        for k, v in temps.items():
            if v.shape != (HOURS_PER_WEEK,) or (v < 0).any():
                raise ConfigError(f"archetype {self.name}: template {k!r} must be 168 non-negative rates")
        if not any(v.sum() > 0 for v in temps.values()):
            raise ConfigError(f"archetype {self.name}: no category with positive mass")
        object.__setattr__(self, "templates", temps)


def default_archetype(name: str, base_rate: float = 40.0,
                      taxonomy: Mapping[str, Sequence[str]] = DEFAULT_TAXONOMY) -> Archetype:
    """One of commuter / nightlife / tourist / residential.

    ``base_rate`` is the expected weekly check-ins of a unit-popularity venue
    before the archetype's category weight.
    """
    mods = _archetype_modulation()
    if name not in mods:
        raise ConfigError(f"unknown archetype {name!r}; choose from {sorted(mods)}")
    mod, weights = mods[name]
    shapes = _category_shapes()
    temps = {}
    for general, specifics in taxonomy.items():
        for s in specifics:
            shape = shapes[s] * mod
            temps[s] = base_rate * weights.get(general, 1.0) * shape / shape.sum()
    return Archetype(name, temps)


DEFAULT_ARCHETYPES = ("commuter", "nightlife", "tourist", "residential")


@dataclass(frozen=True)
class NewVenuePlan:
    """A venue opened inside the observation window.

    ``kind="drifting"`` is a control whose activity peak moves and grows every
    week, so its profile never settles.
    """

    ward_id: str
    specific: str
    trend: str = "stable"
    created_week: int = 4
    popularity: float = 4.0
    ramp_weeks: float = 2.0
    share_local_trend: bool = False
    kind: str = "planted"

    def __post_init__(self):
        if self.trend not in TREND_FACTORS:
            raise ConfigError(f"trend must be one of {sorted(TREND_FACTORS)}, got {self.trend!r}")
        if self.kind not in ("planted", "drifting"):
            raise ConfigError(f"unknown new-venue kind {self.kind!r}")


@dataclass(frozen=True)
class CityConfig:
    archetypes: tuple = DEFAULT_ARCHETYPES
    wards_per_archetype: int = 15
    venues_per_ward: int = 2          # per specific category
    weeks: int = 12
    noise: float = 1.0                # multiplies every Poisson rate
    seed: int = 7
    base_rate: float = 40.0
    popularity_sigma: float = 0.3
    start: date = date(2012, 1, 2)    # a Monday
    cell_trends: bool = False         # random monthly trend per (ward, specific) cell
    trend_start_week: int = 4
    new_venues: tuple = ()
    taxonomy: Mapping = field(default_factory=lambda: dict(DEFAULT_TAXONOMY))

    def __post_init__(self):
        if self.wards_per_archetype < 1 or self.weeks < 1 or self.noise < 0:
            raise ConfigError("wards_per_archetype and weeks must be >= 1, noise >= 0")
        object.__setattr__(self, "new_venues", tuple(
            p if isinstance(p, NewVenuePlan) else NewVenuePlan(**p) for p in self.new_venues))

    @property
    def n_wards(self) -> int:
        return len(self.archetypes) * self.wards_per_archetype

    def resolved_archetypes(self) -> list:
        return [a if isinstance(a, Archetype) else default_archetype(a, self.base_rate, self.taxonomy)
                for a in self.archetypes]

    @classmethod
    def from_json(cls, doc: Mapping) -> "CityConfig":
        doc = dict(doc)
        if "start" in doc:
            doc["start"] = date.fromisoformat(doc["start"])
        if "archetypes" in doc:
            doc["archetypes"] = tuple(
                a if isinstance(a, str) else Archetype(a["name"], a["templates"])
                for a in doc["archetypes"])
        if "new_venues" in doc:
            doc["new_venues"] = tuple(NewVenuePlan(**p) for p in doc["new_venues"])
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown city config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_json(self) -> dict:
        doc = {k: getattr(self, k) for k in self.__dataclass_fields__}
        doc["start"] = self.start.isoformat()
        doc["archetypes"] = [a if isinstance(a, str) else
                             {"name": a.name, "templates": {k: v.tolist() for k, v in a.templates.items()}}
                             for a in self.archetypes]
        doc["new_venues"] = [asdict(p) for p in self.new_venues]
        doc["taxonomy"] = {k: list(v) for k, v in self.taxonomy.items()}
        return doc


@dataclass
class VenueTruth:
    general: str
    specific: str
    popularity: float
    trend: str
    created_week: Optional[int]   # None for incumbents present from the start
    monthly_labels: list = field(default_factory=list)
    expected_monthly: list = field(default_factory=list)
    kind: str = "incumbent"


@dataclass
class GroundTruth:
    ward_archetype: dict
    venues: dict
    cell_trends: dict = field(default_factory=dict)   # "ward|specific" -> trend

    def to_json(self) -> dict:
        return {"ward_archetype": self.ward_archetype,
                "venues": {k: asdict(v) for k, v in sorted(self.venues.items())},
                "cell_trends": dict(sorted(self.cell_trends.items()))}


@dataclass
class SyntheticCity:
    config: CityConfig
    venues: list
    checkins: CheckinLog
    wards: list
    taxonomy: CategoryTaxonomy
    grid: TimeGrid
    window_end: int
    truth: GroundTruth

    def to_dataset(self) -> Dataset:
        return build_dataset(self.venues, self.checkins, WardIndex(list(self.wards)),
                             self.taxonomy, self.grid, self.window_end)


# ---------------------------------------------------------------------------

CELL_DEG = 0.01
ORIGIN_LAT, ORIGIN_LON = 51.40, -0.30


def ward_ids(config: CityConfig) -> list:
    return [f"W{i + 1:03d}" for i in range(config.n_wards)]


def ward_layout(config: CityConfig) -> list:
    cols = math.ceil(math.sqrt(config.n_wards))
    wards = []
    for k, wid in enumerate(ward_ids(config)):
        lat0 = ORIGIN_LAT + (k // cols) * CELL_DEG
        lon0 = ORIGIN_LON + (k % cols) * CELL_DEG
        ring = tuple((round(a, 6), round(b, 6)) for a, b in
                     [(lat0, lon0), (lat0, lon0 + CELL_DEG), (lat0 + CELL_DEG, lon0 + CELL_DEG),
                      (lat0 + CELL_DEG, lon0), (lat0, lon0)])
        wards.append(Ward(wid, ((ring,),)))
    return wards


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def ward_archetypes(config: CityConfig) -> dict:
    names = [a if isinstance(a, str) else a.name for a in config.archetypes]
    labels = [n for n in names for _ in range(config.wards_per_archetype)]
    order = _stream(config.seed, 0).permutation(len(labels))
    return {wid: labels[j] for wid, j in zip(ward_ids(config), order)}


def cell_trend_map(config: CityConfig) -> dict:
    """Planted monthly trend per ``ward|specific`` cell (empty unless ``cell_trends``)."""
    if not config.cell_trends:
        return {}
    rng = _stream(config.seed, 1)
    names = sorted(TREND_FACTORS)
    out = {}
    for wid in ward_ids(config):
        for g in sorted(config.taxonomy):
            for s in config.taxonomy[g]:
                out[f"{wid}|{s}"] = names[int(rng.integers(len(names)))]
    for p in config.new_venues:
        if p.share_local_trend:
            out[f"{p.ward_id}|{p.specific}"] = p.trend
    return out


def _trend_multiplier(hours_from_start: np.ndarray, trend: str) -> np.ndarray:
    months = np.floor_divide(hours_from_start * SECONDS_PER_HOUR, MONTH_SECONDS)
    return np.where(hours_from_start >= 0, TREND_FACTORS[trend] ** np.maximum(months, 0), 1.0)


def _ramp(hours_since_open: np.ndarray, ramp_weeks: float) -> np.ndarray:
    if ramp_weeks <= 0:
        return np.ones_like(hours_since_open, dtype=float)
    weeks = hours_since_open / HOURS_PER_WEEK
    return 1.0 / (1.0 + np.exp(-8.0 * (weeks / ramp_weeks - 0.5)))


def _events(rng, rates: np.ndarray, origin: int):
    """Poisson counts per hour -> sorted epoch seconds and user codes."""
    counts = rng.poisson(rates)
    hours = np.repeat(np.arange(rates.size, dtype=np.int64), counts)
    secs = rng.integers(0, SECONDS_PER_HOUR, size=hours.size)
    users = rng.integers(0, 50_000, size=hours.size)
    return origin + hours * SECONDS_PER_HOUR + secs, users


def _slug(text: str) -> str:
    return "".join(ch if ch.isalnum() else "-" for ch in text.lower()).strip("-")


def _venue_point(rng, ward: Ward) -> tuple:
    lat0, lon0 = ward.bbox[0], ward.bbox[1]
    u, v = rng.uniform(0.1, 0.9, size=2)
    return round(lat0 + u * CELL_DEG, 6), round(lon0 + v * CELL_DEG, 6)


def _monthly_sums(rates: np.ndarray, first_hour: int, n_hours: int) -> list:
    """Expected totals over complete 28-day months starting at ``first_hour``."""
    per = MONTH_SECONDS // SECONDS_PER_HOUR
    n_months = (n_hours - first_hour) // per
    return [float(rates[first_hour + m * per: first_hour + (m + 1) * per].sum())
            for m in range(n_months)]


def plant_new_venue(config: CityConfig, trend: str = "stable", ramp_weeks: float = 2.0, *,
                    ward_id: Optional[str] = None, specific: Optional[str] = None,
                    created_week: int = 4, popularity: float = 4.0, index: int = 0,
                    kind: str = "planted"):
    """Generate one new venue and its check-ins inside ``config``'s city.

    Returns ``(venue, epochs, users, truth)``. The rate is the ward/category
    template x popularity x logistic opening ramp x monthly trend multiplier.
    """
    plan = NewVenuePlan(ward_id or ward_ids(config)[0], specific or "Italian Restaurant", trend,
                        created_week, popularity, ramp_weeks, False, kind)
    return _plant(config, plan, index, ward_archetypes(config),
                  {w.ward_id: w for w in ward_layout(config)},
                  {a.name: a for a in config.resolved_archetypes()})


def _plant(config, plan, index, arch_of, wards, archetypes):
    from .online import label_change  # labels follow the same +/-10% rule as evaluation

    tax = CategoryTaxonomy.from_tree(config.taxonomy)
    if plan.ward_id not in wards:
        raise ConfigError(f"planted venue ward {plan.ward_id!r} does not exist")
    general = tax.parent.get(plan.specific)
    if general is None:
        raise ConfigError(f"planted venue category {plan.specific!r} not in taxonomy")
    rng = _stream(config.seed, 2, index)
    n_hours = config.weeks * HOURS_PER_WEEK
    open_hour = plan.created_week * HOURS_PER_WEEK
    since = np.arange(n_hours, dtype=float) - open_hour
    template = archetypes[arch_of[plan.ward_id]].templates[plan.specific]
    if plan.kind == "drifting":
        week = np.floor_divide(since, HOURS_PER_WEEK)
        peak = np.mod(week * 31 + 12, HOURS_PER_WEEK)
        hw = np.arange(n_hours) % HOURS_PER_WEEK
        d = np.abs(hw - peak)
        d = np.minimum(d, HOURS_PER_WEEK - d)
        rates = (template.sum() * plan.popularity * np.exp(-d ** 2 / 2.0) / math.sqrt(2 * math.pi)
                 * 1.5 ** np.maximum(week, 0))
    else:
        rates = (np.tile(template, config.weeks) * plan.popularity
                 * _ramp(since, plan.ramp_weeks) * _trend_multiplier(since, plan.trend))
    rates = np.where(since >= 0, rates, 0.0) * config.noise
    origin = date_to_epoch(config.start)
    epochs, users = _events(rng, rates, origin)
    lat, lon = _venue_point(rng, wards[plan.ward_id])
    created = config.start + timedelta(weeks=plan.created_week)
    vid = f"N{index + 1:03d}-{plan.ward_id}-{_slug(plan.specific)}"
    venue = Venue(vid, lat, lon, general, plan.specific, created, int(epochs.size))
    expected = _monthly_sums(rates, open_hour, n_hours)
    labels = [label_change(a, b).label if a > 0 else None for a, b in zip(expected, expected[1:])]
    truth = VenueTruth(general, plan.specific, plan.popularity, plan.trend, plan.created_week,
                       labels, expected, plan.kind)
    return venue, epochs, users, truth


def generate_city(config: CityConfig) -> SyntheticCity:
    """Build the whole city; identical configs give identical output."""
    tax = CategoryTaxonomy.from_tree(config.taxonomy)
    archetypes = {a.name: a for a in config.resolved_archetypes()}
    arch_of = ward_archetypes(config)
    wards = ward_layout(config)
    ward_by_id = {w.ward_id: w for w in wards}
    cells = cell_trend_map(config)
    n_hours = config.weeks * HOURS_PER_WEEK
    origin = date_to_epoch(config.start)
    incumbent_created = config.start - timedelta(days=730)
    trend_hours = np.arange(n_hours, dtype=float) - config.trend_start_week * HOURS_PER_WEEK

    venues, truths, chunks = [], {}, []
    for k, ward in enumerate(wards):
        rng = _stream(config.seed, 3, k)
        arch = archetypes[arch_of[ward.ward_id]]
        for general in sorted(config.taxonomy):
            for s in config.taxonomy[general]:
                trend = cells.get(f"{ward.ward_id}|{s}", "stable")
                base = np.tile(arch.templates[s], config.weeks) * config.noise
                if trend != "stable":
                    base = base * _trend_multiplier(trend_hours, trend)
                for j in range(config.venues_per_ward):
                    pop = float(rng.lognormal(0.0, config.popularity_sigma))
                    epochs, users = _events(rng, base * pop, origin)
                    lat, lon = _venue_point(rng, ward)
                    vid = f"{ward.ward_id}-{_slug(s)}-{j + 1}"
                    venues.append(Venue(vid, lat, lon, general, s, incumbent_created,
                                        int(epochs.size)))
                    truths[vid] = VenueTruth(general, s, pop, trend, None)
                    chunks.append((vid, epochs, users))
    for i, plan in enumerate(config.new_venues):
        venue, epochs, users, truth = _plant(config, plan, i, arch_of, ward_by_id, archetypes)
        venues.append(venue)
        truths[venue.id] = truth
        chunks.append((venue.id, epochs, users))

    ids = tuple(sorted(v.id for v in venues))
    pos = {v: i for i, v in enumerate(ids)}
    idx = np.concatenate([np.full(e.size, pos[v], np.int64) for v, e, _ in chunks] or [np.zeros(0, np.int64)])
    ts = np.concatenate([e for _, e, _ in chunks] or [np.zeros(0, np.int64)])
    users = np.concatenate([u for _, _, u in chunks] or [np.zeros(0, np.int64)])
    order = np.lexsort((idx, ts))
    log_ = CheckinLog(ids, idx[order], ts[order], users[order])
    grid = TimeGrid.weekly(config.start)
    truth = GroundTruth(arch_of, truths, cells)
    return SyntheticCity(config, sorted(venues, key=lambda v: v.id), log_, wards, tax, grid,
                         origin + config.weeks * SECONDS_PER_WEEK, truth)


def write_city(city: SyntheticCity, out_dir, provenance: Optional[dict] = None) -> None:
    """Emit checkins.csv, venues.csv, wards.geojson, taxonomy.json and ground_truth.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    comment = " ".join(f"{k}={provenance[k]}" for k in sorted(provenance)) if provenance else None
    write_checkins_csv(out / "checkins.csv", city.checkins, comment)
    write_venues_csv(out / "venues.csv", city.venues, header_comment=comment)
    (out / "wards.geojson").write_text(
        json.dumps(wards_to_geojson(city.wards, provenance), sort_keys=True) + "\n", encoding="utf-8")
    city.taxonomy.dump(out / "taxonomy.json")
    gt = city.truth.to_json()
    gt["window_start"] = city.grid.origin.strftime("%Y-%m-%dT%H:%M:%SZ")
    gt["window_end_epoch"] = city.window_end
    if provenance:
        gt["provenance"] = provenance
    (out / "ground_truth.json").write_text(json.dumps(gt, indent=1, sort_keys=True) + "\n",
                                           encoding="utf-8")


# ---------------------------------------------------------------------------
# Ready-made scenarios used by the acceptance experiments and the CLI.

def batch_scenario(seed: int = 7, n_new: int = 20, n_drifting: int = 1,
                   weeks: int = 12, created_week: int = 4) -> CityConfig:
    """60 wards (4 archetypes x 15), 12 weeks, stable new venues in distinct wards."""
    base = CityConfig(seed=seed, weeks=weeks)
    arch_of = ward_archetypes(base)
    rng = _stream(seed, 4)
    by_arch = {}
    for wid in ward_ids(base):
        by_arch.setdefault(arch_of[wid], []).append(wid)
    specifics = [s for g in sorted(base.taxonomy) for s in base.taxonomy[g]]
    plans, names = [], list(base.archetypes)
    for i in range(n_new + n_drifting):
        pool = by_arch[names[i % len(names)]]
        wid = pool[(i // len(names)) % len(pool)]
        spec = specifics[int(rng.integers(len(specifics)))]
        kind = "planted" if i < n_new else "drifting"
        plans.append(NewVenuePlan(wid, spec, "stable", created_week, 4.0, 2.0, False, kind))
    return replace(base, new_venues=tuple(plans))


def online_scenario(seed: int = 11, per_class: int = 20, months: int = 7,
                    created_week: int = 4, base_rate: float = 30.0, popularity: float = 1.5,
                    venues_per_ward: int = 3) -> CityConfig:
    """Every ward hosts one new venue; each (ward, category) cell follows a local trend.

    The new venue's own trend is shared by the incumbents of its cell.
    """
    weeks = created_week + months * 4
    base = CityConfig(seed=seed, weeks=weeks, base_rate=base_rate, cell_trends=True,
                      trend_start_week=created_week, venues_per_ward=venues_per_ward)
    wids = ward_ids(base)
    if len(wids) < 3 * per_class:
        raise ConfigError("online scenario needs one ward per planted venue")
    rng = _stream(seed, 5)
    trends = [t for t in ("increase", "decrease", "stable") for _ in range(per_class)]
    trends = [trends[j] for j in rng.permutation(len(trends))]
    specifics = [s for g in sorted(base.taxonomy) for s in base.taxonomy[g]]
    plans = [NewVenuePlan(wid, specifics[int(rng.integers(len(specifics)))], trend, created_week,
                          popularity, 2.0, True)
             for wid, trend in zip(wids, trends)]
    return replace(base, new_venues=tuple(plans))
