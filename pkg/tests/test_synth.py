import json
from dataclasses import replace

import numpy as np
import pytest

from venue_pulse.core import HOURS_PER_WEEK, date_to_epoch
from venue_pulse.errors import ConfigError
from venue_pulse.ingest import ingest_files
from venue_pulse.online import label_change, monthly_demand
from venue_pulse.profiles import stationarity_week
from venue_pulse.synth import (TREND_FACTORS, Archetype, CityConfig, NewVenuePlan, batch_scenario,
                               default_archetype, generate_city, online_scenario, plant_new_venue,
                               ward_archetypes, write_city)

SMALL = CityConfig(wards_per_archetype=2, weeks=3, seed=5, venues_per_ward=1)


def test_default_archetypes_are_valid():
    for name in ("commuter", "nightlife", "tourist", "residential"):
        arch = default_archetype(name)
        assert all((t >= 0).all() and t.shape == (168,) for t in arch.templates.values())
    with pytest.raises(ConfigError):
        default_archetype("suburb")
    with pytest.raises(ConfigError):
        Archetype("bad", {"x": np.zeros(168)})
    with pytest.raises(ConfigError):
        Archetype("bad", {"x": -np.ones(168)})


def test_commuter_transport_peaks_at_rush_hours():
    t = default_archetype("commuter").templates["Train Station"]
    monday = t[:24]
    top = set(np.argsort(monday)[-4:])
    assert top & {7, 8, 9} and top & {16, 17, 18}


def test_same_seed_gives_byte_identical_files(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    write_city(generate_city(SMALL), a, {"seed": 5})
    write_city(generate_city(SMALL), b, {"seed": 5})
    for name in ("checkins.csv", "venues.csv", "wards.geojson", "taxonomy.json", "ground_truth.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    other = generate_city(replace(SMALL, seed=6))
    assert not np.array_equal(other.checkins.timestamps, generate_city(SMALL).checkins.timestamps)


def test_noise_zero_gives_no_events():
    city = generate_city(replace(SMALL, noise=0.0, new_venues=(NewVenuePlan("W001", "Café"),)))
    assert len(city.checkins) == 0
    assert all(v.total_checkins == 0 for v in city.venues)


def test_poisson_counts_match_rates_over_1000_weeks():
    cfg = CityConfig(archetypes=("nightlife",), wards_per_archetype=1, weeks=1000, seed=3)
    venue, epochs, _, truth = plant_new_venue(cfg, "stable", ramp_weeks=0, created_week=0,
                                              specific="Pub", popularity=2.0)
    rate = default_archetype("nightlife").templates["Pub"] * 2.0
    hours = (epochs - date_to_epoch(cfg.start)) // 3600 % HOURS_PER_WEEK
    mean = np.bincount(hours, minlength=168) / 1000
    z = (mean - rate) / np.sqrt(np.maximum(rate, 1e-12) / 1000)
    assert (np.abs(z) > 3).mean() < 0.02
    total_z = (mean.sum() - rate.sum()) / np.sqrt(rate.sum() / 1000)
    assert abs(total_z) < 3
    assert venue.total_checkins == epochs.size and truth.kind == "planted"


def test_every_event_belongs_to_a_venue():
    city = generate_city(SMALL)
    assert set(np.unique(city.checkins.venue_index)) <= set(range(len(city.checkins.venue_ids)))
    assert {v.id for v in city.venues} == set(city.checkins.venue_ids)
    counts = np.bincount(city.checkins.venue_index, minlength=len(city.venues))
    assert [v.total_checkins for v in city.venues] == counts.tolist()


def test_archetype_assignment_is_balanced():
    arch = ward_archetypes(CityConfig())
    assert len(arch) == 60
    assert sorted(np.unique(list(arch.values()), return_counts=True)[1]) == [15] * 4


@pytest.mark.parametrize("trend", ["increase", "decrease", "stable"])
def test_planted_labels_follow_expected_rates(trend):
    cfg = CityConfig(wards_per_archetype=1, weeks=4 + 7 * 4, seed=2)
    _, _, _, truth = plant_new_venue(cfg, trend, created_week=4)
    exp = truth.expected_monthly
    assert len(exp) == 7
    labels = [label_change(a, b).label for a, b in zip(exp, exp[1:])]
    assert truth.monthly_labels == labels
    assert all(lab == trend for lab in labels[1:])         # month 1 includes the opening ramp
    for a, b in zip(exp[1:], exp[2:]):
        # the logistic opening ramp leaves a residue far below the label band
        assert b / a == pytest.approx(TREND_FACTORS[trend], rel=1e-5)


def test_decrease_reaches_zero_demand_months():
    cfg = CityConfig(wards_per_archetype=1, weeks=4 + 40 * 4, seed=2)
    venue, epochs, _, truth = plant_new_venue(cfg, "decrease", created_week=4, popularity=0.2,
                                              specific="Pub")
    months = np.bincount((epochs - venue.created_epoch) // (28 * 86400), minlength=40)
    assert months[-5:].sum() == 0 and months[:3].sum() > 0


def test_stable_planted_venues_become_stationary(batch_city):
    city, ds = batch_city
    planted = [v for v, t in city.truth.venues.items() if t.kind == "planted"]
    weeks = [stationarity_week(ds, v).stationary_week for v in planted]
    assert all(w is not None for w in weeks)
    drift = [v for v, t in city.truth.venues.items() if t.kind == "drifting"]
    assert all(stationarity_week(ds, v).stationary_week is None for v in drift)


def test_online_scenario_labels(online_city):
    city, ds = online_city
    planted = {v: t for v, t in city.truth.venues.items() if t.kind == "planted"}
    assert len(planted) == 60
    assert sorted(t.trend for t in planted.values()).count("increase") == 20
    for v, t in list(planted.items())[:10]:
        assert city.truth.cell_trends[f"{ds.ward_of(v)}|{t.specific}"] == t.trend
        assert monthly_demand(ds, v).months == 7


def test_ingest_round_trip_has_zero_rejects(tmp_path):
    city = generate_city(replace(SMALL, new_venues=(NewVenuePlan("W002", "Pub", created_week=1),)))
    write_city(city, tmp_path, {"seed": 5})
    gt = json.loads((tmp_path / "ground_truth.json").read_text())
    ds, stats = ingest_files(tmp_path / "checkins.csv", tmp_path / "venues.csv",
                             tmp_path / "wards.geojson", tmp_path / "taxonomy.json",
                             window_end=gt["window_end_epoch"])
    assert stats["checkins"]["rejected"] == 0 and stats["venues"]["rejected"] == 0
    assert len(ds.checkins) == len(city.checkins)
    assert np.array_equal(np.sort(ds.checkins.timestamps), np.sort(city.checkins.timestamps))
    assert ds.wards.unassigned == []
    assert {v: ds.ward_of(v) for v in ds.venues} == city.to_dataset().wards.venue_to_ward


def test_config_json_round_trip():
    for cfg in (SMALL, batch_scenario(n_new=3), online_scenario(per_class=2)):
        doc = json.loads(json.dumps(cfg.to_json()))
        assert CityConfig.from_json(doc) == cfg
    with pytest.raises(ConfigError):
        CityConfig.from_json({"wards": 3})
    with pytest.raises(ConfigError):
        NewVenuePlan("W001", "Pub", trend="boom")
