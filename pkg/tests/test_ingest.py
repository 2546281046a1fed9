import io
import json
import math
import zlib
from datetime import date

import numpy as np
import pytest

from venue_pulse.errors import IngestError
from venue_pulse.ingest import (Transition, Ward, WardIndex, assign_ward, identify_new_venues,
                                ingest_files, load_dataset, load_wards, parse_checkins,
                                parse_transitions, parse_venues, point_in_polygon,
                                read_checkin_log, save_dataset, wards_to_geojson)

from conftest import square, square_ward, venue


def winding_number(lat, lon, ring):
    """Signed crossings of a closed ring around (lat, lon); independent of ray casting."""
    wn = 0
    for (y1, x1), (y2, x2) in zip(ring[:-1], ring[1:]):
        side = (x2 - x1) * (lat - y1) - (y2 - y1) * (lon - x1)
        if y1 <= lat < y2 and side > 0:
            wn += 1
        elif y2 <= lat < y1 and side < 0:
            wn -= 1
    return wn


def oracle_inside(lat, lon, rings):
    outer, holes = rings[0], rings[1:]
    return winding_number(lat, lon, outer) != 0 and all(winding_number(lat, lon, h) == 0 for h in holes)


POLYGONS = {
    "square": (square(0.0, 0.0, 2.0),),
    "triangle": (((0.0, 0.0), (3.0, 1.0), (0.5, 2.5), (0.0, 0.0)),),
    "concave": (((0.0, 0.0), (0.0, 3.0), (3.0, 3.0), (3.0, 2.0), (1.0, 2.0), (1.0, 1.0),
                 (3.0, 1.0), (3.0, 0.0), (0.0, 0.0)),),
    "holed": (square(0.0, 0.0, 3.0), square(1.0, 1.0, 1.0)),
    "star": tuple([[(1.5 + (1.4 if i % 2 == 0 else 0.6) * math.cos(math.pi * i / 5),
                     1.5 + (1.4 if i % 2 == 0 else 0.6) * math.sin(math.pi * i / 5))
                    for i in list(range(10)) + [0]]]),
}


@pytest.mark.parametrize("name", sorted(POLYGONS))
def test_ray_casting_matches_winding_number(name):
    rings = POLYGONS[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    pts = rng.uniform(-0.5, 3.5, size=(2000, 2))
    for lat, lon in pts:
        got = point_in_polygon(lat, lon, rings)
        assert got is not None
        assert got == oracle_inside(lat, lon, rings)


def test_ward_index_matches_oracle_on_10k_points():
    wards = [square_ward(f"{i}{j}", float(i), float(j)) for i in range(3) for j in range(3)]
    wards.append(Ward("star", (POLYGONS["star"],)))
    index = WardIndex(wards)
    rng = np.random.default_rng(3)
    for lat, lon in rng.uniform(-0.5, 3.5, size=(10000, 2)):
        expected = [w.ward_id for w in index.wards
                    if any(oracle_inside(lat, lon, poly) for poly in w.polygons)]
        assert assign_ward((lat, lon), index) == (expected[0] if expected else None)


def test_assign_ward_basic_and_shared_edge():
    index = WardIndex([square_ward("B", 0.0, 1.0), square_ward("A", 0.0, 0.0)])
    assert assign_ward((0.5, 0.5), index) == "A"
    assert assign_ward((0.5, 1.5), index) == "B"
    assert assign_ward((5.0, 5.0), index) is None
    assert assign_ward((0.5, 1.0), index) == "A"   # shared edge
    assert assign_ward((1.0, 1.0), index) == "A"   # shared corner
    assert assign_ward((0.5, 2.0), index) == "B"   # B's own outer edge


def test_numeric_ward_ids_order_numerically():
    index = WardIndex([square_ward("10", 0.0, 0.0), square_ward("9", 0.0, 1.0)])
    assert index.ward_ids == ["9", "10"]
    assert assign_ward((0.5, 1.0), index) == "9"


def test_ring_must_be_closed():
    with pytest.raises(IngestError):
        Ward("x", ((((0, 0), (0, 1), (1, 1), (1, 0)),),))
    with pytest.raises(IngestError):
        Ward("x", ((((0, 0), (0, 1), (0, 0)),),))


def test_unassigned_venues_are_flagged():
    index = WardIndex([square_ward("A", 0.0, 0.0)])
    index.assign([venue("in", 0.5, 0.5), venue("out", 5.0, 5.0)])
    assert index.venue_to_ward == {"in": "A"}
    assert index.unassigned == ["out"]


def test_geojson_round_trip(tmp_path):
    wards = [square_ward("A", 51.0, -0.2, 0.1), Ward("M", ((square(0, 0),), (square(5, 5),)))]
    path = tmp_path / "w.geojson"
    path.write_text(json.dumps(wards_to_geojson(wards)))
    index = load_wards(path)
    assert index.ward_ids == ["A", "M"]
    assert assign_ward((51.05, -0.15), index) == "A"
    assert assign_ward((5.5, 5.5), index) == "M"
    with pytest.raises(IngestError):
        load_wards(io.StringIO(json.dumps({"type": "FeatureCollection", "features": [
            {"type": "Feature", "properties": {}, "geometry": {"type": "Polygon", "coordinates": []}}]})))


def test_parse_checkins_row_mapping():
    src = io.StringIO("venue_id,timestamp,user_id\nv1,2012-03-05T08:30:00Z,u9\n")
    rows, report = parse_checkins(src)
    assert len(rows) == 1
    c = rows[0]
    assert (c.venue_id, c.user_id, c.timestamp.isoformat()) == ("v1", "u9", "2012-03-05T08:30:00+00:00")
    assert report.rejected == 0


def test_parse_checkins_empty_and_rejects():
    rows, report = parse_checkins(io.StringIO(""))
    assert rows == [] and report.rejected == 0
    good = "".join(f"v1,2012-03-05T08:{i % 60:02d}:00Z,u{i}\n" for i in range(200))
    rows, report = parse_checkins(io.StringIO("venue_id,timestamp,user_id\n" + good +
                                              "v1,not-a-time,u1\n"))
    assert len(rows) == 200 and report.rejected == 1
    with pytest.raises(IngestError) as err:
        parse_checkins(io.StringIO("venue_id,timestamp,user_id\nv1,bad,u\nv1,2012-01-01T00:00:00Z,u\n"))
    assert err.value.samples and "invalid timestamp" in err.value.samples[0]


def test_parse_checkins_jsonl():
    src = io.StringIO('{"venue_id": "v1", "timestamp": "2012-03-05T08:30:00Z"}\n\n'
                      '{"venue_id": "v2", "timestamp": "2012-03-05T09:30:00Z", "user_id": "u"}\n')
    rows, _ = parse_checkins(src, fmt="jsonl")
    assert [r.venue_id for r in rows] == ["v1", "v2"]
    with pytest.raises(IngestError):
        parse_checkins(io.StringIO(""), fmt="xml")


def test_read_checkin_log_rejects_unknown_venues():
    body = "venue_id,timestamp,user_id\n" + "v1,2012-03-05T08:30:00Z,u\n" * 99 + "zz,2012-03-05T08:30:00Z,u\n"
    log_, report = read_checkin_log(io.StringIO(body), ["v1"])
    assert len(log_) == 99 and report.rejected == 1


def test_parse_venues():
    src = io.StringIO("# comment\nvenue_id,lat,lon,general,specific,created_at,total_checkins\n"
                      "v1,51.5,-0.1,Food,Pub,2012-01-01,150\n")
    venues, report = parse_venues(src)
    assert venues[0].created_at == date(2012, 1, 1) and venues[0].total_checkins == 150


@pytest.mark.parametrize("created,total,member", [
    (date(2012, 1, 1), 150, True), (date(2011, 1, 1), 150, False), (date(2012, 1, 1), 99, False),
    (date(2012, 1, 1), 100, True), (date(2011, 6, 30), 500, False)])
def test_identify_new_venues(created, total, member):
    v = venue("v", 0.5, 0.5, created=created, total=total)
    cohort = identify_new_venues([v], date(2011, 6, 30), 100)
    assert ("v" in cohort.members) is member


def test_cohort_is_conjunction_of_predicates():
    rng = np.random.default_rng(1)
    base = date(2011, 1, 1).toordinal()
    vs = [venue(f"v{i}", 0.5, 0.5, created=date.fromordinal(base + int(rng.integers(0, 365))),
                total=int(rng.integers(0, 200))) for i in range(300)]
    cohort = identify_new_venues(vs, date(2011, 6, 30), 100)
    assert cohort.members == {v.id for v in vs if v.created_at > date(2011, 6, 30)
                              and v.total_checkins >= 100}


def test_transitions_parse_and_store(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("from_venue_id,to_venue_id,timestamp\na,b,2012-01-02T10:00:00Z\n")
    trans, report = parse_transitions(path)
    assert trans == (Transition("a", "b", 1325498400),)


def test_ingest_save_load_round_trip(tmp_path):
    (tmp_path / "checkins.csv").write_text(
        "venue_id,timestamp,user_id\nv1,2012-01-02T08:30:00Z,u1\nv2,2012-01-03T17:00:00Z,\n")
    (tmp_path / "venues.csv").write_text(
        "venue_id,lat,lon,general,specific,created_at,total_checkins\n"
        "v1,0.5,0.5,Food,Café,2010-01-01,1\nv2,0.5,1.5,Food,Café,2010-01-01,1\n")
    (tmp_path / "wards.geojson").write_text(json.dumps(wards_to_geojson(
        [square_ward("A", 0.0, 0.0), square_ward("B", 0.0, 1.0)])))
    (tmp_path / "tr.csv").write_text("from_venue_id,to_venue_id,timestamp\nv1,v2,2012-01-02T09:00:00Z\n")
    ds, stats = ingest_files(tmp_path / "checkins.csv", tmp_path / "venues.csv",
                             tmp_path / "wards.geojson", transitions_path=tmp_path / "tr.csv")
    assert ds.wards.venue_to_ward == {"v1": "A", "v2": "B"}
    assert stats["checkins"]["rejected"] == 0
    save_dataset(ds, tmp_path / "out", stats, {"seed": 1})
    back = load_dataset(tmp_path / "out")
    assert back.wards.venue_to_ward == ds.wards.venue_to_ward
    assert np.array_equal(back.checkins.timestamps, ds.checkins.timestamps)
    assert back.window_end == ds.window_end and back.grid == ds.grid
    assert back.transitions == ds.transitions
    (tmp_path / "empty").mkdir()
    with pytest.raises(IngestError, match="missing"):
        load_dataset(tmp_path / "empty")
