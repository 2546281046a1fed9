from datetime import date, datetime, timezone

import numpy as np
import pytest

from venue_pulse.core import CategoryTaxonomy, CheckinLog, TimeGrid, Venue, date_to_epoch
from venue_pulse.ingest import Ward, WardIndex, build_dataset
from venue_pulse.synth import batch_scenario, generate_city, online_scenario

START = date(2012, 1, 2)  # a Monday
T0 = date_to_epoch(START)
HOUR = 3600
WEEK = 168 * HOUR

TAXONOMY = {"Food": ["Italian Restaurant", "Café"], "Travel & Transport": ["Train Station"]}


def square(lat0, lon0, size=1.0):
    return ((lat0, lon0), (lat0, lon0 + size), (lat0 + size, lon0 + size),
            (lat0 + size, lon0), (lat0, lon0))


def square_ward(ward_id, lat0, lon0, size=1.0):
    return Ward(ward_id, ((square(lat0, lon0, size),),))


def venue(vid, lat, lon, specific="Italian Restaurant", created=date(2010, 1, 1), total=0,
          taxonomy=TAXONOMY):
    general = next(g for g, kids in taxonomy.items() if specific in kids)
    return Venue(vid, lat, lon, general, specific, created, total)


def make_dataset(venues, events, wards, weeks=4, taxonomy=TAXONOMY):
    """Dataset from ``[(venue_id, epoch), ...]`` on an hourly grid starting Monday START."""
    ids = sorted(v.id for v in venues)
    pos = {v: i for i, v in enumerate(ids)}
    idx = np.array([pos[v] for v, _ in events], dtype=np.int64)
    ts = np.array([e for _, e in events], dtype=np.int64)
    log_ = CheckinLog(tuple(ids), idx, ts)
    grid = TimeGrid(datetime(START.year, START.month, START.day, tzinfo=timezone.utc))
    return build_dataset(venues, log_, WardIndex(list(wards)), CategoryTaxonomy.from_tree(taxonomy),
                         grid, T0 + weeks * WEEK)


@pytest.fixture(scope="session")
def batch_city():
    city = generate_city(batch_scenario(seed=7))
    return city, city.to_dataset()


@pytest.fixture(scope="session")
def online_city():
    city = generate_city(online_scenario(seed=11))
    return city, city.to_dataset()


# -- acceptance reporting ----------------------------------------------------

_ACCEPTANCE = {}   # nodeid -> [label, detail, outcome]


@pytest.fixture
def criterion(request):
    """Record a label and measured values; the outcome comes from the test result."""
    entry = _ACCEPTANCE.setdefault(request.node.nodeid, ["", "", "not run"])

    def record(label, detail):
        entry[0], entry[1] = label, detail
        print(f"{label}: {detail}")
    return record


def pytest_runtest_logreport(report):
    if report.nodeid in _ACCEPTANCE and (report.when == "call" or report.failed):
        _ACCEPTANCE[report.nodeid][2] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, (label, detail, outcome) in _ACCEPTANCE.items():
        mark = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{mark}  {label or nodeid}  {detail}".rstrip())
