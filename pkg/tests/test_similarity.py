import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from venue_pulse.errors import ProfileError
from venue_pulse.profiles import CityProfiles, TemporalProfile
from venue_pulse.similarity import (dominant_category, jsd, jsd_matrix, jsd_rows, k_nearest_wards,
                                    kld, rank_wards, shannon_entropy, top_wards)

from conftest import HOUR, T0, make_dataset, square_ward, venue


def entropy_oracle(p):
    return -sum(x * math.log(x, 2) for x in p if x > 0)


def test_entropy_point_values():
    assert shannon_entropy([1.0] + [0.0] * 167) == 0.0
    assert shannon_entropy(np.full(168, 1 / 168)) == pytest.approx(math.log2(168), abs=1e-12)
    assert shannon_entropy([0.75, 0.25]) == pytest.approx(0.8113, abs=1e-4)
    with pytest.raises(ProfileError):
        shannon_entropy([0.5, 0.6])


def test_jsd_point_values():
    assert jsd([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0, abs=1e-12)
    direct = entropy_oracle([0.75, 0.25]) - 0.5 * (0 + 1)
    assert jsd([1.0, 0.0], [0.5, 0.5]) == pytest.approx(direct, abs=1e-15)
    assert jsd([1.0, 0.0], [0.5, 0.5]) == pytest.approx(0.3113, abs=1e-4)
    p = np.full(168, 1 / 168)
    assert jsd(p, p) == 0.0
    with pytest.raises(ProfileError):
        jsd([1.0, 0.0], [1.0, 0.0, 0.0])


def test_kld():
    assert kld([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert kld([1.0, 0.0], [0.5, 0.5]) == pytest.approx(1.0, abs=1e-12)
    p, q = [0.9, 0.1], [0.5, 0.5]
    pq = 0.9 * math.log2(0.9 / 0.5) + 0.1 * math.log2(0.1 / 0.5)
    qp = 0.5 * math.log2(0.5 / 0.9) + 0.5 * math.log2(0.5 / 0.1)
    assert kld(p, q) == pytest.approx(pq, abs=1e-12)
    assert kld(q, p) == pytest.approx(qp, abs=1e-12)
    assert abs(kld(p, q) - kld(q, p)) > 0.1
    with pytest.raises(ProfileError):
        kld([0.5, 0.5], [1.0, 0.0])
    assert kld([0.5, 0.5], [1.0, 0.0], on_violation="inf") == math.inf
    assert math.isfinite(kld([0.5, 0.5], [1.0, 0.0], eps=1e-6))


def distributions(n=168):
    return arrays(np.float64, n, elements=st.floats(0, 1, allow_nan=False)) \
        .filter(lambda a: a.sum() > 1e-6).map(lambda a: a / a.sum())


@settings(max_examples=200, deadline=None)
@given(distributions(), distributions())
def test_jsd_symmetric_and_bounded(p, q):
    a, b = jsd(p, q), jsd(q, p)
    assert abs(a - b) <= 1e-12
    assert 0.0 <= a <= 1.0
    assert jsd(p, p) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(distributions(12), distributions(12), distributions(12))
def test_jsd_sqrt_triangle_inequality(p, q, r):
    assert math.sqrt(jsd(p, r)) <= math.sqrt(jsd(p, q)) + math.sqrt(jsd(q, r)) + 1e-9


@settings(max_examples=50, deadline=None)
@given(distributions(20), st.lists(distributions(20), min_size=1, max_size=6))
def test_jsd_rows_matches_scalar(p, rows):
    vals = jsd_rows(p, np.vstack(rows))
    assert np.allclose(vals, [jsd(p, r) for r in rows], atol=1e-12)


def test_jsd_zero_only_for_equal():
    rng = np.random.default_rng(0)
    p = rng.dirichlet(np.ones(168))
    q = p.copy()
    q[0] += 1e-3
    q /= q.sum()
    assert jsd(p, q) > 0


def _profiles(rows, total=1000.0):
    return {f"W{i}": TemporalProfile(np.asarray(r, float) * total, subject=f"W{i}")
            for i, r in enumerate(rows)}


def test_jsd_matrix_shapes():
    one = jsd_matrix(_profiles([[1, 1, 0]]))
    assert one.values.shape == (1, 1) and one.values[0, 0] == 0
    dup = jsd_matrix(_profiles([[1, 2, 3], [1, 2, 3], [3, 0, 0]]))
    assert dup.values[0, 1] == 0
    assert np.array_equal(dup.values, dup.values.T)
    assert (np.diag(dup.values) == 0).all()
    assert ((dup.values >= 0) & (dup.values <= 1)).all()


def test_jsd_matrix_low_support(caplog):
    profs = _profiles([[1, 2, 3], [3, 0, 0]])
    profs["tiny"] = TemporalProfile(np.array([1.0, 0, 0]), subject="tiny")
    with caplog.at_level(logging.WARNING):
        m = jsd_matrix(profs)
    assert m.subjects == ("W0", "W1") and m.excluded == ("tiny",)
    assert "tiny" in caplog.text
    assert jsd_matrix(profs, force=True).subjects == ("W0", "W1", "tiny")


# -- retrieval on a hand-built city ----------------------------------------

def _city():
    wards = [square_ward(w, 0.0, float(i)) for i, w in enumerate(["A", "B", "C", "D", "E"])]
    venues = [venue(f"{w}f", 0.5, i + 0.5, "Café") for i, w in enumerate("ABCDE")]
    venues.append(venue("At", 0.4, 0.4, "Train Station"))
    venues.append(venue("Bt", 0.4, 1.4, "Train Station"))
    hours = {"A": [8, 9, 17], "B": [8, 9, 17], "C": [8, 9, 20], "D": [20, 21, 22], "E": [20, 21, 22]}
    events = [(f"{w}f", T0 + h * HOUR) for w, hs in hours.items() for h in hs for _ in range(5)]
    events += [("At", T0 + 17 * HOUR)] * 7 + [("Bt", T0 + 17 * HOUR)] * 5
    return make_dataset(venues, events, wards)


def test_k_nearest_duplicate_first_and_tie_break():
    store = CityProfiles(_city())
    ranked = k_nearest_wards(store, "D", "Food", 4)
    assert ranked[0] == ("E", 0.0)
    # A and B carry identical Food profiles, so they tie and sort by id
    ids = [w for w, _ in ranked]
    assert ids.index("A") < ids.index("B")
    vals = [v for _, v in ranked]
    assert vals == sorted(vals)
    assert k_nearest_wards(store, "D", "Food", 4, exclude={"E"})[0][0] != "E"


def test_k_nearest_short_list_warns(caplog):
    store = CityProfiles(_city())
    with caplog.at_level(logging.WARNING):
        ranked = k_nearest_wards(store, "A", "Travel & Transport", 3)
    assert [w for w, _ in ranked] == ["B"]
    assert "only 1 eligible" in caplog.text


def test_rank_wards_needs_target_activity():
    store = CityProfiles(_city())
    with pytest.raises(ProfileError):
        rank_wards(store, "C", "Travel & Transport")


def test_dominant_category():
    store = CityProfiles(_city())
    assert dominant_category(store, "A", 17) == "Travel & Transport"  # 7 against 5
    assert dominant_category(store, "B", 17) == "Food"                # 5 against 5, lexicographic
    assert dominant_category(store, "A", 8) == "Food"
    assert dominant_category(store, "D", 3) is None
    assert dominant_category(store, "D", 20) == "Food"


def test_top_wards():
    store = CityProfiles(_city())
    assert top_wards(store, 2) == ["A", "B"]
    assert top_wards(store, 5)[2:] == ["C", "D", "E"]


def test_synthetic_commuter_ward_peaks_on_transport(batch_city):
    city, ds = batch_city
    store = CityProfiles(ds)
    commuters = [w for w, a in city.truth.ward_archetype.items() if a == "commuter"]
    assert all(dominant_category(store, w, 17) == "Travel & Transport" for w in commuters)


def test_synthetic_within_archetype_jsd_smaller(batch_city):
    city, ds = batch_city
    store = CityProfiles(ds, before=ds.window_start + 4 * 168 * HOUR)
    wards = store.ward_ids
    mat = jsd_matrix({w: store.ward_profile(w) for w in wards})
    arch = np.array([city.truth.ward_archetype[w] for w in mat.subjects])
    same = arch[:, None] == arch[None, :]
    off = ~np.eye(len(arch), dtype=bool)
    assert mat.values[same & off].mean() < mat.values[~same].mean()
