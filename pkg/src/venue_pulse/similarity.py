"""Information-theoretic comparison of temporal profiles and nearest-ward retrieval.

All logarithms are base 2, so the Jensen-Shannon divergence lies in [0, 1].
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

import numpy as np

from .errors import ProfileError
from .ingest import ward_sort_key
from .profiles import DEFAULT_MIN_SUPPORT, TemporalProfile

log = logging.getLogger(__name__)

NORM_TOL = 1e-9


def _as_distribution(p, name="p") -> np.ndarray:
    arr = np.asarray(p.values if isinstance(p, TemporalProfile) else p, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ProfileError(f"{name} must be a non-empty 1-D profile")
    if (arr < 0).any() or abs(arr.sum() - 1.0) > NORM_TOL:
        raise ProfileError(f"{name} is not a normalized profile (sum={arr.sum()!r})")
    return arr


def _smooth(arr: np.ndarray, eps: float) -> np.ndarray:
    if eps <= 0:
        return arr
    arr = arr + eps
    return arr / arr.sum()


def _entropy(arr: np.ndarray) -> float:
    nz = arr[arr > 0]
    return float(-(nz * np.log2(nz)).sum())


def shannon_entropy(p) -> float:
    """Entropy in bits with the ``0 log 0 = 0`` convention."""
    return _entropy(_as_distribution(p))


def jsd(p, q, eps: float = 0.0) -> float:
    """Jensen-Shannon divergence, H((p+q)/2) - (H(p)+H(q))/2, clipped to [0, 1]."""
    a, b = _as_distribution(p, "p"), _as_distribution(q, "q")
    if a.size != b.size:
        raise ProfileError(f"profile lengths differ: {a.size} vs {b.size}")
    a, b = _smooth(a, eps), _smooth(b, eps)
    value = _entropy(0.5 * (a + b)) - 0.5 * (_entropy(a) + _entropy(b))
    return min(max(value, 0.0), 1.0)


def kld(p, q, on_violation: str = "raise", eps: float = 0.0) -> float:
    """Kullback-Leibler divergence in bits.

    Where ``q`` is zero but ``p`` is not, raise (default) or return ``inf``
    when ``on_violation="inf"``.
    """
    a, b = _as_distribution(p, "p"), _as_distribution(q, "q")
    if a.size != b.size:
        raise ProfileError(f"profile lengths differ: {a.size} vs {b.size}")
    a, b = _smooth(a, eps), _smooth(b, eps)
    support = a > 0
    if (b[support] <= 0).any():
        if on_violation == "inf":
            return math.inf
        raise ProfileError("KL divergence undefined: q has zeros where p has mass")
    return float((a[support] * np.log2(a[support] / b[support])).sum())


def jsd_rows(target: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """JSD between one distribution and each row of a matrix of distributions."""
    def ent(m):
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(m > 0, m * np.log2(np.where(m > 0, m, 1.0)), 0.0)
        return -terms.sum(axis=-1)
    mid = 0.5 * (rows + target[None, :])
    vals = ent(mid) - 0.5 * (ent(target) + ent(rows))
    return np.clip(vals, 0.0, 1.0)


@dataclass(frozen=True)
class DivergenceMatrix:
    subjects: tuple
    values: np.ndarray
    excluded: tuple = ()


def jsd_matrix(profiles: Mapping[str, TemporalProfile], force: bool = False,
               min_support: float = DEFAULT_MIN_SUPPORT) -> DivergenceMatrix:
    """Pairwise JSD over the given (raw or normalized) profiles.

    Low-support or empty profiles are dropped with a warning unless ``force``.
    """
    keep, excluded, dists = [], [], []
    for subject, prof in profiles.items():
        total = prof.total
        if total <= 0 or (not force and prof.low_support(min_support)):
            excluded.append(subject)
            continue
        vals = prof.values
        keep.append(subject)
        dists.append(vals / vals.sum())
    if excluded:
        log.warning("jsd_matrix: excluded %d low-support subjects: %s", len(excluded),
                    ", ".join(excluded[:10]))
    n = len(keep)
    mat = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            mat[i, j] = mat[j, i] = jsd(dists[i], dists[j])
    return DivergenceMatrix(tuple(keep), mat, tuple(excluded))


def rank_wards(store, ward_id: str, category: Optional[str] = None,
               exclude: Iterable[str] = ()) -> list:
    """All other wards with a non-empty ``category`` profile, ascending by JSD to ``ward_id``.

    Ties are broken by ward id. Returns ``[(ward_id, jsd), ...]``.
    """
    mat = store.ward_matrix(category)
    col = store._col(ward_id)
    target = mat[col]
    if target.sum() <= 0:
        raise ProfileError(f"ward {ward_id!r} has no {category or 'all-category'} activity")
    skip = set(exclude) | {ward_id}
    totals = mat.sum(axis=1)
    cand = [i for i, w in enumerate(store.ward_ids) if w not in skip and totals[i] > 0]
    if not cand:
        return []
    rows = mat[cand] / totals[cand][:, None]
    vals = jsd_rows(target / target.sum(), rows)
    ranked = sorted(zip((store.ward_ids[i] for i in cand), vals.tolist()),
                    key=lambda wv: (wv[1], ward_sort_key(wv[0])))
    return ranked


def k_nearest_wards(store, ward_id: str, category: Optional[str], k: int,
                    exclude: Iterable[str] = ()) -> list:
    """The ``k`` wards most similar to ``ward_id`` on the ``category`` profile."""
    ranked = rank_wards(store, ward_id, category, exclude)
    if len(ranked) < k:
        log.warning("only %d eligible wards for k=%d around %s", len(ranked), k, ward_id)
    return ranked[:k]


def dominant_category(store, ward_id: str, hour: int) -> Optional[str]:
    """General category with the most check-ins in ``ward_id`` at hour-of-week ``hour``.

    Ties go to the lexicographically smallest category; no activity gives ``None``.
    """
    best, best_count = None, 0.0
    for g in sorted(store.dataset.taxonomy.general):
        count = store.ward_matrix(g)[store._col(ward_id), hour]
        if count > best_count:
            best, best_count = g, count
    return best


def top_wards(store, n: int) -> list:
    """The ``n`` busiest wards by total check-ins (ties by ward id)."""
    totals = store.ward_totals()
    order = sorted(range(len(store.ward_ids)),
                   key=lambda i: (-totals[i], ward_sort_key(store.ward_ids[i])))
    return [store.ward_ids[i] for i in order[:n]]
