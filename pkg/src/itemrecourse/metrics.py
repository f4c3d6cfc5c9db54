"""Validity, sparsity and side-effect metrics for a recourse."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import ItemCatalog, RatingStore, build_profile, rank_items
from .errors import DataError

DEFAULT_ZERO_TOL = 1e-9


@dataclass(frozen=True)
class MetricsReport:
    success_rate: float
    l0_changes: int
    l0_fraction: float
    l1_change: float
    rbo_mean: float
    rbo_min: float

    def to_dict(self) -> dict:
        return asdict(self)


def success_rate(catalog_after: ItemCatalog, ratings: RatingStore, item: int, group,
                 k: int, exclude_rated: bool = True) -> float:
    """Fraction of ``group`` whose full ranking has ``item`` among the first k.

    Ranks every item for every user, so it is the slow reference path.
    """
    group = list(group)
    if not group:
        raise DataError("success rate of an empty group")
    hits = 0
    for u in group:
        ranking = rank_items(catalog_after, build_profile(ratings, catalog_after, u), exclude_rated, ratings)
        hits += bool(np.any(ranking[:k] == item))
    return hits / len(group)


def feature_delta(v_new, v_old, zero_tol: float = DEFAULT_ZERO_TOL) -> tuple[int, float]:
    """(L0, L1) size of the change, counting only entries above ``zero_tol``."""
    v_new = np.asarray(v_new, dtype=np.float64)
    v_old = np.asarray(v_old, dtype=np.float64)
    if v_new.shape != v_old.shape:
        raise DataError(f"length mismatch: {v_new.shape} vs {v_old.shape}")
    d = np.abs(v_new - v_old)
    return int(np.count_nonzero(d > zero_tol)), float(d.sum())


def rbo(list_a: Sequence, list_b: Sequence, p: float = 0.5, depth: int | None = None) -> float:
    """Rank-biased overlap truncated at the common depth.

    ``(1 - p) * sum_{d=1..D} p^(d-1) * |a[:d] & b[:d]| / d`` with
    ``D = min(len(a), len(b), depth)``.  Identical lists score ``1 - p^D``.
    """
    if not 0.0 < p < 1.0:
        raise DataError(f"p must lie in (0, 1), got {p}")
    a = list(list_a)
    b = list(list_b)
    if len(set(a)) != len(a) or len(set(b)) != len(b):
        raise DataError("ranked lists must not contain duplicates")
    D = min(len(a), len(b))
    if depth is not None:
        D = min(D, depth)
    seen_a, seen_b = set(), set()
    overlap = 0
    total = 0.0
    weight = 1.0
    for d in range(D):
        x, y = a[d], b[d]
        if x == y:
            overlap += 1
        else:
            overlap += (x in seen_b) + (y in seen_a)
        seen_a.add(x)
        seen_b.add(y)
        total += weight * overlap / (d + 1)
        weight *= p
    return (1.0 - p) * total


def side_effect_report(ranks_before, ranks_after, p: float = 0.5,
                       depth: int | None = None) -> tuple[float, float]:
    """Mean and minimum per-user RBO between rankings before and after recourse.

    Accepts either mappings user -> ranked list, or parallel sequences.
    """
    if isinstance(ranks_before, Mapping) or isinstance(ranks_after, Mapping):
        if not (isinstance(ranks_before, Mapping) and isinstance(ranks_after, Mapping)):
            raise DataError("both rankings must be mappings or both sequences")
        if set(ranks_before) != set(ranks_after):
            raise DataError("user sets differ between rankings")
        users = sorted(ranks_before)
        pairs = [(ranks_before[u], ranks_after[u]) for u in users]
    else:
        if len(ranks_before) != len(ranks_after):
            raise DataError("user sets differ between rankings")
        pairs = list(zip(ranks_before, ranks_after))
    if not pairs:
        raise DataError("no users to compare")
    vals = np.array([rbo(x, y, p, depth) for x, y in pairs])
    return float(vals.mean()), float(vals.min())
