"""Items, ratings and the content-filtering scorer.

An item's score for a user is the rating-weighted sum of its similarity
(dot product) with every item the user rated.  Factoring the user side out
gives a profile ``w_u = sum_k r_k * v_{i_k}`` and ``score(z, u) = v_z . w_u``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DataError


def _as_csr(features) -> sp.csr_matrix:
    if sp.issparse(features):
        mat = sp.csr_matrix(features, dtype=np.float64, copy=True)
    else:
        arr = np.asarray(features, dtype=np.float64)
        if arr.ndim != 2:
            raise DataError(f"feature matrix must be 2-d, got shape {arr.shape}")
        mat = sp.csr_matrix(arr)
    mat.sum_duplicates()
    mat.sort_indices()
    mat.eliminate_zeros()
    return mat


class ItemCatalog:
    """Item feature matrix with a per-feature mutability mask and optional box bounds.

    Features are stored as CSR rows; ``row`` and ``dense`` give dense views.
    ``bounds`` is an ``(f, 2)`` array of ``(lo, hi)``; use ``-inf``/``inf`` for
    an open side.  Instances are treated as immutable.
    """

    def __init__(
        self,
        features,
        mutable_mask=None,
        bounds=None,
        item_ids: Sequence[str] | None = None,
        feature_names: Sequence[str] | None = None,
        feature_sources: Sequence[str] | None = None,
    ):
        self.features = _as_csr(features)
        n_items, f = self.features.shape
        if not np.all(np.isfinite(self.features.data)):
            raise DataError("feature matrix contains non-finite values")

        if mutable_mask is None:
            mutable_mask = np.ones(f, dtype=bool)
        self.mutable_mask = np.asarray(mutable_mask, dtype=bool).copy()
        if self.mutable_mask.shape != (f,):
            raise DataError(f"mutable_mask has length {self.mutable_mask.size}, expected {f}")

        if bounds is not None:
            bounds = np.asarray(bounds, dtype=np.float64).copy()
            if bounds.shape != (f, 2):
                raise DataError(f"bounds must have shape ({f}, 2), got {bounds.shape}")
            if np.any(np.isnan(bounds)) or np.any(bounds[:, 0] > bounds[:, 1]):
                raise DataError("bounds must satisfy lo <= hi")
            if n_items:
                col_min = self.features.min(axis=0).toarray().ravel()
                col_max = self.features.max(axis=0).toarray().ravel()
                if np.any(col_min < bounds[:, 0]) or np.any(col_max > bounds[:, 1]):
                    raise DataError("catalog features fall outside the given bounds")
        self.bounds = bounds

        if item_ids is not None:
            item_ids = tuple(str(i) for i in item_ids)
            if len(item_ids) != n_items:
                raise DataError("item_ids length does not match number of items")
            if len(set(item_ids)) != n_items:
                raise DataError("duplicate external item ids")
        self.item_ids = item_ids
        if feature_names is not None:
            feature_names = tuple(feature_names)
            if len(feature_names) != f:
                raise DataError("feature_names length does not match number of features")
        self.feature_names = feature_names
        if feature_sources is not None:
            feature_sources = tuple(feature_sources)
            if len(feature_sources) != f:
                raise DataError("feature_sources length does not match number of features")
        self.feature_sources = feature_sources
        self._item_index = None

    @property
    def n_items(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def item_index(self) -> dict[str, int]:
        if self._item_index is None:
            ids = self.item_ids if self.item_ids is not None else [str(i) for i in range(self.n_items)]
            self._item_index = {e: i for i, e in enumerate(ids)}
        return self._item_index

    def resolve_item(self, item) -> int:
        """Map an internal index or external id to the internal index."""
        if isinstance(item, (int, np.integer)):
            if not 0 <= item < self.n_items:
                raise DataError(f"item index {item} out of range")
            return int(item)
        key = str(item)
        if self.item_ids is not None and key in self.item_index:
            return self.item_index[key]
        if key.isdigit() and int(key) < self.n_items:
            return int(key)
        raise DataError(f"unknown item {item!r}")

    def row(self, item: int) -> np.ndarray:
        return self.features.getrow(item).toarray().ravel()

    def dense(self) -> np.ndarray:
        return self.features.toarray()

    def clamp(self, v: np.ndarray) -> np.ndarray:
        if self.bounds is None:
            return v
        return np.clip(v, self.bounds[:, 0], self.bounds[:, 1])

    def with_row(self, item: int, v) -> "ItemCatalog":
        """Copy of the catalog with one item's feature row replaced."""
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.n_features,):
            raise DataError(f"feature vector has length {v.size}, expected {self.n_features}")
        feats = self.features.tolil(copy=True)
        feats[item, :] = v
        return ItemCatalog(feats.tocsr(), self.mutable_mask, self.bounds, self.item_ids,
                           self.feature_names, self.feature_sources)

    def __repr__(self):
        return (f"ItemCatalog(n_items={self.n_items}, n_features={self.n_features}, "
                f"mutable={int(self.mutable_mask.sum())})")


class RatingStore:
    """Per-user rated items with ratings, stored as a CSR user x item matrix.

    Explicit zero ratings are kept: they still mark the item as rated.
    """

    def __init__(self, indptr, indices, data, n_items: int,
                 user_ids: Sequence[str] | None = None,
                 item_ids: Sequence[str] | None = None):
        indptr = np.asarray(indptr, dtype=np.int64)
        indices = np.asarray(indices, dtype=np.int64)
        data = np.asarray(data, dtype=np.float64)
        n_users = len(indptr) - 1
        if not np.all(np.isfinite(data)):
            raise DataError("ratings must be finite")
        if indices.size and (indices.min() < 0 or indices.max() >= n_items):
            raise DataError("rated item id out of range")
        # sort each user's row by item and reject duplicates
        for u in range(n_users):
            lo, hi = indptr[u], indptr[u + 1]
            order = np.argsort(indices[lo:hi], kind="stable")
            indices[lo:hi] = indices[lo:hi][order]
            data[lo:hi] = data[lo:hi][order]
            if hi - lo > 1 and np.any(np.diff(indices[lo:hi]) == 0):
                raise DataError(f"duplicate rating for user {u}")
        self.matrix = sp.csr_matrix((data, indices, indptr), shape=(n_users, n_items))
        self.user_ids = tuple(user_ids) if user_ids is not None else None
        self.item_ids = tuple(item_ids) if item_ids is not None else None
        if self.user_ids is not None and len(self.user_ids) != n_users:
            raise DataError("user_ids length does not match number of users")

    @classmethod
    def from_triples(cls, users: Iterable[int], items: Iterable[int], ratings: Iterable[float],
                     n_users: int | None = None, n_items: int | None = None,
                     user_ids=None, item_ids=None) -> "RatingStore":
        users = np.asarray(list(users), dtype=np.int64)
        items = np.asarray(list(items), dtype=np.int64)
        ratings = np.asarray(list(ratings), dtype=np.float64)
        if not (users.size == items.size == ratings.size):
            raise DataError("users, items and ratings must have equal length")
        if n_users is None:
            n_users = int(users.max()) + 1 if users.size else 0
        if n_items is None:
            n_items = int(items.max()) + 1 if items.size else 0
        if users.size and (users.min() < 0 or users.max() >= n_users):
            raise DataError("user id out of range")
        order = np.argsort(users, kind="stable")
        counts = np.bincount(users, minlength=n_users)
        indptr = np.concatenate([[0], np.cumsum(counts)])
        return cls(indptr, items[order], ratings[order], n_items, user_ids, item_ids)

    @property
    def n_users(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_items(self) -> int:
        return self.matrix.shape[1]

    @property
    def n_ratings(self) -> int:
        return self.matrix.nnz

    def _check_user(self, user: int):
        if not 0 <= user < self.n_users:
            raise DataError(f"unknown user {user}")

    def items_of(self, user: int) -> np.ndarray:
        self._check_user(user)
        m = self.matrix
        return m.indices[m.indptr[user]:m.indptr[user + 1]].copy()

    def ratings_of(self, user: int) -> np.ndarray:
        self._check_user(user)
        m = self.matrix
        return m.data[m.indptr[user]:m.indptr[user + 1]].copy()

    def has_rated(self, user: int, item: int) -> bool:
        items = self.items_of(user)
        pos = np.searchsorted(items, item)
        return bool(pos < items.size and items[pos] == item)

    def activity(self) -> np.ndarray:
        """Number of ratings per user."""
        return np.diff(self.matrix.indptr)

    def __repr__(self):
        return f"RatingStore(n_users={self.n_users}, n_items={self.n_items}, n_ratings={self.n_ratings})"


@dataclass(frozen=True)
class UserProfile:
    user: int
    w: np.ndarray

    @property
    def is_empty(self) -> bool:
        return not np.any(self.w)


def _check_compatible(ratings: RatingStore, catalog: ItemCatalog):
    if ratings.n_items != catalog.n_items:
        raise DataError(
            f"ratings reference {ratings.n_items} items but catalog has {catalog.n_items}")


def build_profile(ratings: RatingStore, catalog: ItemCatalog, user: int) -> UserProfile:
    _check_compatible(ratings, catalog)
    items = ratings.items_of(user)
    r = ratings.ratings_of(user)
    w = np.asarray(catalog.features[items].T @ r, dtype=np.float64).ravel()
    return UserProfile(int(user), w)


def build_profiles(ratings: RatingStore, catalog: ItemCatalog, users=None) -> np.ndarray:
    """Stack of profiles, one row per user in ``users`` (all users if None)."""
    _check_compatible(ratings, catalog)
    users = np.arange(ratings.n_users) if users is None else np.asarray(users, dtype=np.int64)
    if users.size and (users.min() < 0 or users.max() >= ratings.n_users):
        raise DataError("unknown user in profile request")
    sub = ratings.matrix[users]
    return np.asarray((sub @ catalog.features).toarray(), dtype=np.float64)


def _profile_vector(profile) -> np.ndarray:
    return profile.w if isinstance(profile, UserProfile) else np.asarray(profile, dtype=np.float64)


def score_item(item, profile) -> float:
    v = np.asarray(item, dtype=np.float64)
    w = _profile_vector(profile)
    if v.shape != w.shape:
        raise DataError(f"dimension mismatch: item {v.shape} vs profile {w.shape}")
    return float(v @ w)


def item_scores(catalog: ItemCatalog, profile) -> np.ndarray:
    """Score of every catalog item for one profile."""
    w = _profile_vector(profile)
    if w.shape != (catalog.n_features,):
        raise DataError(f"dimension mismatch: profile {w.shape} vs catalog f={catalog.n_features}")
    return np.asarray(catalog.features @ w).ravel()


def _candidates(catalog, profile, exclude_rated, ratings, omit=None):
    keep = np.ones(catalog.n_items, dtype=bool)
    if exclude_rated:
        if ratings is None:
            raise DataError("exclude_rated requires a RatingStore")
        user = profile.user if isinstance(profile, UserProfile) else None
        if user is None:
            raise DataError("exclude_rated requires a UserProfile with a user id")
        keep[ratings.items_of(user)] = False
    if omit is not None:
        keep[omit] = False
    return np.flatnonzero(keep)


def rank_items(catalog: ItemCatalog, profile, exclude_rated: bool = True,
               ratings: RatingStore | None = None) -> np.ndarray:
    """Item ids by descending score; ties go to the smaller id."""
    scores = item_scores(catalog, profile)
    ids = _candidates(catalog, profile, exclude_rated, ratings)
    s = scores[ids]
    return ids[np.lexsort((ids, -s))]


def kth_competitor(scores: np.ndarray, ids: np.ndarray, k: int) -> tuple[float, int]:
    """k-th entry of ``ids`` ordered by (score desc, id asc), in linear time."""
    if ids.size < k:
        raise DataError(f"only {ids.size} competitors for top-{k}")
    s = scores[ids]
    thr = np.partition(s, s.size - k)[s.size - k]
    n_above = int(np.count_nonzero(s > thr))
    tied = np.sort(ids[s == thr])
    return float(thr), int(tied[k - n_above - 1])


def topk_threshold(catalog: ItemCatalog, profile, k: int, omit: int,
                   exclude_rated: bool = True, ratings: RatingStore | None = None) -> tuple[float, int]:
    """Score and id of the k-th best competitor of item ``omit``.

    ``omit`` is in the top-k iff its score beats the threshold, or equals it
    and ``omit`` precedes the threshold item by id (see ``beats``).
    """
    if k < 1:
        raise DataError("k must be positive")
    scores = item_scores(catalog, profile)
    ids = _candidates(catalog, profile, exclude_rated, ratings, omit=omit)
    return kth_competitor(scores, ids, k)


def beats(score, item: int, threshold, threshold_item):
    """Top-k membership test against ``topk_threshold`` output (vectorizes)."""
    return (score > threshold) | ((score == threshold) & (item < threshold_item))


def group_thresholds(catalog: ItemCatalog, ratings: RatingStore, users, profiles: np.ndarray,
                     k: int, omit: int, exclude_rated: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """``topk_threshold`` for many users at once, given their stacked profiles."""
    users = np.asarray(users, dtype=np.int64)
    scores = np.asarray(catalog.features @ profiles.T)
    thr = np.empty(users.size)
    thr_item = np.empty(users.size, dtype=np.int64)
    base = np.ones(catalog.n_items, dtype=bool)
    base[omit] = False
    for j, u in enumerate(users):
        keep = base.copy()
        if exclude_rated:
            keep[ratings.items_of(u)] = False
        thr[j], thr_item[j] = kth_competitor(scores[:, j], np.flatnonzero(keep), k)
    return thr, thr_item
