"""Recourse generation: move one item into the top-k of a target user group.

The optimizer minimizes

    loss(v') = -sum_{u in active} v' . w_u + lam * ||v' - v||_1

by projected subgradient descent, where ``active`` is the set of sampled
target users whose top-k does not yet contain the item.  The active set is
rebuilt after every step.  A hard-thresholding pass then reverts the
smallest feature changes while the sample success rate stays within the
allowed loss.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import ItemCatalog, RatingStore, UserProfile, beats, build_profiles, group_thresholds
from .errors import ConfigError, DataError, NumericalError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RecourseConfig:
    k: int = 10
    lam: float = 0.1
    learning_rate: float = 0.01
    max_iterations: int = 500
    iht_success_loss: float = 0.20
    iht_chunk: int = 1
    sample_fraction: float = 1.0
    rng_seed: int = 0
    max_changes: Optional[int] = None
    # divide each step by ||sum of active profiles||_inf
    normalize_step: bool = True
    exclude_rated: bool = True
    # stop when the loss moves less than this (relative) over plateau_window steps
    plateau_tol: float = 1e-9
    plateau_window: int = 10
    # reject requests where more of the group already rated the item
    max_rated_fraction: float = 1.0

    def __post_init__(self):
        if not (isinstance(self.k, (int, np.integer)) and self.k >= 1):
            raise ConfigError(f"k must be a positive integer, got {self.k!r}")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ConfigError(f"lam must be non-negative, got {self.lam!r}")
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate!r}")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be positive")
        if not 0.0 <= self.iht_success_loss <= 1.0:
            raise ConfigError("iht_success_loss must lie in [0, 1]")
        if self.iht_chunk < 1:
            raise ConfigError("iht_chunk must be positive")
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ConfigError("sample_fraction must lie in (0, 1]")
        if self.max_changes is not None and self.max_changes < 1:
            raise ConfigError("max_changes must be positive when set")
        if self.plateau_window < 1 or self.plateau_tol < 0:
            raise ConfigError("invalid plateau settings")
        if not 0.0 <= self.max_rated_fraction <= 1.0:
            raise ConfigError("max_rated_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class RecourseRequest:
    item: int
    target_group: tuple
    config: RecourseConfig = field(default_factory=RecourseConfig)

    def __post_init__(self):
        object.__setattr__(self, "target_group", tuple(int(u) for u in self.target_group))
        if not self.target_group:
            raise ConfigError("target group is empty")


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    loss: float
    active_set_size: int
    satisfied_count: int


@dataclass
class RecourseResult:
    item: int
    v_orig: np.ndarray
    v_converged: np.ndarray
    v_new: np.ndarray
    success_rate_full: float
    success_rate_full_converged: float
    success_rate_sample: float
    success_rate_sample_converged: float
    success_rate_full_before: float
    changed_indices: np.ndarray
    group: np.ndarray
    sample: np.ndarray
    removed_users: np.ndarray
    n_empty_profiles: int
    iterations: int
    converged: bool
    max_changes_forced: bool
    trace: list = field(default_factory=list)

    @property
    def l0_converged(self) -> int:
        return int(np.count_nonzero(self.v_converged != self.v_orig))

    def changes(self) -> list[tuple[int, float, float]]:
        """(feature index, old value, new value) for every changed feature."""
        return [(int(i), float(self.v_orig[i]), float(self.v_new[i])) for i in self.changed_indices]


def _aggregate(active_profiles) -> np.ndarray:
    if isinstance(active_profiles, np.ndarray):
        return active_profiles.sum(axis=0) if active_profiles.ndim == 2 else active_profiles
    rows = [p.w if isinstance(p, UserProfile) else np.asarray(p, dtype=np.float64) for p in active_profiles]
    return np.sum(rows, axis=0) if rows else None


def _loss_grad(v, v_orig, agg, lam, mutable_mask):
    diff = v - v_orig
    loss = -float(v @ agg) + lam * float(np.abs(diff).sum())
    grad = -agg + lam * np.sign(diff)
    if mutable_mask is not None:
        grad = np.where(mutable_mask, grad, 0.0)
    return loss, grad


def loss_and_gradient(v, v_orig, active_profiles, lam: float,
                      mutable_mask=None) -> tuple[float, np.ndarray]:
    """Penalized loss over the active users and its subgradient (sign(0) = 0).

    ``active_profiles`` is a sequence of ``UserProfile`` / vectors, or a 2-d
    array with one profile per row.  Gradient entries at immutable features
    are zeroed.
    """
    v = np.asarray(v, dtype=np.float64)
    v_orig = np.asarray(v_orig, dtype=np.float64)
    if v.shape != v_orig.shape:
        raise DataError(f"dimension mismatch: {v.shape} vs {v_orig.shape}")
    agg = _aggregate(active_profiles)
    if agg is None:
        agg = np.zeros_like(v)
    if agg.shape != v.shape:
        raise DataError(f"dimension mismatch: profiles {agg.shape} vs item {v.shape}")
    if mutable_mask is not None and np.shape(mutable_mask) != v.shape:
        raise DataError("mutable_mask length mismatch")
    return _loss_grad(v, v_orig, agg, lam, mutable_mask)


def _hard_threshold(v_conv, v_orig, evaluate_success, config) -> tuple[np.ndarray, bool]:
    v = np.array(v_conv, dtype=np.float64)
    v_orig = np.asarray(v_orig, dtype=np.float64)
    delta = np.abs(v - v_orig)
    changed = np.flatnonzero(delta > 0)
    if changed.size == 0:
        return v, False
    order = changed[np.lexsort((changed, delta[changed]))]
    floor = (1.0 - config.iht_success_loss) * evaluate_success(v)

    pos = 0
    while pos < order.size:
        chunk = order[pos:pos + config.iht_chunk]
        trial = v.copy()
        trial[chunk] = v_orig[chunk]
        if evaluate_success(trial) < floor - 1e-12:
            break
        v = trial
        pos += chunk.size

    forced = False
    if config.max_changes is not None:
        while pos < order.size and np.count_nonzero(v != v_orig) > config.max_changes:
            v[order[pos]] = v_orig[order[pos]]
            pos += 1
            forced = True
    return v, forced


def hard_threshold(v_conv, v_orig, evaluate_success: Callable[[np.ndarray], float],
                   config: RecourseConfig) -> np.ndarray:
    """Revert the smallest changes first, stopping before success drops too far.

    A chunk of ``config.iht_chunk`` features is reverted at a time; the first
    chunk that pushes ``evaluate_success`` below ``(1 - iht_success_loss)``
    times its starting value is undone and the pass ends.  If
    ``config.max_changes`` is set, reverting then continues regardless of
    success until at most that many features differ.
    """
    return _hard_threshold(v_conv, v_orig, evaluate_success, config)[0]


class _GroupOracle:
    """Top-k membership of item ``a`` for a fixed set of users as its features vary."""

    def __init__(self, catalog, ratings, users, item, k, exclude_rated):
        self.users = np.asarray(users, dtype=np.int64)
        self.item = item
        self.profiles = build_profiles(ratings, catalog, self.users)
        self.thr, self.thr_item = group_thresholds(
            catalog, ratings, self.users, self.profiles, k, item, exclude_rated)

    def satisfied(self, v, rows=slice(None)) -> np.ndarray:
        s = self.profiles[rows] @ v
        return beats(s, self.item, self.thr[rows], self.thr_item[rows])


def compute_recourse(catalog: ItemCatalog, ratings: RatingStore, request: RecourseRequest) -> RecourseResult:
    cfg = request.config
    a = catalog.resolve_item(request.item)
    if ratings.n_items != catalog.n_items:
        raise DataError("ratings and catalog disagree on the number of items")
    if catalog.n_items < cfg.k + 1:
        raise DataError(f"need at least {cfg.k + 1} items for top-{cfg.k} recourse")
    group = np.unique(np.asarray(request.target_group, dtype=np.int64))
    if group.min() < 0 or group.max() >= ratings.n_users:
        raise DataError("target group references unknown users")

    removed = np.empty(0, dtype=np.int64)
    if cfg.exclude_rated:
        rated = np.array([ratings.has_rated(u, a) for u in group], dtype=bool)
        if rated.mean() > cfg.max_rated_fraction:
            raise ConfigError(
                f"item {a} is already rated by {rated.mean():.1%} of the target group")
        removed = group[rated]
        group = group[~rated]
    if group.size == 0:
        raise ConfigError("target group is empty after removing users who rated the item")

    rng = np.random.default_rng(cfg.rng_seed)
    n_sample = math.ceil(cfg.sample_fraction * group.size)
    # prefix of one permutation: samples for growing fractions are nested
    sample = np.sort(rng.permutation(group)[:n_sample])

    oracle = _GroupOracle(catalog, ratings, group, a, cfg.k, cfg.exclude_rated)
    in_sample = np.isin(group, sample)
    W = oracle.profiles[in_sample]
    n_empty = int(np.count_nonzero(~oracle.profiles.any(axis=1)))

    def sample_success(v):
        return float(oracle.satisfied(v, in_sample).mean())

    v_orig = catalog.row(a)
    mask = catalog.mutable_mask
    v = v_orig.copy()
    success_before = float(oracle.satisfied(v_orig).mean())

    active = ~oracle.satisfied(v, in_sample)
    trace: list[TraceEntry] = []
    agg = scale = None
    last_active = None
    it = 0
    while it < cfg.max_iterations and active.any():
        if last_active is None or not np.array_equal(active, last_active):
            agg = W[active].sum(axis=0)
            norm = float(np.abs(np.where(mask, agg, 0.0)).max())
            scale = (norm + 1e-12) if (cfg.normalize_step and norm > 0) else 1.0
            last_active = active
        loss, grad = _loss_grad(v, v_orig, agg, cfg.lam, mask)
        if not math.isfinite(loss):
            raise NumericalError(f"non-finite loss at iteration {it}")
        with np.errstate(over="ignore", invalid="ignore"):
            v = catalog.clamp(v - (cfg.learning_rate / scale) * grad)
        if not np.all(np.isfinite(v)):
            raise NumericalError(f"non-finite feature values at iteration {it + 1}")
        it += 1
        sat = oracle.satisfied(v, in_sample)
        active = ~sat
        trace.append(TraceEntry(it, loss, int(active.sum()), int(sat.sum())))
        w = cfg.plateau_window
        if len(trace) > w:
            ref = trace[-1 - w].loss
            if abs(loss - ref) <= cfg.plateau_tol * max(abs(ref), 1e-12):
                log.debug("loss plateau at iteration %d", it)
                break

    v_conv = v
    success_conv = sample_success(v_conv)
    v_new, forced = _hard_threshold(v_conv, v_orig, sample_success, cfg)
    if catalog.bounds is not None:
        v_new = catalog.clamp(v_new)

    return RecourseResult(
        item=a,
        v_orig=v_orig,
        v_converged=v_conv,
        v_new=v_new,
        success_rate_full=float(oracle.satisfied(v_new).mean()),
        success_rate_full_converged=float(oracle.satisfied(v_conv).mean()),
        success_rate_sample=sample_success(v_new),
        success_rate_sample_converged=success_conv,
        success_rate_full_before=success_before,
        changed_indices=np.flatnonzero(v_new != v_orig),
        group=group,
        sample=sample,
        removed_users=removed,
        n_empty_profiles=n_empty,
        iterations=it,
        converged=not bool(active.any()),
        max_changes_forced=forced,
        trace=trace,
    )
