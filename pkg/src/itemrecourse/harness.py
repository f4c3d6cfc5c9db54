"""Experiment grid: groups x original ranks x sampling fractions.

For every cell an item whose mean rank over the group is close to the
target rank is chosen, a recourse is computed on a sample of the group, and
success, sparsity and side-effect are evaluated over the whole group.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .core import ItemCatalog, RatingStore, build_profiles
from .data import GroupingSpec, group_users
from .errors import ConfigError, DataError, RecourseError
from .metrics import MetricsReport, feature_delta, side_effect_report
from .recourse import RecourseConfig, RecourseRequest, compute_recourse

log = logging.getLogger(__name__)

CSV_COLUMNS = ["group", "target_rank", "sample_fraction", "item", "success_rate", "l0",
               "l0_fraction", "l1", "rbo_mean", "rbo_min", "iterations", "wall_ms"]


@dataclass(frozen=True)
class ExperimentSpec:
    target_ranks: tuple = (11, 21, 51, 101)
    sample_fractions: tuple = (0.005, 0.01, 0.02, 0.05, 0.10, 0.20)
    k: int = 10
    pre_exposure_cap: float = 0.01
    grouping: GroupingSpec = GroupingSpec()
    recourse: RecourseConfig = RecourseConfig()
    rng_seed: int = 0
    rbo_p: float = 0.5
    rbo_depth: int | None = None
    # wall clock is off by default so reports stay byte-reproducible
    record_timing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "target_ranks", tuple(int(r) for r in self.target_ranks))
        object.__setattr__(self, "sample_fractions", tuple(float(x) for x in self.sample_fractions))
        if any(r <= self.k for r in self.target_ranks):
            raise ConfigError(f"target ranks must exceed k={self.k}")
        if any(not 0.0 < x <= 1.0 for x in self.sample_fractions):
            raise ConfigError("sample fractions must lie in (0, 1]")
        if not 0.0 <= self.pre_exposure_cap <= 1.0:
            raise ConfigError("pre_exposure_cap must lie in [0, 1]")
        if not 0.0 < self.rbo_p < 1.0:
            raise ConfigError("rbo_p must lie in (0, 1)")

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentSpec":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment spec keys: {sorted(unknown)}")
        try:
            if "grouping" in d:
                d["grouping"] = GroupingSpec(**d["grouping"])
            if "recourse" in d:
                d["recourse"] = RecourseConfig(**d["recourse"])
            return cls(**d)
        except TypeError as e:
            raise ConfigError(f"bad experiment spec: {e}") from None

    @classmethod
    def from_json(cls, path) -> "ExperimentSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["target_ranks"] = list(self.target_ranks)
        d["sample_fractions"] = list(self.sample_fractions)
        return d


@dataclass
class ExperimentCell:
    group: int
    target_rank: int
    sample_fraction: float
    item: int | None = None
    item_id: str | None = None
    mean_rank: float | None = None
    metrics: MetricsReport | None = None
    success_rate_full_converged: float | None = None
    success_rate_sample: float | None = None
    success_rate_sample_converged: float | None = None
    success_rate_before: float | None = None
    l0_converged: int | None = None
    iterations: int | None = None
    converged: bool | None = None
    group_size: int | None = None
    sample_size: int | None = None
    n_removed: int | None = None
    n_empty_profiles: int | None = None
    wall_ms: float | None = None
    error: str | None = None

    @property
    def key(self):
        return (self.group, self.target_rank, self.sample_fraction)

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentCell":
        d = dict(d)
        if d.get("metrics") is not None:
            d["metrics"] = MetricsReport(**d["metrics"])
        return cls(**d)

    def csv_row(self) -> list:
        def fmt(x):
            return "" if x is None else repr(x) if isinstance(x, float) else str(x)
        m = self.metrics
        return [fmt(v) for v in (
            self.group, self.target_rank, self.sample_fraction, self.item,
            m and m.success_rate, m and m.l0_changes, m and m.l0_fraction, m and m.l1_change,
            m and m.rbo_mean, m and m.rbo_min, self.iterations, self.wall_ms)]


@dataclass
class ExperimentReport:
    cells: list = field(default_factory=list)

    def ok_cells(self) -> list:
        return [c for c in self.cells if c.error is None]

    def aggregates(self) -> dict:
        ok = self.ok_cells()
        out = {"n_cells": len(self.cells), "n_failed": len(self.cells) - len(ok)}
        if not ok:
            return out
        for name in ("success_rate", "l0_fraction", "rbo_mean", "rbo_min"):
            out[f"mean_{name}"] = float(np.mean([getattr(c.metrics, name) for c in ok]))
        by_fraction = {}
        for x in sorted({c.sample_fraction for c in ok}):
            sel = [c for c in ok if c.sample_fraction == x]
            by_fraction[repr(x)] = {
                "success_rate": float(np.mean([c.metrics.success_rate for c in sel])),
                "l0_fraction": float(np.mean([c.metrics.l0_fraction for c in sel])),
                "rbo_mean": float(np.mean([c.metrics.rbo_mean for c in sel])),
            }
        out["by_sample_fraction"] = by_fraction
        return out

    def to_dict(self) -> dict:
        return {"cells": [c.to_dict() for c in self.cells], "aggregates": self.aggregates()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentReport":
        return cls([ExperimentCell.from_dict(c) for c in d.get("cells", [])])


# ---------------------------------------------------------------------------


def _rank_positions(scores: np.ndarray, excluded: np.ndarray) -> np.ndarray:
    """1-based rank of every item for one user; 0 where excluded."""
    ids = np.arange(scores.size)
    keep = ~excluded
    order = ids[keep][np.lexsort((ids[keep], -scores[keep]))]
    pos = np.zeros(scores.size, dtype=np.int64)
    pos[order] = np.arange(1, order.size + 1)
    return pos


class _GroupView:
    """Profiles, scores and rankings of one user group, before any recourse."""

    def __init__(self, catalog: ItemCatalog, ratings: RatingStore, users, exclude_rated: bool):
        self.users = np.asarray(users, dtype=np.int64)
        self.profiles = build_profiles(ratings, catalog, self.users)
        self.scores = np.asarray(catalog.features @ self.profiles.T)  # items x users
        n_items = catalog.n_items
        self.excluded = np.zeros((self.users.size, n_items), dtype=bool)
        if exclude_rated:
            for j, u in enumerate(self.users):
                self.excluded[j, ratings.items_of(u)] = True
        self.positions = np.stack([
            _rank_positions(self.scores[:, j], self.excluded[j]) for j in range(self.users.size)
        ]) if self.users.size else np.zeros((0, n_items), dtype=np.int64)

    def ranking(self, j: int, scores: np.ndarray | None = None) -> np.ndarray:
        s = self.scores[:, j] if scores is None else scores
        ids = np.flatnonzero(~self.excluded[j])
        return ids[np.lexsort((ids, -s[ids]))]

    def rankings_after(self, item: int, v_new: np.ndarray) -> list[np.ndarray]:
        new_scores = self.profiles @ v_new
        out = []
        for j in range(self.users.size):
            s = self.scores[:, j].copy()
            s[item] = new_scores[j]
            out.append(self.ranking(j, s))
        return out


def item_mean_ranks(positions: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean 1-based rank of each item over the users that can see it, and top-k counts."""
    seen = positions > 0
    counts = seen.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(counts > 0, positions.sum(axis=0) / np.maximum(counts, 1), np.nan)
    in_topk = (seen & (positions <= k)).sum(axis=0)
    return mean, in_topk


def _select_from_positions(positions, target_rank, k, cap) -> tuple[int, float]:
    n_users = positions.shape[0]
    mean, in_topk = item_mean_ranks(positions, k)
    eligible = ~np.isnan(mean) & (in_topk <= cap * n_users)
    ids = np.flatnonzero(eligible)
    if ids.size == 0:
        raise DataError(f"no eligible item for target rank {target_rank}")
    dist = np.abs(mean[ids] - target_rank)
    best = ids[np.lexsort((ids, dist))[0]]
    return int(best), float(mean[best])


def select_item_at_rank(catalog: ItemCatalog, ratings: RatingStore, group, target_rank: int,
                        k: int = 10, cap: float = 0.01, exclude_rated: bool = True) -> int:
    """Item whose mean rank over ``group`` is closest to ``target_rank``.

    Items already in the top-k of more than ``cap * |group|`` users are
    skipped.  Ties go to the smaller item id.
    """
    group = np.asarray(list(group), dtype=np.int64)
    if group.size == 0:
        raise DataError("empty group")
    view = _GroupView(catalog, ratings, group, exclude_rated)
    return _select_from_positions(view.positions, target_rank, k, cap)[0]


def _cell_seed(seed: int, g: int, rank: int) -> int:
    # shared across fractions so that larger samples contain smaller ones
    return int(np.random.SeedSequence([seed, g, rank]).generate_state(1)[0])


def _run_cell(catalog, ratings, view, cell: ExperimentCell, spec: ExperimentSpec, seed: int):
    start = time.perf_counter()
    cfg = replace(spec.recourse, k=spec.k, sample_fraction=cell.sample_fraction, rng_seed=seed)
    result = compute_recourse(catalog, ratings, RecourseRequest(cell.item, tuple(view.users), cfg))
    l0, l1 = feature_delta(result.v_new, result.v_orig)
    before = [view.ranking(j) for j in range(view.users.size)]
    after = view.rankings_after(cell.item, result.v_new)
    rbo_mean, rbo_min = side_effect_report(before, after, spec.rbo_p, spec.rbo_depth)
    cell.metrics = MetricsReport(
        success_rate=result.success_rate_full,
        l0_changes=l0,
        l0_fraction=l0 / catalog.n_features,
        l1_change=l1,
        rbo_mean=rbo_mean,
        rbo_min=rbo_min,
    )
    cell.success_rate_full_converged = result.success_rate_full_converged
    cell.success_rate_sample = result.success_rate_sample
    cell.success_rate_sample_converged = result.success_rate_sample_converged
    cell.success_rate_before = result.success_rate_full_before
    cell.l0_converged = result.l0_converged
    cell.iterations = result.iterations
    cell.converged = result.converged
    cell.group_size = int(result.group.size)
    cell.sample_size = int(result.sample.size)
    cell.n_removed = int(result.removed_users.size)
    cell.n_empty_profiles = result.n_empty_profiles
    if spec.record_timing:
        cell.wall_ms = round((time.perf_counter() - start) * 1000.0, 3)
    return cell


def run_experiment(catalog: ItemCatalog, ratings: RatingStore, metadata: Mapping | None,
                   spec: ExperimentSpec, jobs: int = 1) -> ExperimentReport:
    """Run every (group, target rank, sample fraction) cell of the grid.

    Cells are independent: each has its own derived seed, and a failing cell
    is recorded with its error while the rest still run.
    """
    if jobs < 1:
        raise ConfigError("jobs must be positive")
    if not spec.sample_fractions or not spec.target_ranks:
        return ExperimentReport([])
    groups = group_users(ratings, metadata, spec.grouping)
    exclude = spec.recourse.exclude_rated

    tasks = []
    cells = []
    for g, users in enumerate(groups):
        view = _GroupView(catalog, ratings, users, exclude)
        for rank in spec.target_ranks:
            try:
                item, mean_rank = _select_from_positions(view.positions, rank, spec.k, spec.pre_exposure_cap)
                sel_error = None
            except RecourseError as e:
                item = mean_rank = None
                sel_error = f"{type(e).__name__}: {e}"
            for x in spec.sample_fractions:
                cell = ExperimentCell(g, rank, x, item=item, mean_rank=mean_rank, error=sel_error)
                if item is not None and catalog.item_ids is not None:
                    cell.item_id = catalog.item_ids[item]
                cells.append(cell)
                if sel_error is None:
                    tasks.append((view, cell, _cell_seed(spec.rng_seed, g, rank)))

    def work(task):
        view, cell, seed = task
        try:
            return _run_cell(catalog, ratings, view, cell, spec, seed)
        except RecourseError as e:
            log.warning("cell %s failed: %s", cell.key, e)
            cell.error = f"{type(e).__name__}: {e}"
            return cell

    if jobs == 1:
        for t in tasks:
            work(t)
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(work, tasks))
    cells.sort(key=lambda c: c.key)
    return ExperimentReport(cells)


# ---------------------------------------------------------------------------
# output


def report_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for c in report.cells:
        w.writerow(c.csv_row())
    return buf.getvalue()


def report_json(report: ExperimentReport) -> str:
    return json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n"


def write_report(report: ExperimentReport, format: str, path) -> Path:
    if format == "csv":
        text = report_csv(report)
    elif format == "json":
        text = report_json(report)
    else:
        raise ConfigError(f"unknown report format {format!r}")
    path = Path(path)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot write report to {path}: {e}") from None
    return path


def read_report(path) -> ExperimentReport:
    with open(path, encoding="utf-8") as fh:
        return ExperimentReport.from_dict(json.load(fh))


def _series(cells, y):
    """Per group: (fractions, mean of y over target ranks at each fraction)."""
    acc = {}
    for c in cells:
        acc.setdefault(c.group, {}).setdefault(c.sample_fraction, []).append(y(c))
    return {g: (sorted(d), [float(np.mean(d[x])) for x in sorted(d)]) for g, d in acc.items()}


def _figure(series, title, ylabel, ylim):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for g, (xs, ys) in sorted(series.items()):
        ax.plot(xs, ys, marker="o", label=f"group {g}")
    ax.set_xscale("log")
    ax.set_xlabel("sample fraction")
    ax.set_ylabel(ylabel)
    ax.set_ylim(*ylim)
    ax.set_yticks(np.linspace(ylim[0], ylim[1], 6))
    ax.grid(True, alpha=0.4)
    ax.set_title(title)
    if series:
        ax.legend(fontsize="small")
    fig.tight_layout()
    return fig


def render_charts(report: ExperimentReport, directory) -> list[Path]:
    """One SVG of success rate per target rank, plus one of L0 fraction."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create chart directory {directory}: {e}") from None
    ok = report.ok_cells()
    paths = []
    with matplotlib.rc_context({"svg.hashsalt": "itemrecourse", "svg.fonttype": "path"}):
        for rank in sorted({c.target_rank for c in ok}):
            cells = [c for c in ok if c.target_rank == rank]
            fig = _figure(_series(cells, lambda c: c.metrics.success_rate),
                          f"original rank {rank}", "success rate", (0.0, 1.0))
            p = directory / f"success_rank_{rank}.svg"
            fig.savefig(p, format="svg", metadata={"Date": None})
            plt.close(fig)
            paths.append(p)
        l0 = _series(ok, lambda c: c.metrics.l0_fraction)
        top = max([max(ys) for _, ys in l0.values()] + [0.0])
        fig = _figure(l0, "features changed", "L0 fraction", (0.0, max(top * 1.1, 1e-3)))
        p = directory / "l0_fraction.svg"
        fig.savefig(p, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(p)
    return paths
