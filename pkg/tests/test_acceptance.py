"""Acceptance criteria on the fixed-seed synthetic fixture.

Fixture: 200 users, 300 items, 50 features, rating density 0.05, five
activity groups.  Every criterion prints one ``PASS``/``FAIL`` line (also
collected in the pytest terminal summary) and asserts at its stated
tolerance.  Criteria with independent parts report each part separately.
"""

import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from itemrecourse.core import ItemCatalog, RatingStore, beats, build_profile, item_scores, topk_threshold
from itemrecourse.data import group_users, save_dataset
from itemrecourse.harness import ExperimentSpec, _cell_seed, run_experiment
from itemrecourse.metrics import rbo, success_rate
from itemrecourse.recourse import RecourseConfig, RecourseRequest, compute_recourse, loss_and_gradient

from conftest import ACCEPTANCE_LINES


def verdict(cid, ok, detail):
    line = f"criterion {cid:<3} {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def grid(fixture_data, spec):
    """Run the grid, then recompute every cell's recourse to expose v_conv and v_new."""
    cat, ratings, meta = fixture_data
    t0 = time.perf_counter()
    report = run_experiment(cat, ratings, meta, spec)
    elapsed = time.perf_counter() - t0
    groups = dict(enumerate(group_users(ratings, meta, spec.grouping)))
    results = {}
    for c in report.cells:
        assert c.error is None, c.error
        cfg = replace(spec.recourse, k=spec.k, sample_fraction=c.sample_fraction,
                      rng_seed=_cell_seed(spec.rng_seed, c.group, c.target_rank))
        res = compute_recourse(cat, ratings, RecourseRequest(c.item, groups[c.group], cfg))
        assert res.success_rate_full == c.metrics.success_rate
        results[c.key] = res
    return report, results, elapsed


@pytest.fixture(scope="module")
def default_grid(fixture_data):
    return grid(fixture_data, ExperimentSpec())


@pytest.fixture(scope="module")
def full_sampling_grid(fixture_data):
    spec = ExperimentSpec(target_ranks=(11, 21, 51), sample_fractions=(1.0,),
                          recourse=RecourseConfig(lam=0.1, learning_rate=0.01, max_iterations=500))
    return grid(fixture_data, spec)


# -- 1. validity at full sampling -------------------------------------------

def test_1a_optimizer_reaches_every_user(full_sampling_grid):
    report, results, elapsed = full_sampling_grid
    worst = min(c.success_rate_full_converged for c in report.cells)
    iters = max(c.iterations for c in report.cells)
    ok = worst == 1.0 and iters <= 500 and elapsed < 10.0
    verdict("1a", ok, f"success at convergence over the full group: min {worst:.4f} "
                      f"(need 1.0), max iterations {iters} (<= 500), {elapsed:.2f}s (< 10s)")


def test_1b_full_pipeline_without_iht_loss(fixture_data):
    spec = ExperimentSpec(target_ranks=(11, 21, 51), sample_fractions=(1.0,),
                          recourse=RecourseConfig(iht_success_loss=0.0))
    report, _, elapsed = grid(fixture_data, spec)
    worst = min(c.metrics.success_rate for c in report.cells)
    verdict("1b", worst == 1.0 and elapsed < 10.0,
            f"reported success with IHT not allowed to lose success: min {worst:.4f} (need 1.0)")


def test_1c_full_pipeline_default_iht(full_sampling_grid):
    report, _, _ = full_sampling_grid
    worst = min(c.metrics.success_rate for c in report.cells)
    verdict("1c", worst == 1.0,
            f"reported success after IHT at the default 20% allowance: min {worst:.4f} (need 1.0)")


# -- 2. sampling trend ------------------------------------------------------

def test_2_sampling_trend(default_grid):
    report, _, elapsed = default_grid
    drops, low, n_series = [], [], 0
    for g in sorted({c.group for c in report.cells}):
        for r in sorted({c.target_rank for c in report.cells}):
            series = sorted((c for c in report.cells if c.group == g and c.target_rank == r),
                            key=lambda c: c.sample_fraction)
            n_series += 1
            tol = 1.0 / series[0].group_size
            for a, b in zip(series, series[1:]):
                if b.metrics.success_rate < a.metrics.success_rate - tol - 1e-12:
                    drops.append((g, r, b.sample_fraction))
            if series[-1].sample_fraction == 0.20 and series[-1].metrics.success_rate < 0.9:
                low.append((g, r, round(series[-1].metrics.success_rate, 3)))
    by_x = report.aggregates()["by_sample_fraction"]
    means = ", ".join(f"{x}:{v['success_rate']:.3f}" for x, v in by_x.items())
    ok = not drops and not low and elapsed < 60.0
    verdict("2", ok, f"{len(drops)} drops beyond one member, {len(low)}/{n_series} series below 0.9 at 0.20; "
                     f"mean success by fraction {means}; {elapsed:.2f}s")


# -- 3. side effects --------------------------------------------------------

def test_3a_rbo_bounds(default_grid):
    report, _, _ = default_grid
    bad_mean = [c.key for c in report.cells if c.metrics.rbo_mean < 0.98]
    bad_min = [c.key for c in report.cells if c.metrics.rbo_min < 0.95]
    lo_mean = min(c.metrics.rbo_mean for c in report.cells)
    lo_min = min(c.metrics.rbo_min for c in report.cells)
    verdict("3a", not bad_mean and not bad_min,
            f"{len(bad_mean)}/{len(report.cells)} cells with rbo_mean < 0.98 (lowest {lo_mean:.4f}), "
            f"{len(bad_min)} with rbo_min < 0.95 (lowest {lo_min:.4f})")


def test_3b_only_the_item_moves(fixture_data, default_grid):
    cat, ratings, _ = fixture_data
    report, results, _ = default_grid
    checked = violations = 0
    for c in report.cells:
        res = results[c.key]
        after_cat = cat.with_row(c.item, res.v_new)
        for u in np.concatenate([res.group, res.removed_users]):
            p = build_profile(ratings, cat, u)
            s0, s1 = item_scores(cat, p), item_scores(after_cat, p)
            keep = np.ones(cat.n_items, dtype=bool)
            keep[ratings.items_of(u)] = False
            ids = np.flatnonzero(keep)
            before = ids[np.lexsort((ids, -s0[ids]))]
            after = ids[np.lexsort((ids, -s1[ids]))]
            checked += 1
            if not np.array_equal(before[before != c.item], after[after != c.item]):
                violations += 1
    verdict("3b", violations == 0,
            f"{violations} of {checked} user rankings changed anywhere except the item's position")


# -- 4. sparsity ------------------------------------------------------------

def test_4a_sparsity_trend(default_grid):
    report, _, _ = default_grid
    by_x = report.aggregates()["by_sample_fraction"]
    xs = sorted(by_x, key=float)
    l0 = [by_x[x]["l0_fraction"] for x in xs]
    rises = [(xs[i], xs[i + 1]) for i in range(len(xs) - 1) if l0[i + 1] > l0[i] + 1e-12]
    ok = not rises and l0[-1] < l0[0]
    verdict("4a", ok, "mean l0_fraction by fraction " + ", ".join(f"{x}:{v:.3f}" for x, v in zip(xs, l0))
            + f"; {len(rises)} increases")


def test_4b_iht_never_adds_changes(default_grid):
    report, _, _ = default_grid
    bad = [c.key for c in report.cells if c.metrics.l0_changes > c.l0_converged]
    verdict("4b", not bad, f"{len(bad)} of {len(report.cells)} cells with post-IHT l0 > pre-IHT l0")


# -- 5. IHT contract --------------------------------------------------------

def test_5_iht_contract(fixture_data, default_grid):
    cat, ratings, _ = fixture_data
    report, results, _ = default_grid
    bad, worst = [], np.inf
    for c in report.cells:
        res = results[c.key]
        s_conv = success_rate(cat.with_row(c.item, res.v_converged), ratings, c.item, res.sample, 10)
        s_new = success_rate(cat.with_row(c.item, res.v_new), ratings, c.item, res.sample, 10)
        assert s_conv == c.success_rate_sample_converged and s_new == c.success_rate_sample
        if s_conv > 0:
            worst = min(worst, s_new / s_conv)
        if s_new < 0.8 * s_conv - 1e-12:
            bad.append(c.key)
    verdict("5", not bad, f"{len(bad)} of {len(report.cells)} cells violate sample success >= 0.8 x "
                          f"converged (recomputed by full re-ranking); lowest ratio {worst:.3f}")


# -- 6. gradient oracle -----------------------------------------------------

def test_6_gradient_oracle():
    rng = np.random.default_rng(2024)
    h, worst = 1e-6, 0.0
    for _ in range(100):
        f = int(rng.integers(1, 30))
        v_orig = rng.normal(size=f)
        v = v_orig + rng.choice([-1.0, 1.0], f) * rng.uniform(1e-3, 2.0, f)
        W = rng.normal(size=(int(rng.integers(0, 10)), f)) * rng.uniform(0.1, 10)
        lam = float(rng.uniform(0.0, 3.0))
        _, grad = loss_and_gradient(v, v_orig, W, lam)
        fd = np.empty(f)
        for i in range(f):
            e = np.zeros(f)
            e[i] = h
            fd[i] = (loss_and_gradient(v + e, v_orig, W, lam)[0]
                     - loss_and_gradient(v - e, v_orig, W, lam)[0]) / (2 * h)
        rel = np.linalg.norm(fd - grad) / max(np.linalg.norm(grad), 1e-300)
        worst = max(worst, rel)
    verdict("6", worst <= 1e-6, f"max relative error {worst:.2e} over 100 instances (<= 1e-6)")


# -- 7. ranking oracle ------------------------------------------------------

def test_7_ranking_oracle():
    rng = np.random.default_rng(77)
    checks = mismatches = 0
    for _ in range(200):
        n_items, f, n_users = int(rng.integers(6, 21)), int(rng.integers(1, 9)), int(rng.integers(1, 11))
        X = rng.random((n_items, f)) * (rng.random((n_items, f)) < 0.6)
        if rng.random() < 0.3:
            X[1] = X[0]
        cat = ItemCatalog(X)
        u, i = np.nonzero(rng.random((n_users, n_items)) < 0.2)
        ratings = RatingStore.from_triples(u, i, rng.integers(1, 6, u.size), n_users=n_users, n_items=n_items)
        for user in range(n_users):
            p = build_profile(ratings, cat, user)
            s = item_scores(cat, p)
            rated = set(ratings.items_of(user).tolist())
            full = [i for _, i in sorted((-float(s[i]), i) for i in range(n_items) if i not in rated)]
            for a in full:
                for k in (1, 3, 5):
                    if len(full) - 1 < k:
                        continue
                    thr, ti = topk_threshold(cat, p, k, a, True, ratings)
                    checks += 1
                    mismatches += bool(beats(s[a], a, thr, ti)) != (a in full[:k])
    verdict("7", mismatches == 0 and checks > 0,
            f"{mismatches} mismatches in {checks} threshold vs full-sort membership checks")


# -- 8. RBO -----------------------------------------------------------------

def test_8_rbo_suite():
    errs = []
    for p in (0.1, 0.5, 0.9):
        for d in (1, 2, 5, 30):
            errs.append(abs(rbo(list(range(d)), list(range(d)), p) - (1 - p ** d)))
            errs.append(abs(rbo(list(range(d)), list(range(d, 2 * d)), p)))
    errs.append(abs(rbo(["x", "y"], ["y", "x"], 0.5) - 0.25))
    rng = np.random.default_rng(8)
    for _ in range(100):
        a = rng.permutation(40)[:int(rng.integers(1, 40))].tolist()
        b = rng.permutation(40)[:int(rng.integers(1, 40))].tolist()
        errs.append(abs(rbo(a, b, 0.5) - rbo(b, a, 0.5)))
    worst = max(errs)
    verdict("8", worst <= 1e-12, f"max deviation {worst:.1e} over {len(errs)} checks (<= 1e-12)")


# -- 9. determinism ---------------------------------------------------------

def test_9_cli_determinism(fixture_data, tmp_path):
    cat, ratings, meta = fixture_data
    data = tmp_path / "data"
    save_dataset(data, cat, ratings, meta)
    spec = tmp_path / "spec.json"
    spec.write_text("{}")
    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        proc = subprocess.run([sys.executable, "-m", "itemrecourse.cli", "experiment", "--data", str(data),
                               "--spec", str(spec), "--out", str(out)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        outs.append((out / "report.csv").read_bytes())
    verdict("9", outs[0] == outs[1] and len(outs[0]) > 0,
            f"two experiment runs produced {'identical' if outs[0] == outs[1] else 'different'} "
            f"CSV reports ({len(outs[0])} bytes)")
