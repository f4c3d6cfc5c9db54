import numpy as np
import pytest

from itemrecourse.core import ItemCatalog, RatingStore
from itemrecourse.data import GroupingSpec, generate_synthetic, group_users

# the acceptance fixture: 200 users, 300 items, 50 features, 5% rating density
FIXTURE = dict(n_users=200, n_items=300, f=50, density=0.05, rating_range=(1, 5), rng_seed=0)


@pytest.fixture(scope="session")
def fixture_data():
    return generate_synthetic(**FIXTURE)


@pytest.fixture(scope="session")
def fixture_groups(fixture_data):
    _, ratings, meta = fixture_data
    return group_users(ratings, meta, GroupingSpec("activity", None, 5))


@pytest.fixture
def tiny():
    """Three items in two dimensions and two users."""
    catalog = ItemCatalog(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))
    ratings = RatingStore.from_triples([0, 1], [0, 1], [2.0, 1.0], n_users=2, n_items=3)
    return catalog, ratings


def random_instance(rng, n_items=None, f=None, n_users=None, density=0.4):
    """Small random catalog/ratings pair used by the oracle tests."""
    n_items = n_items or int(rng.integers(4, 21))
    f = f or int(rng.integers(1, 9))
    n_users = n_users or int(rng.integers(1, 11))
    X = rng.random((n_items, f)) * (rng.random((n_items, f)) < 0.6)
    # occasional duplicated rows exercise the tie-break
    if n_items > 3 and rng.random() < 0.3:
        X[1] = X[0]
    rated = rng.random((n_users, n_items)) < density
    u, i = np.nonzero(rated)
    r = rng.integers(1, 6, size=u.size).astype(float)
    return ItemCatalog(X), RatingStore.from_triples(u, i, r, n_users=n_users, n_items=n_items)


# lines recorded by test_acceptance, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
