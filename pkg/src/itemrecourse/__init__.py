"""Sparse feature recourse for content-filtering recommenders.

Given an item, a target user group and a rank bound k, find a sparse change
to the item's features that puts it in the top-k recommendations of the
group, and measure validity, sparsity and side-effects of that change.
"""

from .core import (
    ItemCatalog,
    RatingStore,
    UserProfile,
    build_profile,
    build_profiles,
    rank_items,
    score_item,
    topk_threshold,
)
from .data import (
    FeaturizerSpec,
    GroupingSpec,
    RawItemRecord,
    featurize,
    generate_synthetic,
    group_users,
    load_catalog,
    load_dataset,
    load_ratings,
    save_catalog,
    save_dataset,
)
from .errors import ConfigError, DataError, NumericalError, RecourseError
from .harness import (
    ExperimentReport,
    ExperimentSpec,
    render_charts,
    run_experiment,
    select_item_at_rank,
    write_report,
)
from .metrics import MetricsReport, feature_delta, rbo, side_effect_report, success_rate
from .recourse import (
    RecourseConfig,
    RecourseRequest,
    RecourseResult,
    compute_recourse,
    hard_threshold,
    loss_and_gradient,
)

__version__ = "0.1.0"
