"""
Scoring and ranking with a content-based recommender
====================================================

A user's profile is the rating-weighted sum of the feature vectors of the
items they rated; every item is scored by its dot product with that profile.
"""

import numpy as np

from itemrecourse import ItemCatalog, RatingStore, build_profile, rank_items, topk_threshold

# three items described by two features ("action", "romance")
catalog = ItemCatalog(np.array([[1.0, 0.0],
                                [0.0, 1.0],
                                [1.0, 1.0]]),
                      item_ids=["heist", "letters", "spy-love"],
                      feature_names=["action", "romance"])

# one user who rated the heist movie with 2 stars
ratings = RatingStore.from_triples([0], [0], [2.0], n_items=3)
profile = build_profile(ratings, catalog, 0)
print("profile w =", profile.w)

# scores (2, 0, 2): the tie between items 0 and 2 goes to the smaller id
print("ranking, rated items kept:", rank_items(catalog, profile, exclude_rated=False))

# by default, items the user already rated are dropped from the list
print("ranking, rated items removed:", rank_items(catalog, profile, exclude_rated=True, ratings=ratings))

# membership in the top-k is a single comparison: the k-th best *competitor*
# of an item is all we need, because only that item's features will change
thr, thr_item = topk_threshold(catalog, profile, k=1, omit=1, exclude_rated=False)
print(f"'letters' must beat score {thr} held by item {thr_item} to reach the top 1")
