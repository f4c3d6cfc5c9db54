"""Dataset ingestion, featurization, user grouping and synthetic fixtures.

On-disk layout of a dataset directory::

    catalog.csv    f=<int> header, then item_index,feature_index,value triples
    catalog.json   item ids, feature names/sources, mutability mask, bounds
    ratings.csv    user_id,item_id,rating
    users.json     ordered user ids and optional per-user metadata
"""

from __future__ import annotations

import csv
import json
import math
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .core import ItemCatalog, RatingStore
from .errors import ConfigError, DataError

RATINGS_HEADER = ["user_id", "item_id", "rating"]
TRIPLES_HEADER = ["item_index", "feature_index", "value"]
TEXT_MODES = ("binary", "tf", "tfidf")

_PUNCT = str.maketrans("", "", string.punctuation)


# ---------------------------------------------------------------------------
# ratings


def load_ratings(path, item_index: Mapping[str, int] | None = None,
                 user_index: Mapping[str, int] | None = None) -> RatingStore:
    """Read a ``user_id,item_id,rating`` CSV.

    Ids not found in ``item_index``/``user_index`` are an error when the
    mapping is given; otherwise ids are numbered in order of first appearance.
    """
    path = Path(path)
    users_map = dict(user_index) if user_index is not None else {}
    items_map = dict(item_index) if item_index is not None else {}
    us, its, rs = [], [], []
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is not None and [h.strip() for h in header] != RATINGS_HEADER:
            raise DataError(f"{path}:1: expected header {','.join(RATINGS_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            uid, iid, raw = (c.strip() for c in row)
            try:
                r = float(raw)
            except ValueError:
                raise DataError(f"{path}:{lineno}: rating {raw!r} is not a number") from None
            if not math.isfinite(r):
                raise DataError(f"{path}:{lineno}: rating must be finite")
            if uid not in users_map:
                if user_index is not None:
                    raise DataError(f"{path}:{lineno}: unknown user {uid!r}")
                users_map[uid] = len(users_map)
            if iid not in items_map:
                if item_index is not None:
                    raise DataError(f"{path}:{lineno}: unknown item {iid!r}")
                items_map[iid] = len(items_map)
            key = (users_map[uid], items_map[iid])
            if key in seen:
                raise DataError(f"{path}:{lineno}: duplicate rating for ({uid}, {iid})")
            seen.add(key)
            us.append(key[0])
            its.append(key[1])
            rs.append(r)
    user_ids = sorted(users_map, key=users_map.get)
    item_ids = sorted(items_map, key=items_map.get)
    return RatingStore.from_triples(us, its, rs, n_users=len(user_ids), n_items=len(item_ids),
                                    user_ids=user_ids, item_ids=item_ids)


def save_ratings(ratings: RatingStore, path):
    uids = ratings.user_ids or [str(u) for u in range(ratings.n_users)]
    iids = ratings.item_ids or [str(i) for i in range(ratings.n_items)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RATINGS_HEADER)
        for u in range(ratings.n_users):
            for i, r in zip(ratings.items_of(u), ratings.ratings_of(u)):
                w.writerow([uids[u], iids[i], repr(float(r))])


# ---------------------------------------------------------------------------
# featurization


@dataclass(frozen=True)
class RawItemRecord:
    external_id: str
    text_fields: dict = field(default_factory=dict)
    categorical_fields: dict = field(default_factory=dict)
    numeric_fields: dict = field(default_factory=dict)


def load_items(path) -> list[RawItemRecord]:
    """Read item metadata from JSON Lines (``id``, ``text``, ``categorical``, ``numeric``)."""
    records, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: {e.msg}") from None
            if "id" not in obj:
                raise DataError(f"{path}:{lineno}: record has no 'id'")
            ext = str(obj["id"])
            if ext in seen:
                raise DataError(f"{path}:{lineno}: duplicate item id {ext!r}")
            seen.add(ext)
            try:
                numeric = {k: float(v) for k, v in obj.get("numeric", {}).items()}
            except (TypeError, ValueError):
                raise DataError(f"{path}:{lineno}: non-numeric value in 'numeric'") from None
            records.append(RawItemRecord(
                ext,
                {k: str(v) for k, v in obj.get("text", {}).items()},
                {k: str(v) for k, v in obj.get("categorical", {}).items()},
                numeric,
            ))
    return records


@dataclass(frozen=True)
class TextFieldSpec:
    mode: str = "tfidf"
    min_df: int = 1
    mutable: bool = True

    def __post_init__(self):
        if self.mode not in TEXT_MODES:
            raise ConfigError(f"text mode must be one of {TEXT_MODES}, got {self.mode!r}")
        if self.min_df < 1:
            raise ConfigError("min_df must be >= 1")


@dataclass(frozen=True)
class FieldSpec:
    mutable: bool = True


@dataclass(frozen=True)
class FeaturizerSpec:
    text: dict = field(default_factory=dict)
    categorical: dict = field(default_factory=dict)
    numeric: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeaturizerSpec":
        unknown = set(d) - {"text", "categorical", "numeric"}
        if unknown:
            raise ConfigError(f"unknown featurizer sections: {sorted(unknown)}")
        try:
            return cls(
                {k: TextFieldSpec(**v) for k, v in d.get("text", {}).items()},
                {k: FieldSpec(**v) for k, v in d.get("categorical", {}).items()},
                {k: FieldSpec(**v) for k, v in d.get("numeric", {}).items()},
            )
        except TypeError as e:
            raise ConfigError(f"bad featurizer spec: {e}") from None

    @classmethod
    def from_json(cls, path) -> "FeaturizerSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def tokenize(text: str) -> list[str]:
    return text.lower().translate(_PUNCT).split()


def _text_block(docs: list[list[str]], spec: TextFieldSpec):
    df = Counter()
    for toks in docs:
        df.update(set(toks))
    vocab = sorted(t for t, c in df.items() if c >= spec.min_df)
    col = {t: j for j, t in enumerate(vocab)}
    n = len(docs)
    idf = np.array([math.log((1 + n) / (1 + df[t])) + 1.0 for t in vocab])
    rows, cols, vals = [], [], []
    for i, toks in enumerate(docs):
        counts = Counter(t for t in toks if t in col)
        for t in sorted(counts):
            j = col[t]
            if spec.mode == "binary":
                x = 1.0
            elif spec.mode == "tf":
                x = float(counts[t])
            else:
                x = counts[t] * idf[j]
            rows.append(i)
            cols.append(j)
            vals.append(x)
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, len(vocab)))
    return mat, vocab


def featurize(records: Sequence[RawItemRecord], spec: FeaturizerSpec) -> ItemCatalog:
    """Turn raw item records into a catalog; rows follow record order.

    Blocks appear text, categorical, numeric, each sorted by field name.
    Text features are lower-bounded at 0, one-hot and min-max columns lie in
    [0, 1].  A field missing from a record contributes zeros.
    """
    if not records:
        raise DataError("no records to featurize")
    n = len(records)
    for kind, attr, names in (("text", "text_fields", spec.text),
                              ("categorical", "categorical_fields", spec.categorical),
                              ("numeric", "numeric_fields", spec.numeric)):
        for name in names:
            if not any(name in getattr(r, attr) for r in records):
                raise DataError(f"{kind} field {name!r} does not occur in any record")

    blocks, names, sources, mutable, bounds = [], [], [], [], []

    def add(block, block_names, source, is_mutable, lo, hi):
        blocks.append(sp.csr_matrix(block))
        names.extend(block_names)
        sources.extend([source] * len(block_names))
        mutable.extend([is_mutable] * len(block_names))
        bounds.extend([(lo, hi)] * len(block_names))

    for name in sorted(spec.text):
        fs = spec.text[name]
        docs = [tokenize(r.text_fields.get(name, "")) for r in records]
        mat, vocab = _text_block(docs, fs)
        add(mat, [f"{name}:{t}" for t in vocab], name, fs.mutable, 0.0, math.inf)

    for name in sorted(spec.categorical):
        values = sorted({r.categorical_fields[name] for r in records if name in r.categorical_fields})
        col = {v: j for j, v in enumerate(values)}
        mat = sp.lil_matrix((n, len(values)))
        for i, r in enumerate(records):
            if name in r.categorical_fields:
                mat[i, col[r.categorical_fields[name]]] = 1.0
        add(mat, [f"{name}={v}" for v in values], name, spec.categorical[name].mutable, 0.0, 1.0)

    for name in sorted(spec.numeric):
        raw = np.array([r.numeric_fields.get(name, np.nan) for r in records], dtype=np.float64)
        present = raw[~np.isnan(raw)]
        lo, hi = present.min(), present.max()
        x = np.zeros(n) if hi == lo else (raw - lo) / (hi - lo)
        x = np.nan_to_num(x, nan=0.0)
        add(x[:, None], [name], name, spec.numeric[name].mutable, 0.0, 1.0)

    features = sp.hstack(blocks, format="csr") if blocks else sp.csr_matrix((n, 0))
    return ItemCatalog(
        features,
        mutable_mask=np.array(mutable, dtype=bool),
        bounds=np.array(bounds, dtype=np.float64).reshape(-1, 2),
        item_ids=[r.external_id for r in records],
        feature_names=names,
        feature_sources=sources,
    )


# ---------------------------------------------------------------------------
# catalog persistence


def save_catalog(catalog: ItemCatalog, directory):
    """Write ``catalog.csv`` and its ``catalog.json`` sidecar into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    coo = catalog.features.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(directory / "catalog.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"f={catalog.n_features}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIPLES_HEADER)
        for i, j, x in zip(coo.row[order], coo.col[order], coo.data[order]):
            w.writerow([int(i), int(j), repr(float(x))])

    bounds = None
    if catalog.bounds is not None:
        bounds = [[None if math.isinf(lo) else lo, None if math.isinf(hi) else hi]
                  for lo, hi in catalog.bounds.tolist()]
    sidecar = {
        "n_items": catalog.n_items,
        "n_features": catalog.n_features,
        "item_ids": list(catalog.item_ids) if catalog.item_ids is not None else None,
        "feature_names": list(catalog.feature_names) if catalog.feature_names is not None else None,
        "feature_sources": list(catalog.feature_sources) if catalog.feature_sources is not None else None,
        "mutable_mask": [bool(m) for m in catalog.mutable_mask],
        "bounds": bounds,
    }
    with open(directory / "catalog.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=1)
        fh.write("\n")


def load_catalog(directory) -> ItemCatalog:
    directory = Path(directory)
    try:
        with open(directory / "catalog.json", encoding="utf-8") as fh:
            side = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"{directory}: no catalog.json") from None
    path = directory / "catalog.csv"
    rows, cols, vals = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline().strip()
        if not first.startswith("f="):
            raise DataError(f"{path}:1: expected 'f=<int>' header")
        f = int(first[2:])
        reader = csv.reader(fh)
        if next(reader, None) != TRIPLES_HEADER:
            raise DataError(f"{path}:2: expected header {','.join(TRIPLES_HEADER)}")
        for lineno, row in enumerate(reader, start=3):
            try:
                i, j, x = int(row[0]), int(row[1]), float(row[2])
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: malformed triple") from None
            rows.append(i)
            cols.append(j)
            vals.append(x)
    if f != side["n_features"]:
        raise DataError(f"{path}: f={f} disagrees with sidecar n_features={side['n_features']}")
    features = sp.csr_matrix((vals, (rows, cols)), shape=(side["n_items"], f))
    bounds = side.get("bounds")
    if bounds is not None:
        bounds = np.array([[-math.inf if lo is None else lo, math.inf if hi is None else hi]
                           for lo, hi in bounds], dtype=np.float64).reshape(-1, 2)
    return ItemCatalog(features, side["mutable_mask"], bounds, side.get("item_ids"),
                       side.get("feature_names"), side.get("feature_sources"))


class Dataset(NamedTuple):
    catalog: ItemCatalog
    ratings: RatingStore
    metadata: dict


def save_dataset(directory, catalog: ItemCatalog, ratings: RatingStore, metadata: Mapping | None = None):
    """Write a catalog, its ratings and per-user metadata (keyed by user index)."""
    directory = Path(directory)
    save_catalog(catalog, directory)
    iids = catalog.item_ids or [str(i) for i in range(catalog.n_items)]
    uids = ratings.user_ids or [str(u) for u in range(ratings.n_users)]
    save_ratings(RatingStore(ratings.matrix.indptr, ratings.matrix.indices, ratings.matrix.data,
                             ratings.n_items, uids, iids), directory / "ratings.csv")
    metadata = metadata or {}
    users = {"user_ids": list(uids),
             "metadata": {uids[u]: metadata[u] for u in sorted(metadata)}}
    with open(directory / "users.json", "w", encoding="utf-8") as fh:
        json.dump(users, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    catalog = load_catalog(directory)
    user_index, metadata = None, {}
    users_path = directory / "users.json"
    if users_path.exists():
        with open(users_path, encoding="utf-8") as fh:
            users = json.load(fh)
        user_index = {u: i for i, u in enumerate(users["user_ids"])}
        for ext, meta in users.get("metadata", {}).items():
            if ext not in user_index:
                raise DataError(f"{users_path}: metadata for unknown user {ext!r}")
            metadata[user_index[ext]] = meta
    ratings = load_ratings(directory / "ratings.csv", catalog.item_index, user_index)
    return Dataset(catalog, ratings, metadata)


# ---------------------------------------------------------------------------
# grouping


@dataclass(frozen=True)
class GroupingSpec:
    strategy: str = "activity"
    field: str | None = None
    n_groups: int = 5

    def __post_init__(self):
        if self.strategy not in ("activity", "metadata"):
            raise ConfigError(f"unknown grouping strategy {self.strategy!r}")
        if self.strategy == "metadata" and not self.field:
            raise ConfigError("metadata grouping needs a field")
        if self.n_groups < 1:
            raise ConfigError("n_groups must be positive")


def group_users(ratings: RatingStore, metadata: Mapping | None, spec: GroupingSpec) -> list[np.ndarray]:
    """Split users into ``n_groups`` equal-size quantile groups.

    Users are ordered by the grouping key, ties by user id; earlier groups
    take the remainder when the sizes cannot be exactly equal.
    """
    n = ratings.n_users
    if spec.n_groups > max(n, 1):
        raise ConfigError(f"cannot split {n} users into {spec.n_groups} groups")
    if spec.strategy == "activity":
        keys = ratings.activity().astype(np.float64)
    else:
        metadata = metadata or {}
        try:
            keys = np.array([float(metadata[u][spec.field]) for u in range(n)])
        except KeyError:
            raise DataError(f"metadata field {spec.field!r} missing for some users") from None
    order = np.lexsort((np.arange(n), keys))
    base, rem = divmod(n, spec.n_groups)
    sizes = [base + (g < rem) for g in range(spec.n_groups)]
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return [np.sort(order[bounds[g]:bounds[g + 1]]) for g in range(spec.n_groups)]


# ---------------------------------------------------------------------------
# synthetic data


def generate_synthetic(n_users: int, n_items: int, f: int, density: float,
                       rating_range=(1, 5), rng_seed: int = 0,
                       feature_density: float = 0.1, feature_law: str = "zipf"):
    """Random catalog, ratings and age metadata for desk-scale experiments.

    Features are sparse uniform(0, 1) entries.  With ``feature_law="zipf"``
    feature j is present in an item with probability proportional to
    1 / (j + 1), the way term frequencies fall off in text; with
    ``"uniform"`` every feature is present with probability
    ``feature_density``.  Either way the mean presence is about
    ``feature_density`` (Zipf probabilities are capped at 1).

    Each (user, item) pair is rated with probability ``density``; integer
    ``rating_range`` bounds give integer ratings.
    """
    if min(n_users, n_items, f) < 1:
        raise ConfigError("sizes must be positive")
    if not 0.0 < density <= 1.0 or not 0.0 < feature_density <= 1.0:
        raise ConfigError("densities must lie in (0, 1]")
    if feature_law == "zipf":
        inv = 1.0 / np.arange(1, f + 1)
        presence = np.minimum(1.0, feature_density * f * inv / inv.sum())
    elif feature_law == "uniform":
        presence = np.full(f, feature_density)
    else:
        raise ConfigError(f"unknown feature_law {feature_law!r}")
    lo, hi = rating_range
    rng = np.random.default_rng(rng_seed)
    values = rng.random((n_items, f))
    keep = rng.random((n_items, f)) < presence
    catalog = ItemCatalog(
        np.where(keep, values, 0.0),
        item_ids=[f"i{i}" for i in range(n_items)],
        feature_names=[f"x{j}" for j in range(f)],
    )
    rated = rng.random((n_users, n_items)) < density
    users, items = np.nonzero(rated)
    if isinstance(lo, (int, np.integer)) and isinstance(hi, (int, np.integer)):
        r = rng.integers(lo, hi + 1, size=users.size).astype(np.float64)
    else:
        r = rng.uniform(lo, hi, size=users.size)
    ratings = RatingStore.from_triples(users, items, r, n_users, n_items,
                                       user_ids=[f"u{u}" for u in range(n_users)],
                                       item_ids=catalog.item_ids)
    ages = rng.integers(18, 71, size=n_users)
    metadata = {u: {"age": int(ages[u])} for u in range(n_users)}
    return catalog, ratings, metadata
