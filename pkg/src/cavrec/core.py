"""Shared domain types: sparse rating/tag data sets and per-user tag views."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Dataset:
    """Immutable sparse ratings + tag triples over dense integer ids.

    ``ratings`` columns are parallel arrays (user, item, value); ``tags``
    likewise (user, item, tag).  Per-user indexes are built lazily and cached;
    all mutation happens before construction.
    """

    num_users: int
    num_items: int
    rating_users: np.ndarray
    rating_items: np.ndarray
    rating_values: np.ndarray
    tag_users: np.ndarray
    tag_items: np.ndarray
    tag_ids: np.ndarray
    tag_vocab: tuple[str, ...]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in ("rating_users", "rating_items", "tag_users", "tag_items", "tag_ids"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "rating_values",
                           np.asarray(self.rating_values, dtype=np.float64))
        object.__setattr__(self, "tag_vocab", tuple(self.tag_vocab))

    @property
    def num_tags(self) -> int:
        return len(self.tag_vocab)

    @property
    def num_ratings(self) -> int:
        return self.rating_users.shape[0]

    @property
    def num_tag_triples(self) -> int:
        return self.tag_users.shape[0]

    def _user_tag_index(self):
        """dict user -> (items array, tags array) over this user's tag triples."""
        if "user_tag" not in self._cache:
            idx = {}
            order = np.lexsort((self.tag_items, self.tag_users))
            tu, ti, tg = self.tag_users[order], self.tag_items[order], self.tag_ids[order]
            bounds = np.searchsorted(tu, np.arange(self.num_users + 1))
            for u in range(self.num_users):
                lo, hi = bounds[u], bounds[u + 1]
                if hi > lo:
                    idx[u] = (ti[lo:hi], tg[lo:hi])
            self._cache["user_tag"] = idx
        return self._cache["user_tag"]

    def _user_rating_index(self):
        if "user_rating" not in self._cache:
            idx = {}
            order = np.argsort(self.rating_users, kind="stable")
            ru, ri, rv = (self.rating_users[order], self.rating_items[order],
                          self.rating_values[order])
            bounds = np.searchsorted(ru, np.arange(self.num_users + 1))
            for u in range(self.num_users):
                lo, hi = bounds[u], bounds[u + 1]
                if hi > lo:
                    idx[u] = (ri[lo:hi], rv[lo:hi])
            self._cache["user_rating"] = idx
        return self._cache["user_rating"]

    def users_with_tag(self, tag: int) -> np.ndarray:
        mask = self.tag_ids == tag
        return np.unique(self.tag_users[mask])

    def tagging_users(self) -> np.ndarray:
        return np.unique(self.tag_users)


@dataclass(frozen=True)
class TagView:
    """One user's positive / implicit-negative item sets for one tag."""

    user: int
    tag: int
    positives: np.ndarray
    negatives: np.ndarray


@dataclass(frozen=True)
class SplitDataset:
    train: Dataset
    test: Dataset


@dataclass
class ValidationReport:
    orphan_tags: list = field(default_factory=list)
    out_of_range: list = field(default_factory=list)
    duplicates: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.orphan_tags or self.out_of_range or self.duplicates)

    def summary(self) -> str:
        if self.ok:
            return "dataset valid"
        return (f"{len(self.orphan_tags)} orphan tag triples, "
                f"{len(self.out_of_range)} out-of-range ids, "
                f"{len(self.duplicates)} duplicate records")


def validate_dataset(dataset: Dataset) -> ValidationReport:
    """Check structural invariants; violations are collected, never raised."""
    report = ValidationReport()
    n, m, k = dataset.num_users, dataset.num_items, dataset.num_tags

    for u, i in zip(dataset.rating_users, dataset.rating_items):
        if not (0 <= u < n and 0 <= i < m):
            report.out_of_range.append(("rating", int(u), int(i)))
    for u, i, g in zip(dataset.tag_users, dataset.tag_items, dataset.tag_ids):
        if not (0 <= u < n and 0 <= i < m and 0 <= g < k):
            report.out_of_range.append(("tag", int(u), int(i), int(g)))

    rated = set(zip(dataset.rating_users.tolist(), dataset.rating_items.tolist()))
    if len(rated) != dataset.num_ratings:
        seen = set()
        for u, i in zip(dataset.rating_users.tolist(), dataset.rating_items.tolist()):
            if (u, i) in seen:
                report.duplicates.append(("rating", u, i))
            seen.add((u, i))

    triples = list(zip(dataset.tag_users.tolist(), dataset.tag_items.tolist(),
                       dataset.tag_ids.tolist()))
    if len(set(triples)) != len(triples):
        seen = set()
        for t in triples:
            if t in seen:
                report.duplicates.append(("tag",) + t)
            seen.add(t)

    for u, i, g in triples:
        if (u, i) not in rated:
            report.orphan_tags.append((u, i, g))

    return report


def save_dataset(dataset: Dataset, path) -> None:
    np.savez_compressed(
        path, num_users=dataset.num_users, num_items=dataset.num_items,
        rating_users=dataset.rating_users, rating_items=dataset.rating_items,
        rating_values=dataset.rating_values, tag_users=dataset.tag_users,
        tag_items=dataset.tag_items, tag_ids=dataset.tag_ids,
        tag_vocab=np.asarray(dataset.tag_vocab, dtype=str))


def load_dataset(path) -> Dataset:
    with np.load(path) as z:
        return Dataset(num_users=int(z["num_users"]), num_items=int(z["num_items"]),
                       rating_users=z["rating_users"], rating_items=z["rating_items"],
                       rating_values=z["rating_values"], tag_users=z["tag_users"],
                       tag_items=z["tag_items"], tag_ids=z["tag_ids"],
                       tag_vocab=tuple(str(t) for t in z["tag_vocab"]))


def tag_view(dataset: Dataset, user: int, tag: int) -> TagView:
    """Positives = items ``user`` tagged with ``tag``; negatives = items they
    tagged with anything else.  Negatives are suppressed when the user never
    applied the tag positively."""
    if not 0 <= user < dataset.num_users:
        raise IndexError(f"user {user} out of range [0, {dataset.num_users})")
    if not 0 <= tag < dataset.num_tags:
        raise IndexError(f"tag {tag} out of range [0, {dataset.num_tags})")
    idx = dataset._user_tag_index()
    empty = np.empty(0, dtype=np.int64)
    if user not in idx:
        return TagView(user, tag, empty, empty)
    items, tags = idx[user]
    positives = np.unique(items[tags == tag])
    if positives.size == 0:
        return TagView(user, tag, positives, empty)
    all_tagged = np.unique(items)
    negatives = np.setdiff1d(all_tagged, positives, assume_unique=True)
    return TagView(user, tag, positives, negatives)
