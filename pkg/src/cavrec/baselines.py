"""PITF tag-prediction baseline.

Pairwise interaction tensor factorization with user, item, tag-user and
tag-item embeddings, trained pointwise with logistic loss on positive
triples plus sampled negatives (mirroring the CAV negative sampling so the
accuracy columns stay comparable).  PITF never reads rating values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cavlearn import LabeledExamples
from .cftrain import TrainingDivergedError


@dataclass
class PitfModel:
    user_vecs: np.ndarray
    item_vecs: np.ndarray
    tag_user_vecs: np.ndarray
    tag_item_vecs: np.ndarray
    d: int

    def predict(self, user, item, tag) -> np.ndarray:
        return (np.sum(self.user_vecs[user] * self.tag_user_vecs[tag], axis=-1)
                + np.sum(self.item_vecs[item] * self.tag_item_vecs[tag], axis=-1))

    def to_json(self) -> dict:
        return {"format_version": 1, "kind": "pitf", "d": self.d,
                "user_vecs": self.user_vecs.tolist(),
                "item_vecs": self.item_vecs.tolist(),
                "tag_user_vecs": self.tag_user_vecs.tolist(),
                "tag_item_vecs": self.tag_item_vecs.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "PitfModel":
        if obj.get("kind") != "pitf":
            raise ValueError(f"not a pitf checkpoint: {obj.get('kind')!r}")
        return cls(*(np.asarray(obj[k], dtype=np.float64) for k in
                     ("user_vecs", "item_vecs", "tag_user_vecs", "tag_item_vecs")),
                   d=obj["d"])


def train_pitf(examples_by_tag: dict[int, LabeledExamples], num_users: int,
               num_items: int, num_tags: int, d: int,
               lr: float = 2e-4, reg: float = 5e-5, epochs: int = 100,
               rng: np.random.Generator | None = None) -> PitfModel:
    """SGD on logistic loss over labeled (user, item, tag) triples."""
    rng = rng if rng is not None else np.random.default_rng(0)
    users, items, tags, labels = [], [], [], []
    for g, ex in examples_by_tag.items():
        users.append(ex.users)
        items.append(ex.items)
        tags.append(np.full(ex.size, g, dtype=np.int64))
        labels.append(ex.labels)
    if not users:
        raise ValueError("no training triples")
    users = np.concatenate(users)
    items = np.concatenate(items)
    tags = np.concatenate(tags)
    labels = np.concatenate(labels).astype(np.float64)

    scale = 0.1 / np.sqrt(d)
    U = rng.normal(0.0, scale, size=(num_users, d))
    I = rng.normal(0.0, scale, size=(num_items, d))
    TU = rng.normal(0.0, scale, size=(num_tags, d))
    TI = rng.normal(0.0, scale, size=(num_tags, d))

    n = labels.size
    for _ in range(epochs):
        for idx in rng.permutation(n):
            u, i, g, y = users[idx], items[idx], tags[idx], labels[idx]
            z = y * (U[u] @ TU[g] + I[i] @ TI[g])
            if not np.isfinite(z):
                raise TrainingDivergedError("PITF prediction became non-finite")
            coef = y / (1.0 + np.exp(np.clip(z, -500, 500)))  # y*sigma(-z)
            gu = -coef * TU[g] + reg * U[u]
            gtu = -coef * U[u] + reg * TU[g]
            gi = -coef * TI[g] + reg * I[i]
            gti = -coef * I[i] + reg * TI[g]
            U[u] -= lr * gu
            TU[g] -= lr * gtu
            I[i] -= lr * gi
            TI[g] -= lr * gti
    return PitfModel(U, I, TU, TI, d)


def pitf_predict_accuracy(model: PitfModel,
                          examples_by_tag: dict[int, LabeledExamples]) -> float:
    """Fraction of labeled test triples where sign(y_hat) matches the label."""
    total, hits = 0, 0
    for g, ex in examples_by_tag.items():
        if ex.size == 0:
            continue
        pred = model.predict(ex.users, ex.items, g)
        hits += int(np.count_nonzero(np.sign(pred) == np.sign(ex.labels)))
        total += ex.size
    if total == 0:
        raise ValueError("empty test set")
    return hits / total


def pitf_tag_scores(model: PitfModel, tag: int, num_items: int) -> np.ndarray:
    """Item ranking scores for one tag (user-independent part), for Spearman
    evaluation against ground-truth attribute values."""
    return model.item_vecs @ model.tag_item_vecs[tag]
