"""CAV learning on top of item representations.

Trainers: binary logistic regression on tagged/untagged items, per-user
pairwise RankNet, and LambdaRank (RankNet gradients scaled by |delta-NDCG|
within each user's list).  On top of the single-direction trainers sit the
per-user threshold fit and the EM sense-disentangling loop with
quality-driven sense-count selection.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ._kernels import lambdarank_pair_deltas, pair_order_counts
from .core import Dataset, tag_view

log = logging.getLogger(__name__)

DEFAULT_NEG_RATIO = {"logistic": 4, "ranknet": 1, "lambdarank": 1}


class EmptyExamplesError(ValueError):
    pass


class UndefinedQualityError(ValueError):
    pass


@dataclass
class CAV:
    tag: int
    direction: np.ndarray
    layer: int | None = None
    trainer: str = "ranknet"
    lambda_reg: float = 0.0
    quality: float | None = None


@dataclass
class LabeledExamples:
    """Item-level training set for logistic CAVs, labels in {+1, -1}."""
    users: np.ndarray
    items: np.ndarray
    labels: np.ndarray

    @property
    def size(self) -> int:
        return self.labels.size


@dataclass
class PairSet:
    """Per-user (positive, negative) item comparisons, flattened."""
    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray
    weight: np.ndarray | None = None

    @property
    def n_pairs(self) -> int:
        return self.pos.size

    def restrict_users(self, keep: np.ndarray) -> "PairSet":
        mask = np.isin(self.users, keep)
        w = self.weight[mask] if self.weight is not None else None
        return PairSet(self.users[mask], self.pos[mask], self.neg[mask], w)


@dataclass
class EvalPairs:
    """All (pos, neg) pairs per user in CSR layout, for quality counting."""
    user_ids: np.ndarray   # users in offset order
    pos_items: np.ndarray
    neg_items: np.ndarray
    pos_off: np.ndarray
    neg_off: np.ndarray

    @property
    def n_pairs(self) -> int:
        pos_counts = np.diff(self.pos_off)
        neg_counts = np.diff(self.neg_off)
        return int(np.sum(pos_counts * neg_counts))

    def restrict_users(self, keep) -> "EvalPairs":
        keep = set(np.asarray(keep).tolist())
        sel = [k for k, u in enumerate(self.user_ids) if int(u) in keep]
        pos_chunks, neg_chunks = [], []
        pos_off, neg_off = [0], [0]
        for k in sel:
            pos_chunks.append(self.pos_items[self.pos_off[k]:self.pos_off[k + 1]])
            neg_chunks.append(self.neg_items[self.neg_off[k]:self.neg_off[k + 1]])
            pos_off.append(pos_off[-1] + pos_chunks[-1].size)
            neg_off.append(neg_off[-1] + neg_chunks[-1].size)
        e = np.empty(0, dtype=np.int64)
        return EvalPairs(self.user_ids[sel],
                         np.concatenate(pos_chunks) if pos_chunks else e,
                         np.concatenate(neg_chunks) if neg_chunks else e.copy(),
                         np.asarray(pos_off, dtype=np.int64),
                         np.asarray(neg_off, dtype=np.int64))


@dataclass
class PersonalThreshold:
    user: int
    tag: int
    tau: float
    misclassifications: int


@dataclass
class SenseModel:
    tag: int
    senses: list[CAV]
    user_assignment: dict[int, int]
    avg_quality: float
    quality_history: list = field(default_factory=list)

    @property
    def num_senses(self) -> int:
        return len(self.senses)


# --- example construction ---------------------------------------------------

def eval_pairs(dataset: Dataset, tag: int, users=None) -> EvalPairs:
    """All implicit comparison pairs for a tag (every T_{u,g} x T_{u,gbar})."""
    if users is None:
        users = dataset.users_with_tag(tag)
    user_ids, pos_chunks, neg_chunks = [], [], []
    pos_off, neg_off = [0], [0]
    for u in np.asarray(users):
        view = tag_view(dataset, int(u), tag)
        if view.positives.size == 0:
            continue
        user_ids.append(int(u))
        pos_chunks.append(view.positives)
        neg_chunks.append(view.negatives)
        pos_off.append(pos_off[-1] + view.positives.size)
        neg_off.append(neg_off[-1] + view.negatives.size)
    e = np.empty(0, dtype=np.int64)
    return EvalPairs(np.asarray(user_ids, dtype=np.int64),
                     np.concatenate(pos_chunks) if pos_chunks else e,
                     np.concatenate(neg_chunks) if neg_chunks else e.copy(),
                     np.asarray(pos_off, dtype=np.int64),
                     np.asarray(neg_off, dtype=np.int64))


def build_examples(dataset: Dataset, tag: int, neg_ratio: int,
                   rng: np.random.Generator,
                   users=None) -> tuple[LabeledExamples, PairSet]:
    """Labeled items and sampled comparison pairs for one tag.

    Per positive item, ``neg_ratio`` negatives are drawn uniformly without
    replacement from the user's otherwise-tagged items (fewer when the pool
    is small)."""
    if neg_ratio < 1:
        raise ValueError("neg_ratio must be >= 1")
    if users is None:
        users = dataset.users_with_tag(tag)
    ex_users, ex_items, ex_labels = [], [], []
    p_users, p_pos, p_neg = [], [], []
    any_pos = False
    for u in np.asarray(users):
        u = int(u)
        view = tag_view(dataset, u, tag)
        if view.positives.size == 0:
            continue
        any_pos = True
        ex_users.append(np.full(view.positives.size, u, dtype=np.int64))
        ex_items.append(view.positives)
        ex_labels.append(np.ones(view.positives.size, dtype=np.int64))
        pool = view.negatives
        if pool.size == 0:
            continue
        sampled = set()
        for p in view.positives:
            k = min(neg_ratio, pool.size)
            negs = rng.choice(pool, size=k, replace=False)
            p_users.append(np.full(k, u, dtype=np.int64))
            p_pos.append(np.full(k, p, dtype=np.int64))
            p_neg.append(negs.astype(np.int64))
            sampled.update(negs.tolist())
        neg_arr = np.asarray(sorted(sampled), dtype=np.int64)
        ex_users.append(np.full(neg_arr.size, u, dtype=np.int64))
        ex_items.append(neg_arr)
        ex_labels.append(-np.ones(neg_arr.size, dtype=np.int64))
    if not any_pos:
        raise EmptyExamplesError(f"tag {tag} has no positive examples")
    examples = LabeledExamples(np.concatenate(ex_users), np.concatenate(ex_items),
                               np.concatenate(ex_labels))
    e = np.empty(0, dtype=np.int64)
    pairs = PairSet(np.concatenate(p_users) if p_users else e,
                    np.concatenate(p_pos) if p_pos else e.copy(),
                    np.concatenate(p_neg) if p_neg else e.copy())
    return examples, pairs


# --- scoring and quality ----------------------------------------------------

def cav_score(cav: CAV, reprs: np.ndarray, cosine: bool = False) -> np.ndarray:
    """Attribute degree per item; cosine variant for cross-corpus comparison."""
    reprs = np.atleast_2d(reprs)
    if reprs.shape[-1] != cav.direction.shape[0]:
        raise ValueError(f"representation dim {reprs.shape[-1]} != "
                         f"CAV dim {cav.direction.shape[0]}")
    if not cosine:
        return reprs @ cav.direction
    dnorm = np.linalg.norm(cav.direction)
    rnorm = np.linalg.norm(reprs, axis=-1)
    denom = np.where(rnorm * dnorm > 0, rnorm * dnorm, 1.0)
    return (reprs @ cav.direction) / denom


def quality_from_scores(item_scores: np.ndarray, ep: EvalPairs) -> float:
    if ep.n_pairs == 0:
        raise UndefinedQualityError("no comparable pairs")
    correct, ties, total = pair_order_counts(item_scores[ep.pos_items],
                                             item_scores[ep.neg_items],
                                             ep.pos_off, ep.neg_off)
    return float((correct.sum() + ties.sum()) / total.sum())


def cav_quality(cav: CAV, data: "EvalPairs | PairSet", reprs: np.ndarray) -> float:
    """Fraction of (tagged, untagged) pairs the CAV orders with >=."""
    scores = reprs @ cav.direction
    if isinstance(data, EvalPairs):
        return quality_from_scores(scores, data)
    if data.n_pairs == 0:
        raise UndefinedQualityError("no comparable pairs")
    return float(np.mean(scores[data.pos] >= scores[data.neg]))


def per_user_explained_counts(item_scores: np.ndarray, ep: EvalPairs) -> np.ndarray:
    """#correctly-ordered pairs (with >=) per user, aligned with ep.user_ids."""
    correct, ties, _ = pair_order_counts(item_scores[ep.pos_items],
                                         item_scores[ep.neg_items],
                                         ep.pos_off, ep.neg_off)
    return correct + ties


# --- optimizers -------------------------------------------------------------

def _adam(grad_fn, w0: np.ndarray, lr: float = 0.05, max_iters: int = 2000,
          grad_tol: float = 1e-6):
    w = w0.copy()
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    b1, b2, eps = 0.9, 0.999, 1e-8
    for t in range(1, max_iters + 1):
        _, g = grad_fn(w)
        if np.linalg.norm(g) < grad_tol:
            break
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return w


def logistic_loss_grad(w, X, y, lam):
    z = y * (X @ w)
    loss = float(np.sum(np.logaddexp(0.0, -z)) + 0.5 * lam * w @ w)
    sig = 1.0 / (1.0 + np.exp(np.clip(z, -500, 500)))
    grad = -(X * (y * sig)[:, None]).sum(axis=0) + lam * w
    return loss, grad


def ranknet_loss_grad(w, Xdiff, lam, weights=None):
    z = Xdiff @ w
    per = np.logaddexp(0.0, -z)
    sig = 1.0 / (1.0 + np.exp(np.clip(z, -500, 500)))
    if weights is not None:
        loss = float(weights @ per + 0.5 * lam * w @ w)
        grad = -(Xdiff * (weights * sig)[:, None]).sum(axis=0) + lam * w
    else:
        loss = float(per.sum() + 0.5 * lam * w @ w)
        grad = -(Xdiff * sig[:, None]).sum(axis=0) + lam * w
    return loss, grad


# --- trainers ---------------------------------------------------------------

def train_cav_logistic(examples: LabeledExamples, reprs: np.ndarray, tag: int,
                       lam: float = 1.0, layer: int | None = None,
                       lr: float = 0.05, max_iters: int = 2000) -> CAV:
    y = examples.labels.astype(np.float64)
    if np.all(y > 0) or np.all(y < 0):
        raise EmptyExamplesError("logistic training needs both classes")
    X = reprs[examples.items]
    w = _adam(lambda w: logistic_loss_grad(w, X, y, lam),
              np.zeros(reprs.shape[1]), lr=lr, max_iters=max_iters)
    return CAV(tag=tag, direction=w, layer=layer, trainer="logistic", lambda_reg=lam)


def train_cav_ranknet(pairs: PairSet, reprs: np.ndarray, tag: int,
                      lam: float = 1.0, layer: int | None = None,
                      lr: float = 0.05, max_iters: int = 2000) -> CAV:
    if pairs.n_pairs == 0:
        raise EmptyExamplesError("no comparison pairs")
    Xdiff = reprs[pairs.pos] - reprs[pairs.neg]
    w = _adam(lambda w: ranknet_loss_grad(w, Xdiff, lam, pairs.weight),
              np.zeros(reprs.shape[1]), lr=lr, max_iters=max_iters)
    cav = CAV(tag=tag, direction=w, layer=layer, trainer="ranknet", lambda_reg=lam)
    cav.quality = cav_quality(cav, pairs, reprs)
    return cav


def _user_lists(pairs: PairSet):
    """Flattened per-user item lists + pair index mappings for LambdaRank."""
    order = np.argsort(pairs.users, kind="stable")
    users_sorted = pairs.users[order]
    uniq_users, starts = np.unique(users_sorted, return_index=True)
    list_items, list_labels, list_off = [], [], [0]
    pair_pos_idx = np.empty(pairs.n_pairs, dtype=np.int64)
    pair_neg_idx = np.empty(pairs.n_pairs, dtype=np.int64)
    pair_user = np.empty(pairs.n_pairs, dtype=np.int64)
    bounds = list(starts) + [users_sorted.size]
    for k in range(uniq_users.size):
        sel = order[bounds[k]:bounds[k + 1]]
        pos_u = np.unique(pairs.pos[sel])
        neg_u = np.unique(pairs.neg[sel])
        items = np.concatenate([pos_u, neg_u])
        labels = np.concatenate([np.ones(pos_u.size, dtype=np.int64),
                                 np.zeros(neg_u.size, dtype=np.int64)])
        base = list_off[-1]
        lookup = {int(it): base + j for j, it in enumerate(items)}
        pair_pos_idx[sel] = [lookup[int(p)] for p in pairs.pos[sel]]
        pair_neg_idx[sel] = [lookup[int(q)] for q in pairs.neg[sel]]
        pair_user[sel] = k
        list_items.append(items)
        list_labels.append(labels)
        list_off.append(base + items.size)
    return (np.concatenate(list_items), np.concatenate(list_labels),
            np.asarray(list_off, dtype=np.int64),
            pair_pos_idx, pair_neg_idx, pair_user)


def train_cav_lambdarank(pairs: PairSet, reprs: np.ndarray, tag: int,
                         lam: float = 1.0, layer: int | None = None,
                         lr: float = 0.05, max_iters: int = 2000,
                         grad_tol: float = 1e-6) -> CAV:
    """RankNet gradients scaled by |delta-NDCG| of swapping each pair inside
    the owner user's list (binary gains, log2 discounts).  The scaling is
    recomputed from the current scores each iteration and treated as a
    constant within the step."""
    if pairs.n_pairs == 0:
        raise EmptyExamplesError("no comparison pairs")
    (list_items, list_labels, list_off,
     ppos, pneg, puser) = _user_lists(pairs)
    Xdiff = reprs[pairs.pos] - reprs[pairs.neg]
    base_w = pairs.weight if pairs.weight is not None else np.ones(pairs.n_pairs)

    w = np.zeros(reprs.shape[1])
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    b1, b2, eps = 0.9, 0.999, 1e-8
    for t in range(1, max_iters + 1):
        item_scores = reprs @ w
        deltas = lambdarank_pair_deltas(item_scores, list_items, list_labels,
                                        list_off, ppos, pneg, puser)
        _, g = ranknet_loss_grad(w, Xdiff, lam, base_w * deltas)
        if np.linalg.norm(g) < grad_tol:
            break
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    cav = CAV(tag=tag, direction=w, layer=layer, trainer="lambdarank", lambda_reg=lam)
    cav.quality = cav_quality(cav, pairs, reprs)
    return cav


def train_cav(trainer: str, dataset: Dataset, tag: int, reprs: np.ndarray,
              rng: np.random.Generator, lam: float = 1.0,
              neg_ratio: int | None = None, layer: int | None = None,
              users=None, **opt) -> CAV:
    """Convenience wrapper: build examples for a tag and run one trainer."""
    if trainer not in DEFAULT_NEG_RATIO:
        raise ValueError(f"unknown trainer {trainer!r}")
    if neg_ratio is None:
        neg_ratio = DEFAULT_NEG_RATIO[trainer]
    examples, pairs = build_examples(dataset, tag, neg_ratio, rng, users=users)
    if trainer == "logistic":
        return train_cav_logistic(examples, reprs, tag, lam=lam, layer=layer, **opt)
    if trainer == "ranknet":
        return train_cav_ranknet(pairs, reprs, tag, lam=lam, layer=layer, **opt)
    if trainer == "lambdarank":
        return train_cav_lambdarank(pairs, reprs, tag, lam=lam, layer=layer, **opt)
    raise ValueError(f"unknown trainer {trainer!r}")


# --- personal thresholds ----------------------------------------------------

ONE_CLASS_MARGIN = 0.05


def fit_personal_threshold(cav: CAV, view, reprs: np.ndarray) -> PersonalThreshold:
    """Threshold minimizing this user's misclassification count; among
    minimizers, the midpoint of the widest bracketing score gap.  All-positive
    users get tau = min score - 0.05 * score range (so every tagged item stays
    classified positive)."""
    if view.positives.size == 0:
        raise EmptyExamplesError(f"user {view.user} has no positives for tag {view.tag}")
    pos_scores = reprs[view.positives] @ cav.direction
    neg_scores = (reprs[view.negatives] @ cav.direction
                  if view.negatives.size else np.empty(0))
    all_scores = np.concatenate([pos_scores, neg_scores])
    span = float(all_scores.max() - all_scores.min())
    pad = ONE_CLASS_MARGIN * (span if span > 0 else max(1.0, abs(float(all_scores[0]))))

    if neg_scores.size == 0:
        return PersonalThreshold(view.user, view.tag,
                                 float(pos_scores.min()) - pad, 0)

    values = np.unique(all_scores)
    # errors(k): tau in gap k means the k smallest distinct values fall below
    pos_at = np.array([np.count_nonzero(pos_scores == val) for val in values])
    neg_at = np.array([np.count_nonzero(neg_scores == val) for val in values])
    cum_pos = np.concatenate([[0], np.cumsum(pos_at)])
    cum_neg = np.concatenate([[0], np.cumsum(neg_at)])
    errors = cum_pos + (neg_scores.size - cum_neg)

    widths = np.empty(values.size + 1)
    mids = np.empty(values.size + 1)
    widths[0] = 2 * pad
    mids[0] = values[0] - pad
    widths[-1] = 2 * pad
    mids[-1] = values[-1] + pad
    if values.size > 1:
        gaps = np.diff(values)
        widths[1:-1] = gaps
        mids[1:-1] = values[:-1] + gaps / 2.0

    best_err = errors.min()
    cand = np.flatnonzero(errors == best_err)
    pick = cand[np.argmax(widths[cand])]
    return PersonalThreshold(view.user, view.tag, float(mids[pick]), int(best_err))


# --- EM sense disentangling -------------------------------------------------

def _fit_partition(dataset, tag, reprs, trainer, assign, user_ids, ep,
                   lam, neg_ratio, rng, opt):
    """Train one CAV per cluster and compute pair-weighted average quality."""
    s = int(assign.max()) + 1
    cavs = []
    total_pairs = 0
    weighted_q = 0.0
    per_user_pos = np.diff(ep.pos_off)
    per_user_neg = np.diff(ep.neg_off)
    pair_counts = per_user_pos * per_user_neg
    for k in range(s):
        members = user_ids[assign == k]
        cav = train_cav(trainer, dataset, tag, reprs, rng, lam=lam,
                        neg_ratio=neg_ratio, users=members, **opt)
        cavs.append(cav)
        sel = assign == k
        n_k = int(pair_counts[sel].sum())
        if n_k:
            ep_k = ep.restrict_users(members)
            weighted_q += n_k * quality_from_scores(reprs @ cav.direction, ep_k)
            total_pairs += n_k
    return cavs, weighted_q / total_pairs if total_pairs else 0.0


def _worst_fit_user(cavs, reprs, ep, assign) -> int:
    """Index (into ep.user_ids) of the user worst explained by their assigned
    sense, by fraction of correctly ordered pairs."""
    per_sense = np.stack([per_user_explained_counts(reprs @ c.direction, ep)
                          for c in cavs], axis=1).astype(np.float64)
    own = per_sense[np.arange(assign.size), assign]
    pair_counts = np.maximum(np.diff(ep.pos_off) * np.diff(ep.neg_off), 1)
    return int(np.argmin(own / pair_counts))


def _reassign(cavs, reprs, ep):
    counts = np.stack([per_user_explained_counts(reprs @ c.direction, ep)
                       for c in cavs], axis=1)
    return np.argmax(counts, axis=1)   # argmax takes the lowest index on ties


def em_sense_cavs(dataset: Dataset, tag: int, s: int, trainer: str,
                  reprs: np.ndarray, rng: np.random.Generator,
                  lam: float = 1.0, neg_ratio: int | None = None,
                  em_eps: float = 0.01, max_em_iters: int = 20,
                  **opt) -> SenseModel:
    """Alternate CAV training per user cluster with best-explained
    reassignment.  New partitions are accepted only on strict quality
    improvement, so the recorded avg_quality sequence is non-decreasing and
    the loop terminates."""
    if s < 1:
        raise ValueError("s must be >= 1")
    if neg_ratio is None:
        neg_ratio = DEFAULT_NEG_RATIO[trainer]
    ep = eval_pairs(dataset, tag)
    user_ids = ep.user_ids
    if user_ids.size == 0:
        raise EmptyExamplesError(f"tag {tag} has no positives")
    s = min(s, user_ids.size)

    assign = rng.integers(0, s, size=user_ids.size)
    for k in range(s):          # no cluster may start empty
        if not np.any(assign == k):
            assign[int(rng.integers(0, user_ids.size))] = k
    cavs, q = _fit_partition(dataset, tag, reprs, trainer, assign, user_ids,
                             ep, lam, neg_ratio, rng, opt)
    history = [q]
    for _ in range(max_em_iters):
        new_assign = _reassign(cavs, reprs, ep)
        # empty-cluster repair: reseed with the single worst-fit user
        for k in range(s):
            if not np.any(new_assign == k):
                new_assign[_worst_fit_user(cavs, reprs, ep, new_assign)] = k
        if np.array_equal(new_assign, assign):
            break
        new_cavs, new_q = _fit_partition(dataset, tag, reprs, trainer, new_assign,
                                         user_ids, ep, lam, neg_ratio, rng, opt)
        if new_q <= q:
            break
        assign, cavs, improvement = new_assign, new_cavs, new_q - q
        q = new_q
        history.append(q)
        if improvement < em_eps:
            break
    assignment = {int(u): int(a) for u, a in zip(user_ids, assign)}
    return SenseModel(tag=tag, senses=cavs, user_assignment=assignment,
                      avg_quality=q, quality_history=history)


def select_sense_count(dataset: Dataset, tag: int, s_max: int, eps: float,
                       trainer: str, reprs: np.ndarray,
                       rng: np.random.Generator, **kw) -> SenseModel:
    """Grow the sense count from 1 until the avg-quality gain drops below eps."""
    if s_max < 1:
        raise ValueError("s_max must be >= 1")
    best = em_sense_cavs(dataset, tag, 1, trainer, reprs, rng, **kw)
    for s in range(2, s_max + 1):
        cand = em_sense_cavs(dataset, tag, s, trainer, reprs, rng, **kw)
        if cand.avg_quality - best.avg_quality < eps:
            return best
        best = cand
    return best


def assign_user_sense(model: SenseModel, user_eval: EvalPairs,
                      reprs: np.ndarray) -> int:
    """Sense whose CAV orders the most of this user's pairs (ties -> lowest
    index).  Users with no usable pairs fall back to sense 0."""
    if user_eval.n_pairs == 0:
        log.debug("user has no comparison pairs for tag %d; assigning sense 0",
                  model.tag)
        return 0
    counts = [int(per_user_explained_counts(reprs @ c.direction, user_eval).sum())
              for c in model.senses]
    return int(np.argmax(counts))


# --- EM over explicit comparison pairs (rater data) -------------------------

def _pairset_user_counts(scores: np.ndarray, pairs: PairSet, weighted=True):
    """Per-user (explained weight, total weight) over explicit pairs."""
    w = pairs.weight if (weighted and pairs.weight is not None) \
        else np.ones(pairs.n_pairs)
    ok = (scores[pairs.pos] >= scores[pairs.neg]).astype(np.float64) * w
    users = np.unique(pairs.users)
    lookup = {int(u): j for j, u in enumerate(users)}
    idx = np.asarray([lookup[int(u)] for u in pairs.users])
    explained = np.zeros(users.size)
    totals = np.zeros(users.size)
    np.add.at(explained, idx, ok)
    np.add.at(totals, idx, w)
    return users, explained, totals


def _train_on_pairs(trainer: str, pairs: PairSet, reprs, tag, lam, opt):
    if trainer == "ranknet":
        return train_cav_ranknet(pairs, reprs, tag, lam=lam, **opt)
    if trainer == "lambdarank":
        return train_cav_lambdarank(pairs, reprs, tag, lam=lam, **opt)
    raise ValueError(f"pair-based training supports ranking trainers, not {trainer!r}")


def em_sense_from_pairs(pairs: PairSet, reprs: np.ndarray, s: int, trainer: str,
                        rng: np.random.Generator, tag: int = -1, lam: float = 1.0,
                        em_eps: float = 0.01, max_em_iters: int = 20,
                        **opt) -> SenseModel:
    """EM sense disentangling over users identified by explicit comparison
    pairs (e.g. rater assessments) instead of tag views."""
    if pairs.n_pairs == 0:
        raise EmptyExamplesError("no comparison pairs")
    user_ids = np.unique(pairs.users)
    s = min(s, user_ids.size)

    def fit(assign):
        cavs, weighted_q, total = [], 0.0, 0.0
        for k in range(int(assign.max()) + 1):
            members = user_ids[assign == k]
            sub = pairs.restrict_users(members)
            cav = _train_on_pairs(trainer, sub, reprs, tag, lam, opt)
            cavs.append(cav)
            _, expl, tot = _pairset_user_counts(reprs @ cav.direction, sub)
            weighted_q += expl.sum()
            total += tot.sum()
        return cavs, weighted_q / total if total else 0.0

    def reassign(cavs):
        per_sense = []
        for c in cavs:
            users, expl, _ = _pairset_user_counts(reprs @ c.direction, pairs)
            per_sense.append(expl)
        return np.argmax(np.stack(per_sense, axis=1), axis=1)

    assign = rng.integers(0, s, size=user_ids.size)
    for k in range(s):          # guarantee no empty initial cluster
        if not np.any(assign == k):
            assign[rng.integers(0, user_ids.size)] = k
    cavs, q = fit(assign)
    history = [q]
    for _ in range(max_em_iters):
        new_assign = reassign(cavs)
        for k in range(s):
            if not np.any(new_assign == k):
                new_assign[int(rng.integers(0, user_ids.size))] = k
        if np.array_equal(new_assign, assign):
            break
        new_cavs, new_q = fit(new_assign)
        if new_q <= q:
            break
        improvement = new_q - q
        assign, cavs, q = new_assign, new_cavs, new_q
        history.append(q)
        if improvement < em_eps:
            break
    assignment = {int(u): int(a) for u, a in zip(user_ids, assign)}
    return SenseModel(tag=tag, senses=cavs, user_assignment=assignment,
                      avg_quality=q, quality_history=history)


def select_sense_count_from_pairs(pairs: PairSet, reprs: np.ndarray, s_max: int,
                                  eps: float, trainer: str,
                                  rng: np.random.Generator, **kw) -> SenseModel:
    best = em_sense_from_pairs(pairs, reprs, 1, trainer, rng, **kw)
    for s in range(2, s_max + 1):
        cand = em_sense_from_pairs(pairs, reprs, s, trainer, rng, **kw)
        if cand.avg_quality - best.avg_quality < eps:
            return best
        best = cand
    return best


def assign_sense_from_pairs(model: SenseModel, user_pairs: PairSet,
                            reprs: np.ndarray) -> int:
    """Map a new user/rater onto the sense best explaining their own pairs."""
    if user_pairs.n_pairs == 0:
        return 0
    expl = [float(_pairset_user_counts(reprs @ c.direction, user_pairs)[1].sum())
            for c in model.senses]
    return int(np.argmax(expl))
