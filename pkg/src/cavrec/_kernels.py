"""Hot inner-loop kernels.

Pair counting and LambdaRank weighting dominate runtime once data sets grow
past toy size, so both get numba-compiled implementations.  Setting the
environment variable ``CAVREC_NO_NUMBA=1`` selects the pure-numpy fallbacks
instead (used in CI smoke runs and by ``bench/bench_kernels.py`` to compare
the two paths).
"""

import os

import numpy as np

USE_NUMBA = os.environ.get("CAVREC_NO_NUMBA", "").lower() not in ("1", "true", "yes")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

if not USE_NUMBA:
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap


@njit(cache=True)
def _pair_counts_jit(pos_scores, neg_scores, pos_off, neg_off, correct, ties, total):
    n_users = pos_off.shape[0] - 1
    for u in range(n_users):
        c = 0
        t = 0
        n = 0
        for a in range(pos_off[u], pos_off[u + 1]):
            sp = pos_scores[a]
            for b in range(neg_off[u], neg_off[u + 1]):
                sn = neg_scores[b]
                if sp > sn:
                    c += 1
                elif sp == sn:
                    t += 1
                n += 1
        correct[u] = c
        ties[u] = t
        total[u] = n


def _pair_counts_np(pos_scores, neg_scores, pos_off, neg_off, correct, ties, total):
    n_users = pos_off.shape[0] - 1
    for u in range(n_users):
        sp = pos_scores[pos_off[u]:pos_off[u + 1]]
        sn = neg_scores[neg_off[u]:neg_off[u + 1]]
        if sp.size == 0 or sn.size == 0:
            correct[u] = 0
            ties[u] = 0
            total[u] = 0
            continue
        diff = sp[:, None] - sn[None, :]
        correct[u] = int(np.count_nonzero(diff > 0))
        ties[u] = int(np.count_nonzero(diff == 0))
        total[u] = diff.size


def pair_order_counts(pos_scores, neg_scores, pos_off, neg_off):
    """Per-user counts of strictly ordered / tied / total (pos, neg) pairs.

    ``pos_off``/``neg_off`` are CSR-style offsets delimiting each user's
    positive and negative score slices.  Returns int64 arrays
    (correct, ties, total), one entry per user.
    """
    n_users = pos_off.shape[0] - 1
    correct = np.zeros(n_users, dtype=np.int64)
    ties = np.zeros(n_users, dtype=np.int64)
    total = np.zeros(n_users, dtype=np.int64)
    pos_scores = np.ascontiguousarray(pos_scores, dtype=np.float64)
    neg_scores = np.ascontiguousarray(neg_scores, dtype=np.float64)
    pos_off = np.ascontiguousarray(pos_off, dtype=np.int64)
    neg_off = np.ascontiguousarray(neg_off, dtype=np.int64)
    if USE_NUMBA:
        _pair_counts_jit(pos_scores, neg_scores, pos_off, neg_off, correct, ties, total)
    else:
        _pair_counts_np(pos_scores, neg_scores, pos_off, neg_off, correct, ties, total)
    return correct, ties, total


@njit(cache=True)
def _lambdarank_deltas_jit(item_scores, list_items, list_labels, list_off,
                           pair_pos_idx, pair_neg_idx, pair_user, deltas):
    n_users = list_off.shape[0] - 1
    n_items_max = 0
    for u in range(n_users):
        sz = list_off[u + 1] - list_off[u]
        if sz > n_items_max:
            n_items_max = sz
    ranks = np.empty(list_items.shape[0], dtype=np.int64)
    idcg = np.empty(n_users, dtype=np.float64)
    scores_buf = np.empty(n_items_max, dtype=np.float64)
    for u in range(n_users):
        lo = list_off[u]
        hi = list_off[u + 1]
        sz = hi - lo
        for j in range(sz):
            scores_buf[j] = -item_scores[list_items[lo + j]]
        order = np.argsort(scores_buf[:sz], kind="mergesort")
        for r in range(sz):
            ranks[lo + order[r]] = r + 1
        npos = 0
        for j in range(sz):
            npos += list_labels[lo + j]
        g = 0.0
        for r in range(1, npos + 1):
            g += 1.0 / np.log2(1.0 + r)
        idcg[u] = g if g > 0.0 else 1.0
    for p in range(pair_pos_idx.shape[0]):
        u = pair_user[p]
        ri = ranks[pair_pos_idx[p]]
        rj = ranks[pair_neg_idx[p]]
        d = 1.0 / np.log2(1.0 + ri) - 1.0 / np.log2(1.0 + rj)
        deltas[p] = abs(d) / idcg[u]


def _lambdarank_deltas_np(item_scores, list_items, list_labels, list_off,
                          pair_pos_idx, pair_neg_idx, pair_user, deltas):
    n_users = list_off.shape[0] - 1
    ranks = np.empty(list_items.shape[0], dtype=np.int64)
    idcg = np.empty(n_users, dtype=np.float64)
    for u in range(n_users):
        lo, hi = list_off[u], list_off[u + 1]
        scores = item_scores[list_items[lo:hi]]
        order = np.argsort(-scores, kind="mergesort")
        r = np.empty(hi - lo, dtype=np.int64)
        r[order] = np.arange(1, hi - lo + 1)
        ranks[lo:hi] = r
        npos = int(list_labels[lo:hi].sum())
        g = np.sum(1.0 / np.log2(1.0 + np.arange(1, npos + 1)))
        idcg[u] = g if g > 0 else 1.0
    disc_i = 1.0 / np.log2(1.0 + ranks[pair_pos_idx])
    disc_j = 1.0 / np.log2(1.0 + ranks[pair_neg_idx])
    deltas[:] = np.abs(disc_i - disc_j) / idcg[pair_user]


def lambdarank_pair_deltas(item_scores, list_items, list_labels, list_off,
                           pair_pos_idx, pair_neg_idx, pair_user):
    """|delta-NDCG| of swapping each (pos, neg) pair within its owner's list.

    A user's list is the distinct items appearing in their pairs; gains are
    binary (positive item = 1) and ranks come from sorting the list by the
    current scores (descending, stable).  ``pair_pos_idx``/``pair_neg_idx``
    index into the flattened ``list_items`` array.
    """
    deltas = np.empty(pair_pos_idx.shape[0], dtype=np.float64)
    item_scores = np.ascontiguousarray(item_scores, dtype=np.float64)
    list_items = np.ascontiguousarray(list_items, dtype=np.int64)
    list_labels = np.ascontiguousarray(list_labels, dtype=np.int64)
    list_off = np.ascontiguousarray(list_off, dtype=np.int64)
    pair_pos_idx = np.ascontiguousarray(pair_pos_idx, dtype=np.int64)
    pair_neg_idx = np.ascontiguousarray(pair_neg_idx, dtype=np.int64)
    pair_user = np.ascontiguousarray(pair_user, dtype=np.int64)
    if USE_NUMBA:
        _lambdarank_deltas_jit(item_scores, list_items, list_labels, list_off,
                               pair_pos_idx, pair_neg_idx, pair_user, deltas)
    else:
        _lambdarank_deltas_np(item_scores, list_items, list_labels, list_off,
                              pair_pos_idx, pair_neg_idx, pair_user, deltas)
    return deltas
