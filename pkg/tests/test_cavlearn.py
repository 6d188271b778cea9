import numpy as np
import pytest

from cavrec.cavlearn import (CAV, EmptyExamplesError, EvalPairs,
                             LabeledExamples, PairSet,
                             UndefinedQualityError, assign_user_sense,
                             build_examples, cav_quality, cav_score,
                             em_sense_cavs, em_sense_from_pairs, eval_pairs,
                             fit_personal_threshold, logistic_loss_grad,
                             quality_from_scores, ranknet_loss_grad,
                             select_sense_count, train_cav,
                             train_cav_lambdarank, train_cav_logistic,
                             train_cav_ranknet)
from cavrec.core import Dataset, TagView


def two_tag_dataset():
    """6 items on a line; users tag high-x items 'big', low-x items 'small'."""
    reprs = np.array([[0.0, 1], [0.2, 1], [0.4, 1], [0.6, 1], [0.8, 1], [1.0, 1]])
    users, items, tags = [], [], []
    for u in range(4):
        for i in range(6):
            users.append(u)
            items.append(i)
            tags.append(0 if i >= 3 else 1)
    rating_users = users * 1
    ds = Dataset(num_users=4, num_items=6,
                 rating_users=rating_users, rating_items=items * 1,
                 rating_values=[3.0] * len(items),
                 tag_users=users, tag_items=items, tag_ids=tags,
                 tag_vocab=("big", "small"))
    return ds, reprs


# --- example construction --------------------------------------------------

def test_eval_pairs_counts():
    ds, _ = two_tag_dataset()
    ep = eval_pairs(ds, 0)
    assert ep.user_ids.size == 4
    assert ep.n_pairs == 4 * 3 * 3   # 3 positives x 3 negatives per user


def test_build_examples_structure():
    ds, _ = two_tag_dataset()
    ex, pairs = build_examples(ds, 0, neg_ratio=2, rng=np.random.default_rng(0))
    assert set(np.unique(ex.labels)) == {-1, 1}
    assert pairs.n_pairs == 4 * 3 * 2
    # every pair is (tagged, untagged)
    assert np.all(pairs.pos >= 3) and np.all(pairs.neg < 3)
    with pytest.raises(ValueError):
        build_examples(ds, 0, neg_ratio=0, rng=np.random.default_rng(0))


def test_build_examples_empty_tag():
    ds, _ = two_tag_dataset()
    empty = Dataset(num_users=ds.num_users, num_items=ds.num_items,
                    rating_users=ds.rating_users, rating_items=ds.rating_items,
                    rating_values=ds.rating_values, tag_users=[], tag_items=[],
                    tag_ids=[], tag_vocab=ds.tag_vocab)
    with pytest.raises(EmptyExamplesError):
        build_examples(empty, 0, 1, np.random.default_rng(0))


# --- scoring and quality -----------------------------------------------------

def test_cav_score_and_cosine():
    cav = CAV(tag=0, direction=np.array([2.0, 0.0]))
    reprs = np.array([[1.0, 0.0], [0.0, 3.0], [1.0, 1.0]])
    np.testing.assert_allclose(cav_score(cav, reprs), [2.0, 0.0, 2.0])
    cos = cav_score(cav, reprs, cosine=True)
    np.testing.assert_allclose(cos, [1.0, 0.0, 1 / np.sqrt(2)])
    with pytest.raises(ValueError):
        cav_score(cav, np.ones((2, 3)))


def test_quality_tie_counts_as_correct():
    ep = EvalPairs(user_ids=np.array([0]), pos_items=np.array([0, 1]),
                   neg_items=np.array([2, 3]),
                   pos_off=np.array([0, 2]), neg_off=np.array([0, 2]))
    scores = np.array([1.0, 0.5, 0.5, 2.0])
    # pairs: (1>.5 ok)(1<2 bad)(.5=.5 tie->ok)(.5<2 bad)
    assert quality_from_scores(scores, ep) == pytest.approx(0.5)


def test_quality_negation_relation():
    # with no ties, Q(w) + Q(-w) = 1
    rng = np.random.default_rng(0)
    reprs = rng.normal(size=(30, 4))
    perm = rng.permutation(30)   # disjoint pos/neg items -> no tied scores
    ep = EvalPairs(user_ids=np.arange(3),
                   pos_items=perm[:9], neg_items=perm[9:21],
                   pos_off=np.array([0, 3, 6, 9]), neg_off=np.array([0, 4, 8, 12]))
    w = rng.normal(size=4)
    q_fwd = quality_from_scores(reprs @ w, ep)
    q_bwd = quality_from_scores(reprs @ -w, ep)
    assert q_fwd + q_bwd == pytest.approx(1.0)


def test_quality_undefined_without_pairs():
    ep = EvalPairs(user_ids=np.array([0]), pos_items=np.array([1]),
                   neg_items=np.empty(0, dtype=np.int64),
                   pos_off=np.array([0, 1]), neg_off=np.array([0, 0]))
    with pytest.raises(UndefinedQualityError):
        quality_from_scores(np.zeros(5), ep)


# --- loss gradients ----------------------------------------------------------

def finite_diff(fn, w, eps=1e-7):
    g = np.empty_like(w)
    for j in range(w.size):
        wp, wm = w.copy(), w.copy()
        wp[j] += eps
        wm[j] -= eps
        g[j] = (fn(wp) - fn(wm)) / (2 * eps)
    return g


def test_logistic_initial_loss_and_gradient():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(25, 5))
    y = np.where(rng.uniform(size=25) < 0.5, 1.0, -1.0)
    loss0, _ = logistic_loss_grad(np.zeros(5), X, y, lam=0.7)
    assert loss0 == pytest.approx(25 * np.log(2))
    w = rng.normal(size=5)
    _, g = logistic_loss_grad(w, X, y, lam=0.7)
    fd = finite_diff(lambda v: logistic_loss_grad(v, X, y, 0.7)[0], w)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)


def test_ranknet_initial_loss_and_gradient():
    rng = np.random.default_rng(2)
    Xdiff = rng.normal(size=(18, 4))
    weights = rng.uniform(0.5, 2.0, size=18)
    loss0, _ = ranknet_loss_grad(np.zeros(4), Xdiff, lam=0.3)
    assert loss0 == pytest.approx(18 * np.log(2))
    w = rng.normal(size=4)
    for wt in (None, weights):
        _, g = ranknet_loss_grad(w, Xdiff, 0.3, wt)
        fd = finite_diff(lambda v: ranknet_loss_grad(v, Xdiff, 0.3, wt)[0], w)
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)


# --- trainers ----------------------------------------------------------------

def test_trainers_separate_linear_toy():
    ds, reprs = two_tag_dataset()
    rng = np.random.default_rng(3)
    for trainer in ("logistic", "ranknet", "lambdarank"):
        cav = train_cav(trainer, ds, 0, reprs, rng, lam=0.01, max_iters=400)
        ep = eval_pairs(ds, 0)
        assert cav_quality(cav, ep, reprs) == 1.0, trainer
        # "big" direction must increase along the first coordinate
        assert cav.direction[0] > 0


def test_strong_regularization_shrinks_direction():
    ds, reprs = two_tag_dataset()
    rng = np.random.default_rng(4)
    small = train_cav("ranknet", ds, 0, reprs, np.random.default_rng(4),
                      lam=0.01, max_iters=300)
    big = train_cav("ranknet", ds, 0, reprs, rng, lam=1e6, max_iters=300)
    assert np.linalg.norm(big.direction) < 1e-3 * np.linalg.norm(small.direction)


def test_logistic_needs_both_classes():
    ex = LabeledExamples(users=np.zeros(3, dtype=np.int64),
                         items=np.arange(3), labels=np.ones(3, dtype=np.int64))
    with pytest.raises(EmptyExamplesError):
        train_cav_logistic(ex, np.eye(3), tag=0)


def test_pair_trainers_need_pairs():
    empty = PairSet(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64),
                    np.empty(0, dtype=np.int64))
    with pytest.raises(EmptyExamplesError):
        train_cav_ranknet(empty, np.eye(2), tag=0)
    with pytest.raises(EmptyExamplesError):
        train_cav_lambdarank(empty, np.eye(2), tag=0)
    with pytest.raises(ValueError):
        train_cav("nearest", two_tag_dataset()[0], 0, np.eye(6),
                  np.random.default_rng(0))


# --- personal thresholds -------------------------------------------------------

def brute_force_threshold(pos_scores, neg_scores):
    """Best achievable misclassification count over all real thresholds."""
    cands = np.unique(np.concatenate([pos_scores, neg_scores]))
    # midpoints between distinct values plus outside points
    taus = np.concatenate([[cands[0] - 1.0], (cands[:-1] + cands[1:]) / 2.0,
                           [cands[-1] + 1.0], cands])
    best = None
    for tau in taus:
        err = int(np.sum(pos_scores < tau) + np.sum(neg_scores >= tau))
        best = err if best is None else min(best, err)
    return best


def test_threshold_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(5)
    for trial in range(1000):
        npos = int(rng.integers(1, 11))
        nneg = int(rng.integers(0, 11))
        scores = rng.choice(np.linspace(-1, 1, 9), size=npos + nneg)
        reprs = scores[:, None]   # direction (1,) makes scores the projections
        cav = CAV(tag=0, direction=np.array([1.0]))
        view = TagView(user=0, tag=0, positives=np.arange(npos),
                       negatives=np.arange(npos, npos + nneg))
        th = fit_personal_threshold(cav, view, reprs)
        pos_s, neg_s = scores[:npos], scores[npos:]
        got = int(np.sum(pos_s < th.tau) + np.sum(neg_s >= th.tau))
        assert got == th.misclassifications
        if nneg == 0:
            assert th.misclassifications == 0
            assert np.all(pos_s >= th.tau)
        else:
            assert th.misclassifications == brute_force_threshold(pos_s, neg_s)


def test_threshold_prefers_widest_gap():
    # pos {1.0}, neg {0.0}: zero-error region is (0, 1]; midpoint of the gap
    cav = CAV(tag=0, direction=np.array([1.0]))
    view = TagView(user=0, tag=0, positives=np.array([0]), negatives=np.array([1]))
    reprs = np.array([[1.0], [0.0]])
    th = fit_personal_threshold(cav, view, reprs)
    assert th.tau == pytest.approx(0.5)
    assert th.misclassifications == 0


def test_threshold_requires_positives():
    cav = CAV(tag=0, direction=np.array([1.0]))
    view = TagView(user=0, tag=0, positives=np.empty(0, dtype=np.int64),
                   negatives=np.array([1]))
    with pytest.raises(EmptyExamplesError):
        fit_personal_threshold(cav, view, np.ones((2, 1)))


# --- EM sense disentangling ----------------------------------------------------

def sense_dataset(n_users=24, n_items=40, seed=6):
    """Two user populations tag the same word for opposite coordinates."""
    rng = np.random.default_rng(seed)
    reprs = rng.uniform(0, 1, size=(n_items, 2))
    users, items, tags = [], [], []
    r_users, r_items = [], []
    for u in range(n_users):
        coord = 0 if u < n_users // 2 else 1
        rated = rng.choice(n_items, size=20, replace=False)
        for i in rated:
            r_users.append(u)
            r_items.append(i)
            users.append(u)
            items.append(int(i))
            tags.append(0 if reprs[i, coord] > 0.5 else 1)
    ds = Dataset(num_users=n_users, num_items=n_items, rating_users=r_users,
                 rating_items=r_items, rating_values=[3.0] * len(r_users),
                 tag_users=users, tag_items=items, tag_ids=tags,
                 tag_vocab=("high", "low"))
    return ds, reprs


def test_em_recovers_two_senses():
    ds, reprs = sense_dataset()
    rng = np.random.default_rng(7)
    model = em_sense_cavs(ds, 0, s=2, trainer="ranknet", reprs=reprs, rng=rng,
                          lam=0.01, max_iters=300)
    assign = np.array([model.user_assignment[u] for u in range(24)])
    groups = (assign[:12], assign[12:])
    # each true population lands (almost) entirely in one cluster...
    purity = np.mean([max(np.mean(g == 0), np.mean(g == 1)) for g in groups])
    assert purity >= 0.9
    # ...and those clusters differ
    assert np.bincount(assign[:12]).argmax() != np.bincount(assign[12:]).argmax()
    assert model.avg_quality > 0.95
    assert all(b >= a for a, b in zip(model.quality_history,
                                      model.quality_history[1:]))


def test_em_single_sense_matches_plain_training_quality():
    ds, reprs = two_tag_dataset()
    model = em_sense_cavs(ds, 0, s=1, trainer="ranknet", reprs=reprs,
                          rng=np.random.default_rng(8), lam=0.01, max_iters=300)
    assert model.num_senses == 1
    assert model.avg_quality == pytest.approx(1.0)


def test_select_sense_count_stops_when_gain_small():
    ds, reprs = two_tag_dataset()   # objective tag: one sense suffices
    model = select_sense_count(ds, 0, s_max=3, eps=0.01, trainer="ranknet",
                               reprs=reprs, rng=np.random.default_rng(9),
                               lam=0.01, max_iters=300)
    assert model.num_senses == 1


def test_select_sense_count_finds_two_senses():
    ds, reprs = sense_dataset()
    model = select_sense_count(ds, 0, s_max=3, eps=0.01, trainer="ranknet",
                               reprs=reprs, rng=np.random.default_rng(10),
                               lam=0.01, max_iters=300)
    assert model.num_senses == 2


def test_assign_user_sense_fallback_and_pick():
    ds, reprs = sense_dataset()
    model = em_sense_cavs(ds, 0, s=2, trainer="ranknet", reprs=reprs,
                          rng=np.random.default_rng(11), lam=0.01, max_iters=300)
    # a user's own eval pairs map back to their training assignment
    ep_u = eval_pairs(ds, 0, users=np.array([0]))
    assert assign_user_sense(model, ep_u, reprs) == model.user_assignment[0]
    empty = EvalPairs(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64),
                      np.empty(0, dtype=np.int64), np.array([0]), np.array([0]))
    assert assign_user_sense(model, empty, reprs) == 0


def test_em_from_explicit_pairs_recovers_senses():
    rng = np.random.default_rng(12)
    reprs = rng.uniform(0, 1, size=(40, 2))
    users, pos, neg = [], [], []
    for u in range(16):
        coord = u % 2
        for _ in range(25):
            i, j = rng.choice(40, size=2, replace=False)
            if reprs[i, coord] < reprs[j, coord]:
                i, j = j, i
            users.append(u)
            pos.append(int(i))
            neg.append(int(j))
    pairs = PairSet(np.asarray(users), np.asarray(pos), np.asarray(neg))
    model = em_sense_from_pairs(pairs, reprs, s=2, trainer="ranknet",
                                rng=np.random.default_rng(13), lam=0.01,
                                max_iters=300)
    assign = np.array([model.user_assignment[u] for u in range(16)])
    even, odd = assign[::2], assign[1::2]
    purity = (max(np.mean(even == 0), np.mean(even == 1))
              + max(np.mean(odd == 0), np.mean(odd == 1))) / 2
    assert purity >= 0.9
    assert np.bincount(even).argmax() != np.bincount(odd).argmax()
    assert model.avg_quality > 0.9
