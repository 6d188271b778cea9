import numpy as np
import pytest

from cavrec import _kernels


def random_csr(rng, n_users, max_pos=12, max_neg=25):
    pos_counts = rng.integers(0, max_pos, size=n_users)
    neg_counts = rng.integers(0, max_neg, size=n_users)
    pos_off = np.concatenate([[0], np.cumsum(pos_counts)]).astype(np.int64)
    neg_off = np.concatenate([[0], np.cumsum(neg_counts)]).astype(np.int64)
    pos_scores = rng.choice(np.linspace(-1, 1, 21), size=pos_off[-1])
    neg_scores = rng.choice(np.linspace(-1, 1, 21), size=neg_off[-1])
    return pos_scores, neg_scores, pos_off, neg_off


def test_pair_counts_implementations_agree():
    rng = np.random.default_rng(0)
    for _ in range(20):
        args = random_csr(rng, int(rng.integers(1, 30)))
        n = args[2].size - 1
        out_a = tuple(np.zeros(n, dtype=np.int64) for _ in range(3))
        out_b = tuple(np.zeros(n, dtype=np.int64) for _ in range(3))
        _kernels._pair_counts_np(*args, *out_a)
        if _kernels.USE_NUMBA:
            _kernels._pair_counts_jit(*args, *out_b)
            for a, b in zip(out_a, out_b):
                np.testing.assert_array_equal(a, b)


def test_pair_counts_brute_force():
    rng = np.random.default_rng(1)
    args = random_csr(rng, 8)
    pos_scores, neg_scores, pos_off, neg_off = args
    correct, ties, total = _kernels.pair_order_counts(*args)
    for u in range(8):
        sp = pos_scores[pos_off[u]:pos_off[u + 1]]
        sn = neg_scores[neg_off[u]:neg_off[u + 1]]
        c = sum(1 for a in sp for b in sn if a > b)
        t = sum(1 for a in sp for b in sn if a == b)
        assert correct[u] == c and ties[u] == t
        assert total[u] == sp.size * sn.size


def lambda_inputs(rng, n_users=6):
    list_items, list_labels, list_off = [], [], [0]
    ppos, pneg, puser = [], [], []
    base = 0
    for u in range(n_users):
        npos = int(rng.integers(1, 5))
        nneg = int(rng.integers(1, 8))
        items = rng.choice(200, size=npos + nneg, replace=False)
        labels = np.concatenate([np.ones(npos, dtype=np.int64),
                                 np.zeros(nneg, dtype=np.int64)])
        for p in range(npos):
            for q in range(nneg):
                ppos.append(base + p)
                pneg.append(base + npos + q)
                puser.append(u)
        list_items.append(items)
        list_labels.append(labels)
        base += npos + nneg
        list_off.append(base)
    scores = rng.normal(size=200)
    return (scores, np.concatenate(list_items), np.concatenate(list_labels),
            np.asarray(list_off, dtype=np.int64),
            np.asarray(ppos, dtype=np.int64), np.asarray(pneg, dtype=np.int64),
            np.asarray(puser, dtype=np.int64))


def test_lambda_deltas_implementations_agree():
    rng = np.random.default_rng(2)
    for _ in range(10):
        args = lambda_inputs(rng)
        a = np.empty(args[4].size)
        b = np.empty(args[4].size)
        _kernels._lambdarank_deltas_np(*args, a)
        if _kernels.USE_NUMBA:
            _kernels._lambdarank_deltas_jit(*args, b)
            np.testing.assert_allclose(a, b, rtol=1e-12)


def test_lambda_deltas_manual_case():
    # one user, items scored so the positive ranks 2nd of 3; swapping with
    # the rank-1 negative changes DCG by |1/log2(3) - 1/log2(2)| / idcg
    scores = np.array([0.5, 0.9, 0.1])
    list_items = np.array([0, 1, 2], dtype=np.int64)
    list_labels = np.array([1, 0, 0], dtype=np.int64)
    list_off = np.array([0, 3], dtype=np.int64)
    ppos = np.array([0, 0], dtype=np.int64)
    pneg = np.array([1, 2], dtype=np.int64)
    puser = np.array([0, 0], dtype=np.int64)
    deltas = _kernels.lambdarank_pair_deltas(scores, list_items, list_labels,
                                             list_off, ppos, pneg, puser)
    idcg = 1.0   # one positive, best rank 1
    d1 = abs(1 / np.log2(3) - 1 / np.log2(2)) / idcg
    d2 = abs(1 / np.log2(3) - 1 / np.log2(4)) / idcg
    np.testing.assert_allclose(deltas, [d1, d2])


def test_empty_users_are_zero():
    pos_off = np.array([0, 0, 2], dtype=np.int64)
    neg_off = np.array([0, 3, 3], dtype=np.int64)
    correct, ties, total = _kernels.pair_order_counts(
        np.array([1.0, 2.0]), np.array([0.0, 0.5, 1.5]), pos_off, neg_off)
    assert total[0] == 0 and total[1] == 0


@pytest.mark.skipif(not _kernels.USE_NUMBA, reason="numba disabled")
def test_numba_flag_is_honored():
    import subprocess
    import sys
    code = ("import os; os.environ['CAVREC_NO_NUMBA']='1'; "
            "from cavrec import _kernels; print(_kernels.USE_NUMBA)")
    out = subprocess.run([sys.executable, "-c", code], capture_output=True,
                         text=True, check=True)
    assert out.stdout.strip() == "False"
