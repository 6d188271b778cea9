"""Benchmark the numba kernels against their pure-numpy fallbacks.

Run: python3 bench/bench_kernels.py [--users N] [--repeats R]

Both code paths live in cavrec._kernels; this script calls the jitted and
numpy implementations directly so one process can time both (the
CAVREC_NO_NUMBA env flag flips which one the package uses in production).
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from cavrec import _kernels


def build_inputs(num_users: int, rng: np.random.Generator):
    pos_counts = rng.integers(2, 30, size=num_users)
    neg_counts = rng.integers(5, 80, size=num_users)
    pos_off = np.concatenate([[0], np.cumsum(pos_counts)]).astype(np.int64)
    neg_off = np.concatenate([[0], np.cumsum(neg_counts)]).astype(np.int64)
    pos_scores = rng.normal(size=pos_off[-1])
    neg_scores = rng.normal(size=neg_off[-1])
    return pos_scores, neg_scores, pos_off, neg_off


def build_lambda_inputs(num_users: int, rng: np.random.Generator):
    list_items, list_labels, list_off = [], [], [0]
    ppos, pneg, puser = [], [], []
    base = 0
    for u in range(num_users):
        npos = int(rng.integers(2, 15))
        nneg = int(rng.integers(5, 40))
        items = rng.choice(5000, size=npos + nneg, replace=False)
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
    scores = rng.normal(size=5000)
    return (scores, np.concatenate(list_items), np.concatenate(list_labels),
            np.asarray(list_off, dtype=np.int64),
            np.asarray(ppos, dtype=np.int64), np.asarray(pneg, dtype=np.int64),
            np.asarray(puser, dtype=np.int64))


def timeit(fn, args, repeats: int) -> float:
    fn(*args)          # warmup (includes jit compilation)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--users", type=int, default=2000)
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    print(f"numba available and enabled: {_kernels.USE_NUMBA}")
    pos_scores, neg_scores, pos_off, neg_off = build_inputs(args.users, rng)
    n_users = pos_off.size - 1
    bufs = tuple(np.zeros(n_users, dtype=np.int64) for _ in range(3))
    pair_args = (pos_scores, neg_scores, pos_off, neg_off) + bufs
    rows = []
    if _kernels.USE_NUMBA:
        rows.append(("pair_order_counts/numba",
                     timeit(_kernels._pair_counts_jit, pair_args, args.repeats)))
    rows.append(("pair_order_counts/numpy",
                 timeit(_kernels._pair_counts_np, pair_args, args.repeats)))

    lam_in = build_lambda_inputs(min(args.users, 500), rng)
    deltas = np.empty(lam_in[4].size, dtype=np.float64)
    lam_args = lam_in + (deltas,)
    if _kernels.USE_NUMBA:
        rows.append(("lambdarank_pair_deltas/numba",
                     timeit(_kernels._lambdarank_deltas_jit, lam_args,
                            args.repeats)))
    rows.append(("lambdarank_pair_deltas/numpy",
                 timeit(_kernels._lambdarank_deltas_np, lam_args,
                        args.repeats)))

    width = max(len(name) for name, _ in rows)
    for name, sec in rows:
        print(f"{name:<{width}}  {sec * 1e3:9.3f} ms/call")


if __name__ == "__main__":
    main()
