"""Acceptance gate: one test per shipping criterion.

Each test prints a single ``CRITERION n: PASS`` line on success (pytest shows
the failure otherwise).  Criteria 9 and 10 need the public MovieLens-20M and
soft-attribute assessment files; point CAVREC_ML_DIR at a directory holding
ratings.csv / tags.csv / movies.csv and CAVREC_SOFTATTR_FILE at the
assessment csv to enable them, otherwise they skip.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest

from cavrec import cli
from cavrec.cavlearn import (CAV, em_sense_cavs, fit_personal_threshold,
                             logistic_loss_grad, quality_from_scores,
                             ranknet_loss_grad)
from cavrec.cavlearn import EvalPairs
from cavrec.cftrain import init_two_tower, train_wals, two_tower_loss_and_grads
from cavrec.core import Dataset, TagView, validate_dataset
from cavrec.critique import slate_metrics
from cavrec.evalmetrics import (GammaCounts, RaterAssessment,
                                comparisons_from_assessment,
                                spearman_vs_ground_truth)
from cavrec.synthgen import SynthConfig, generate_dataset

ML_DIR = os.environ.get("CAVREC_ML_DIR")
SOFTATTR_FILE = os.environ.get("CAVREC_SOFTATTR_FILE")


def _ml_files():
    if not ML_DIR:
        return None
    files = {k: str(Path(ML_DIR) / f"{k}.csv")
             for k in ("ratings", "tags", "movies")}
    if all(Path(p).exists() for p in files.values()):
        return files
    return None


needs_movielens = pytest.mark.skipif(
    _ml_files() is None, reason="MovieLens data not provided (CAVREC_ML_DIR)")
needs_softattr = pytest.mark.skipif(
    _ml_files() is None or not (SOFTATTR_FILE and Path(SOFTATTR_FILE).exists()),
    reason="soft-attribute assessments not provided (CAVREC_SOFTATTR_FILE)")


def _value(rows, attribute, method, metric):
    for r in rows:
        if (r["attribute"], r["method"], r["metric"]) == (attribute, method,
                                                          metric):
            return r["value"]
    raise KeyError((attribute, method, metric))


def _report(n, ok, detail=""):
    print(f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())
    assert ok, detail


# --- criterion 1: metric unit suite (exact hand cases) -----------------------

def test_criterion_01_metric_unit_suite():
    checks = []
    checks.append(GammaCounts(ns=0, nd=0, nss=7, ndd=1).gamma == 0.75)

    reprs = np.linspace(0, 1, 8)[:, None]
    cav = CAV(tag=0, direction=np.array([1.0]))
    truth = np.arange(8, dtype=float)
    checks.append(spearman_vs_ground_truth(cav, truth, reprs) == 1.0)
    checks.append(spearman_vs_ground_truth(cav, -truth, reprs) == -1.0)

    a = RaterAssessment(rater=0, attribute=0, anchor=2, more=(0, 1),
                        same=(2, 3, 4, 5, 6), less=(7, 8, 9, 10))
    comp = comparisons_from_assessment(a)
    checks.append(len(comp.strong) + len(comp.weak) + len(comp.indifferent) == 55)
    checks.append(len(comp.strong) == 8)

    ep = EvalPairs(user_ids=np.array([0]), pos_items=np.array([0, 1]),
                   neg_items=np.array([2, 3]),
                   pos_off=np.array([0, 2]), neg_off=np.array([0, 2]))
    scores = np.array([1.0, 0.5, 0.5, 2.0])   # one win, one tie, two losses
    checks.append(quality_from_scores(scores, ep) == 0.5)

    ratings = np.array([5.0, 1.0, 1.0, 5.0])
    m = slate_metrics(np.array([1, 2, 0]), ratings)
    checks.append(m["mrr"] == pytest.approx(1 / 3))
    checks.append(slate_metrics(np.array([0]), ratings)["ndcg"] == 1.0)
    checks.append(slate_metrics(np.array([1]), ratings)["ndcg"] == 0.0)
    _report(1, all(checks), f"{sum(checks)}/{len(checks)} exact hand cases")


# --- criterion 2: oracle equivalence -----------------------------------------

def _threshold_errors(tau, pos, neg):
    return int(np.sum(pos < tau) + np.sum(neg >= tau))


def test_criterion_02_oracle_equivalence():
    rng = np.random.default_rng(0)
    cav = CAV(tag=0, direction=np.array([1.0]))
    for _ in range(1000):
        npos = int(rng.integers(1, 11))
        nneg = int(rng.integers(0, 10))
        scores = rng.choice(np.linspace(-1, 1, 9), size=npos + nneg)
        view = TagView(user=0, tag=0, positives=np.arange(npos),
                       negatives=np.arange(npos, npos + nneg))
        th = fit_personal_threshold(cav, view, scores[:, None])
        pos, neg = scores[:npos], scores[npos:]
        assert _threshold_errors(th.tau, pos, neg) == th.misclassifications
        if nneg:
            cands = np.unique(scores)
            taus = np.concatenate([[cands[0] - 1], (cands[:-1] + cands[1:]) / 2,
                                   [cands[-1] + 1], cands])
            brute = min(_threshold_errors(t, pos, neg) for t in taus)
            assert th.misclassifications == brute

    def fd(fn, w, eps=1e-6):
        g = np.empty_like(w)
        for j in range(w.size):
            wp, wm = w.copy(), w.copy()
            wp[j] += eps
            wm[j] -= eps
            g[j] = (fn(wp) - fn(wm)) / (2 * eps)
        return g

    X = rng.normal(size=(30, 6))
    y = np.where(rng.uniform(size=30) < 0.5, 1.0, -1.0)
    w = rng.normal(size=6)
    _, g = logistic_loss_grad(w, X, y, 0.5)
    assert np.allclose(g, fd(lambda v: logistic_loss_grad(v, X, y, 0.5)[0], w),
                       rtol=1e-4)

    Xd = rng.normal(size=(25, 6))
    wt = rng.uniform(0.5, 2.0, size=25)   # LambdaRank = RankNet with frozen
    for weights in (None, wt):            # |delta-NDCG| pair weights
        _, g = ranknet_loss_grad(w, Xd, 0.5, weights)
        assert np.allclose(
            g, fd(lambda v: ranknet_loss_grad(v, Xd, 0.5, weights)[0], w),
            rtol=1e-4)

    model = init_two_tower(n=5, m=6, d=4, num_layers=3, kappa=0.1, rho=1e-3,
                           rng=rng)
    for k in model.params:   # O(1) weights keep ReLU kinks away from the point
        model.params[k] = rng.normal(size=model.params[k].shape)
    users = np.array([0, 1, 2, 4])
    items = np.array([0, 2, 5, 3])
    values = rng.normal(size=4)
    _, grads = two_tower_loss_and_grads(model, users, items, values)
    for name, g in grads.items():
        flat = model.params[name].reshape(-1)
        for j in rng.choice(flat.size, size=min(6, flat.size), replace=False):
            orig = flat[j]
            flat[j] = orig + 1e-6
            lp, _ = two_tower_loss_and_grads(model, users, items, values)
            flat[j] = orig - 1e-6
            lm, _ = two_tower_loss_and_grads(model, users, items, values)
            flat[j] = orig
            num = (lp - lm) / 2e-6
            assert num == pytest.approx(g.reshape(-1)[j], rel=1e-4, abs=1e-8)
    _report(2, True, "threshold oracle (1000 instances) + gradient checks")


# --- criterion 3: structural invariants --------------------------------------

def _tiny_sense_cfg(seed=0):
    return SynthConfig(n=60, m=60, dims=5, latent_dims=2, mixture_k=4,
                       max_ratings_per_user=30, tag_zero_weight=0.2,
                       subjectivity="sense", sense_groups=((2, 3),), seed=seed)


def test_criterion_03_structural_invariants():
    ds, _ = generate_dataset(_tiny_sense_cfg())
    assert validate_dataset(ds).ok    # tag triples subset of rated pairs

    rng = np.random.default_rng(0)
    users, items = np.divmod(rng.choice(20 * 25, size=300, replace=False), 25)
    vals = rng.uniform(1, 5, size=300)
    rds = Dataset(num_users=20, num_items=25, rating_users=users,
                  rating_items=items, rating_values=vals, tag_users=[],
                  tag_items=[], tag_ids=[], tag_vocab=())
    wals = train_wals(rds, d=3, kappa=0.5, iterations=6, val_fraction=0.0,
                      rng=np.random.default_rng(1))
    hist = np.asarray(wals.objective_history)
    assert np.all(np.diff(hist) <= 1e-8 * np.abs(hist[:-1]))

    reprs = np.random.default_rng(2).uniform(size=(60, 5))
    em = em_sense_cavs(ds, 0, s=2, trainer="ranknet", reprs=reprs,
                       rng=np.random.default_rng(3), lam=0.1, max_iters=150,
                       max_em_iters=10)
    qh = em.quality_history
    assert all(b >= a for a, b in zip(qh, qh[1:]))   # monotone, terminated

    cfg_a = cli.load_config(experiment="synth-degree", seed=7, out="/tmp/acc3a")
    cfg_b = cli.load_config(experiment="synth-degree", seed=7, out="/tmp/acc3b")
    for cfg in (cfg_a, cfg_b):
        cfg["synth"].update(n=120, m=90, dims=5, latent_dims=2, mixture_k=4,
                            max_ratings_per_user=40, tag_zero_weight=0.2)
        cfg["cf"] = {"d": 6, "iterations": 3, "kappa": 1.0}
        cfg["cav_opt"] = {"max_iters": 120}
    assert cli.PIPELINES["synth-degree"](cfg_a, False) == \
        cli.PIPELINES["synth-degree"](cfg_b, False)
    _report(3, True, "WALS/EM monotonicity, tag subset, bit reproducibility")


# --- criteria 4 & 7 share the synthetic objective run ------------------------

@pytest.fixture(scope="module")
def synth_objective_rows():
    cfg = cli.load_config(experiment="synth-objective", seed=0)
    t0 = time.monotonic()
    rows = cli.run_synth_cav_experiment(cfg, "synth-objective")
    return rows, time.monotonic() - t0


def test_criterion_04_objective_tag_learning(synth_objective_rows):
    rows, elapsed = synth_objective_rows
    soft_tags = sorted({r["attribute"] for r in rows
                        if r["attribute"].startswith("tag-")
                        and not r["attribute"].startswith("tag-rand")})
    accs = {m: np.mean([_value(rows, t, m, "Accur") for t in soft_tags])
            for m in ("LogRegr", "RankNet", "LambdaRank", "PITF")}
    sprs = {m: np.mean([_value(rows, t, m, "Sprmn") for t in soft_tags])
            for m in ("LogRegr", "RankNet")}
    ok = (accs["RankNet"] >= 0.85 and sprs["RankNet"] >= 0.45
          and accs["RankNet"] >= accs["LogRegr"] + 0.03
          and accs["LambdaRank"] >= accs["LogRegr"] + 0.03
          and sprs["RankNet"] >= sprs["LogRegr"]
          and accs["PITF"] < min(accs["LogRegr"], accs["RankNet"],
                                 accs["LambdaRank"])
          and elapsed < 300)
    _report(4, ok, f"Accur={ {k: round(v, 3) for k, v in accs.items()} } "
                   f"Sprmn={ {k: round(v, 3) for k, v in sprs.items()} } "
                   f"({elapsed:.0f}s)")


def test_criterion_07_irrelevant_tag_control(synth_objective_rows):
    rows, _ = synth_objective_rows
    accs = {m: _value(rows, "tag-rand0", m, "Accur")
            for m in ("LogRegr", "RankNet", "LambdaRank", "PITF")}
    ok = all(0.40 <= v <= 0.60 for v in accs.values())
    _report(7, ok, f"irrelevant-tag Accur={ {k: round(v, 3) for k, v in accs.items()} }")


# --- criterion 5: degree subjectivity ----------------------------------------

def test_criterion_05_degree_subjectivity():
    cfg = cli.load_config(experiment="synth-degree", seed=0)
    rows = cli.run_synth_cav_experiment(cfg, "synth-degree")
    tags = sorted({r["attribute"] for r in rows})
    accs = {m: np.mean([_value(rows, t, m, "Accur") for t in tags])
            for m in ("LogRegr", "RankNet", "LambdaRank")}
    ok = (accs["RankNet"] >= accs["LogRegr"] + 0.05
          and accs["LambdaRank"] >= accs["LogRegr"] + 0.05)
    _report(5, ok, f"Accur={ {k: round(v, 3) for k, v in accs.items()} }")


# --- criterion 6: sense subjectivity -----------------------------------------

def test_criterion_06_sense_subjectivity():
    cfg = cli.load_config(experiment="synth-sense", seed=0)
    rows = cli.run_synth_sense(cfg)
    sense_tag = "tag-S0"
    objective = sorted({r["attribute"] for r in rows
                        if r["attribute"] != sense_tag})
    em = _value(rows, sense_tag, "EM RankNet", "Accur")
    plain = _value(rows, sense_tag, "RankNet", "Accur")
    obj_gap = max(abs(_value(rows, t, "EM RankNet", "Accur")
                      - _value(rows, t, "RankNet", "Accur")) for t in objective)
    senses = {t: _value(rows, t, "EM RankNet", "Senses")
              for t in objective + [sense_tag]}
    agree = _value(rows, sense_tag, "EM RankNet", "SenseAgreement")
    ok = (em >= plain + 0.15 and obj_gap <= 0.03
          and all(senses[t] == 1 for t in objective)
          and senses[sense_tag] in (2, 3, 4) and agree >= 0.85)
    _report(6, ok, f"EM={em:.3f} plain={plain:.3f} obj_gap={obj_gap:.3f} "
                   f"senses={senses} agreement={agree:.3f}")


# --- criterion 8: critiquing sessions ----------------------------------------

def test_criterion_08_critiquing_sessions():
    cfg = cli.load_config(experiment="critique-synth", seed=0)
    t0 = time.monotonic()
    rows = cli.run_critique_synth(cfg)
    elapsed = time.monotonic() - t0
    T = cfg["critique"]["T"]

    def step(method, metric, t):
        for r in rows:
            if (r["method"], r["metric"], r["fold"]) == (method, metric, t):
                return r["value"]
        raise KeyError((method, metric, t))

    uau0, uauT = step("RankNet", "UAU", 0), step("RankNet", "UAU", T - 1)
    umu0, umuT = step("RankNet", "UMU", 0), step("RankNet", "UMU", T - 1)
    rel = (uauT - uau0) / abs(uau0)
    log_T = step("LogRegr", "UAU", T - 1)
    zero_rel = (step("RankNet a0=0", "UAU", T - 1)
                - step("RankNet a0=0", "UAU", 0))
    ok = (uauT >= uau0 and umuT >= umu0 and rel >= 0.10
          and uauT >= log_T and zero_rel == 0.0 and elapsed < 600)
    _report(8, ok, f"UAU {uau0:.3f}->{uauT:.3f} (+{rel * 100:.1f}%), "
                   f"UMU {umu0:.3f}->{umuT:.3f}, logistic end {log_T:.3f}, "
                   f"a0=0 delta {zero_rel:.4f} ({elapsed:.0f}s)")


# --- criteria 9-10: conditional on public data -------------------------------

@needs_movielens
def test_criterion_09_movielens_pipeline():
    files = _ml_files()
    cfg = cli.load_config(experiment="movielens-tags", seed=0)
    cfg["data"] = files
    rows = cli.run_movielens_tags(cfg)
    funnel = {r["metric"]: r["value"] for r in rows if r["method"] == "ingest"}
    mean_acc = _value(rows, "all", "RankNet", "MeanAccur")

    art_cfg = cli.load_config(experiment="movielens-artificial", seed=0)
    art_cfg["data"] = files
    art_rows = cli.run_movielens_artificial(art_cfg)
    meta_names = list(art_cfg["artificial"]["meta_groups"])
    em_gaps = [(_value(art_rows, n, "EM RankNet", "Accur")
                - _value(art_rows, n, "RankNet", "Accur")) for n in meta_names]
    odd = _value(art_rows, "odd-year", "RankNet", "Accur")
    ok = (abs(funnel["final_triples"] - 235_000) <= 25_000
          and abs(funnel["final_tags"] - 164) <= 20
          and abs(mean_acc - 0.803) <= 0.03
          and all(g >= 0.10 for g in em_gaps) and odd <= 0.60)
    _report(9, ok, f"funnel={funnel['final_triples']:.0f}/"
                   f"{funnel['final_tags']:.0f}, MeanAccur={mean_acc:.3f}, "
                   f"EM gaps={em_gaps}, odd-year={odd:.3f}")


@needs_softattr
def test_criterion_10_rater_evaluation():
    files = dict(_ml_files(), soft_attributes=SOFTATTR_FILE)
    cfg = cli.load_config(experiment="rater-eval-softattr", seed=0)
    cfg["data"] = files
    rows = cli.run_rater_eval_softattr(cfg)
    g_plain = _value(rows, "all", "RankNet", "Gamma")
    g_em = _value(rows, "all", "EM RankNet", "Gamma")

    cfg2 = cli.load_config(experiment="rater-eval-movielens", seed=0)
    cfg2["data"] = files
    rows2 = cli.run_rater_eval_movielens(cfg2)
    g_cross = _value(rows2, "all", "EM RankNet", "Gamma")
    ok = (abs(g_plain - 0.523) <= 0.05 and abs(g_em - 0.667) <= 0.05
          and abs(g_cross - 0.388) <= 0.06)
    _report(10, ok, f"G'={g_plain:.3f}, EM G'={g_em:.3f}, "
                    f"cross-corpus G'={g_cross:.3f}")
