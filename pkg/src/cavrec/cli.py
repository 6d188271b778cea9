"""Experiment orchestration.

Subcommands cover single pipeline stages (synth, train-cf, train-cav, eval,
critique) plus `run`, which executes a named experiment end to end and emits
metric CSVs shaped like the result tables, session traces, and a
reproducibility manifest.  `describe` prints the plan without computing.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import pitf_predict_accuracy, pitf_tag_scores, train_pitf
from .cavlearn import (DEFAULT_NEG_RATIO, CAV, assign_sense_from_pairs,
                       build_examples, eval_pairs, select_sense_count,
                       train_cav)
from .cftrain import (item_representations, load_model, save_model,
                      train_two_tower, train_wals, user_embeddings)
from .core import load_dataset, save_dataset, validate_dataset
from .critique import ALPHA0_GRID, make_user_sim, padded_metric, run_session
from .evalmetrics import (GammaCounts, comparisons_from_assessment,
                          gamma_counts, kfold_rater_eval, cav_score,
                          pairs_from_comparisons, sense_model_accuracy,
                          sense_partition_agreement, spearman_vs_ground_truth,
                          tag_accuracy)
from .ingest import (ArtificialTagSpec, build_title_index, load_movielens,
                     load_soft_attributes, make_artificial_tags, split_by_pair)
from .synthgen import SynthConfig, generate_dataset, user_utilities

log = logging.getLogger(__name__)

EXPERIMENTS = ("synth-objective", "synth-degree", "synth-sense",
               "movielens-tags", "movielens-artificial",
               "rater-eval-movielens", "rater-eval-softattr",
               "critique-synth", "critique-movielens")

METHOD_NAMES = {"logistic": "LogRegr", "ranknet": "RankNet",
                "lambdarank": "LambdaRank"}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: str):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


# --- configuration ----------------------------------------------------------

def _desk_defaults(experiment: str) -> dict:
    synth_base = {"n": 2000, "m": 1000, "dims": 8, "latent_dims": 3,
                  "tag_zero_weight": 0.2, "seed": 0}
    cf_base = {"d": 16, "iterations": 15, "kappa": 1.0}
    cav_opt = {"max_iters": 800}
    cfg: dict = {"experiment": experiment, "scale": "desk", "seed": 0,
                 "train_fraction": 0.75, "lam": 1.0, "cav_opt": dict(cav_opt)}
    if experiment == "synth-objective":
        cfg["synth"] = dict(synth_base, num_irrelevant_tags=1)
        cfg["cf"] = dict(cf_base)
        cfg["pitf"] = {"d": 16, "epochs": 30, "lr": 2e-4, "reg": 5e-5}
    elif experiment == "synth-degree":
        cfg["synth"] = dict(synth_base, subjectivity="degree",
                            degree_threshold_ranges=[[0.35, 0.5], [0.6, 0.75]])
        cfg["cf"] = dict(cf_base)
    elif experiment == "synth-sense":
        cfg["synth"] = dict(synth_base, subjectivity="sense",
                            sense_groups=[[3, 4, 5]])
        cfg["cf"] = dict(cf_base)
        cfg["em"] = {"s_max": 4, "eps": 0.01, "max_em_iters": 10}
        cfg["cav_opt"] = {"max_iters": 500}
    elif experiment == "critique-synth":
        # single-peaked utility with unconstrained peaks: users genuinely
        # disagree, so the generic start slate leaves room to critique into
        cfg["synth"] = dict(synth_base, n=1000, m=600, latent_dims=2,
                            utility_kind="single_peaked",
                            peak_floor_default=0.0)
        cfg["cf"] = dict(cf_base)
        cfg["critique"] = {"num_users": 500, "k": 10, "T": 25, "alpha0": 0.1}
    elif experiment in ("movielens-tags", "movielens-artificial",
                        "rater-eval-movielens", "rater-eval-softattr",
                        "critique-movielens"):
        cfg["data"] = {}
        cfg["cf"] = {"d": 32, "iterations": 10, "kappa": 250.0}
        if experiment == "movielens-artificial":
            cfg["artificial"] = {
                "genre_tags": ["comedy", "horror"], "odd_year_tag": True,
                "meta_groups": {"monsters": ["zombies", "ghosts", "vampires"]}}
        if experiment == "rater-eval-softattr":
            cfg["folds"] = 5
        if experiment == "critique-movielens":
            cfg["critique"] = {"num_users": 100, "k": 10, "T": 25,
                               "alpha0": 0.25, "min_ratings": 50}
    return cfg


def _full_scale(cfg: dict) -> dict:
    cfg = dict(cfg)
    if "synth" in cfg:
        cfg["synth"] = dict(cfg["synth"], n=50000, m=20000,
                            max_ratings_per_user=300)
        cfg["cf"] = dict(cfg["cf"], d=128, iterations=20)
    else:
        cfg["cf"] = dict(cfg["cf"], d=128, iterations=20)
    if "pitf" in cfg:
        cfg["pitf"] = dict(cfg["pitf"], d=64, epochs=100)
    return cfg


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, experiment=None, scale=None, seed=None,
                out=None) -> dict:
    user_cfg = {}
    if path is not None:
        try:
            user_cfg = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise StageError("config", str(exc))
    name = experiment or user_cfg.get("experiment")
    if name not in EXPERIMENTS:
        raise StageError("config", f"unknown experiment {name!r}; "
                         f"choose one of {', '.join(EXPERIMENTS)}")
    cfg = _merge(_desk_defaults(name), user_cfg)
    if scale:
        cfg["scale"] = scale
    if cfg.get("scale") == "full":
        cfg = _full_scale(cfg)
    if seed is not None:
        cfg["seed"] = seed
    if out is not None:
        cfg["out"] = str(out)
    if "synth" in cfg:
        cfg["synth"]["seed"] = cfg["seed"]
    return cfg


def _row(experiment, attribute, method, fold, metric, value):
    return {"experiment": experiment, "attribute": attribute, "method": method,
            "fold": fold, "metric": metric, "value": value}


def write_rows(rows, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["experiment", "attribute", "method", "fold", "metric",
                     "value"])
        for r in rows:
            wr.writerow([r["experiment"], r["attribute"], r["method"],
                         r["fold"], r["metric"], f"{r['value']:.6f}"])


def write_manifest(cfg: dict, out_dir, wall_time: float) -> None:
    canon = json.dumps(cfg, sort_keys=True)
    manifest = {
        "config": cfg,
        "config_sha256": hashlib.sha256(canon.encode()).hexdigest(),
        "seed": cfg["seed"],
        "versions": {"cavrec": __version__, "numpy": np.__version__,
                     "python": sys.version.split()[0]},
        "wall_time_seconds": round(wall_time, 3),
    }
    Path(out_dir, "manifest.json").write_text(json.dumps(manifest, indent=2))


# --- synthetic experiment pipelines -----------------------------------------

def _train_cf(dataset, cfg, rng):
    cf = cfg["cf"]
    if cf.get("method", "wals") == "two_tower":
        return train_two_tower(dataset, d=cf["d"], kappa=cf.get("kappa", 1.0),
                               epochs=cf.get("epochs", 20), rng=rng)
    return train_wals(dataset, d=cf["d"], kappa=cf.get("kappa", 1.0),
                      iterations=cf.get("iterations", 15), rng=rng,
                      beta=cf.get("beta", 1.0))


def _tag_truth(gt, tag):
    info = gt.tags[tag]
    if info.kind in ("objective", "degree"):
        return gt.item_attrs[:, info.attrs[0]]
    return None


def _spearman(scores, truth):
    from scipy import stats
    return float(stats.spearmanr(scores, truth).statistic)


def run_synth_cav_experiment(cfg: dict, experiment: str) -> list[dict]:
    """Shared pipeline for the objective and degree-subjective tables:
    generate, split, embed, train all CAV variants plus PITF, report
    held-out accuracy and Spearman versus ground truth."""
    rng = np.random.default_rng(cfg["seed"])
    dataset, gt = generate_dataset(SynthConfig(**_synth_kwargs(cfg)))
    split = split_by_pair(dataset, cfg["train_fraction"], rng)
    model = _train_cf(split.train, cfg, rng)
    reprs = item_representations(model)

    rows = []
    opt = cfg.get("cav_opt", {})
    train_examples, test_examples = {}, {}
    for g, info in enumerate(gt.tags):
        ep_test = eval_pairs(split.test, g)
        test_ex, _ = build_examples(split.test, g,
                                    DEFAULT_NEG_RATIO["logistic"], rng)
        train_examples[g], _ = build_examples(split.train, g,
                                              DEFAULT_NEG_RATIO["logistic"], rng)
        test_examples[g] = test_ex
        truth = _tag_truth(gt, g)
        for method in ("logistic", "ranknet", "lambdarank"):
            cav = train_cav(method, split.train, g, reprs, rng,
                            lam=cfg["lam"], **opt)
            test = test_ex if method == "logistic" else ep_test
            rows.append(_row(experiment, info.name, METHOD_NAMES[method], "",
                             "Accur", tag_accuracy(cav, test, reprs)))
            if truth is not None:
                rows.append(_row(experiment, info.name, METHOD_NAMES[method],
                                 "", "Sprmn",
                                 spearman_vs_ground_truth(cav, truth, reprs)))

    if "pitf" in cfg:
        p = cfg["pitf"]
        pitf = train_pitf(train_examples, dataset.num_users, dataset.num_items,
                          dataset.num_tags, d=p["d"], lr=p["lr"], reg=p["reg"],
                          epochs=p["epochs"], rng=rng)
        for g, info in enumerate(gt.tags):
            rows.append(_row(experiment, info.name, "PITF", "", "Accur",
                             pitf_predict_accuracy(pitf, {g: test_examples[g]})))
            truth = _tag_truth(gt, g)
            if truth is not None:
                rows.append(_row(experiment, info.name, "PITF", "", "Sprmn",
                                 _spearman(pitf_tag_scores(
                                     pitf, g, dataset.num_items), truth)))
        rows.append(_row(experiment, "all", "PITF", "", "Accur",
                         pitf_predict_accuracy(pitf, test_examples)))
    return rows


def _synth_kwargs(cfg: dict) -> dict:
    kw = dict(cfg["synth"])
    if "degree_threshold_ranges" in kw:
        kw["degree_threshold_ranges"] = tuple(
            tuple(r) for r in kw["degree_threshold_ranges"])
    if "sense_groups" in kw:
        kw["sense_groups"] = tuple(tuple(g) for g in kw["sense_groups"])
    return kw


def run_synth_sense(cfg: dict) -> list[dict]:
    """EM sense disentangling versus a single RankNet CAV per tag, with
    chosen sense counts and ground-truth partition agreement."""
    experiment = "synth-sense"
    rng = np.random.default_rng(cfg["seed"])
    dataset, gt = generate_dataset(SynthConfig(**_synth_kwargs(cfg)))
    split = split_by_pair(dataset, cfg["train_fraction"], rng)
    model = _train_cf(split.train, cfg, rng)
    reprs = item_representations(model)

    rows = []
    opt = cfg.get("cav_opt", {})
    em_cfg = cfg.get("em", {})
    for g, info in enumerate(gt.tags):
        ep_test = eval_pairs(split.test, g)
        cav = train_cav("ranknet", split.train, g, reprs, rng,
                        lam=cfg["lam"], **opt)
        rows.append(_row(experiment, info.name, "RankNet", "", "Accur",
                         tag_accuracy(cav, ep_test, reprs)))
        sense_model = select_sense_count(
            split.train, g, s_max=em_cfg.get("s_max", 4),
            eps=em_cfg.get("eps", 0.01), trainer="ranknet", reprs=reprs,
            rng=rng, lam=cfg["lam"],
            max_em_iters=em_cfg.get("max_em_iters", 10), **opt)
        rows.append(_row(experiment, info.name, "EM RankNet", "", "Accur",
                         sense_model_accuracy(sense_model, split.train,
                                              split.test, g, reprs)))
        rows.append(_row(experiment, info.name, "EM RankNet", "", "Senses",
                         sense_model.num_senses))
        rows.append(_row(experiment, info.name, "EM RankNet", "", "AvgQuality",
                         sense_model.avg_quality))
        if info.kind == "sense":
            group_idx = [t.name for t in gt.tags
                         if t.kind == "sense"].index(info.name)
            # a sense is only identifiable for users with comparison pairs
            ep_train = eval_pairs(split.train, g)
            pair_counts = (np.diff(ep_train.pos_off)
                           * np.diff(ep_train.neg_off))
            informative = ep_train.user_ids[pair_counts > 0]
            truth = {int(u): int(gt.user_sense[u, group_idx])
                     for u in informative}
            rows.append(_row(experiment, info.name, "EM RankNet", "",
                             "SenseAgreement",
                             sense_partition_agreement(
                                 sense_model.user_assignment, truth)))
    return rows


def _ground_truth_tag_dirs(gt, user: int, dims: int) -> np.ndarray:
    """One-hot tag semantics in the true attribute space; irrelevant tags
    carry no direction and are never salient."""
    dirs = np.zeros((len(gt.tags), dims))
    for g in range(len(gt.tags)):
        attr = gt.tag_attribute(user, g)
        if attr is not None:
            dirs[g, attr] = 1.0
    return dirs


def run_critique_synth(cfg: dict) -> list[dict]:
    """Critiquing sessions over a synthetic corpus: simulated users respond
    from ground truth while the system updates embeddings with learned CAVs.
    Compares logistic versus RankNet concept directions and a zero-step
    control."""
    experiment = "critique-synth"
    rng = np.random.default_rng(cfg["seed"])
    sc = SynthConfig(**_synth_kwargs(cfg))
    dataset, gt = generate_dataset(sc)
    model = _train_cf(dataset, cfg, rng)
    reprs = item_representations(model)
    start = user_embeddings(model).mean(axis=0)

    opt = cfg.get("cav_opt", {})
    cavs = {}
    for method in ("logistic", "ranknet"):
        cavs[method] = {g: train_cav(method, dataset, g, reprs, rng,
                                     lam=cfg["lam"], **opt)
                        for g in range(len(gt.tags))}

    cr = cfg["critique"]
    k, T = cr["k"], cr["T"]
    num = min(cr["num_users"], sc.n)
    users = rng.choice(sc.n, size=num, replace=False)
    sims = []
    for u in users:
        sims.append(make_user_sim(
            int(u), gt.item_attrs, gt.user_weights[u],
            _ground_truth_tag_dirs(gt, int(u), sc.dims), rng,
            utilities=user_utilities(gt, sc, int(u)),
            peaks=None if gt.user_peaks is None else gt.user_peaks[u]))

    alpha0 = cr["alpha0"]
    if alpha0 == "auto":
        alpha0 = _tune_alpha0(reprs, start, cavs["ranknet"], sims[:50], k, T)

    rows = []
    runs = [("LogRegr", cavs["logistic"], alpha0),
            ("RankNet", cavs["ranknet"], alpha0),
            ("RankNet a0=0", cavs["ranknet"], 0.0)]
    for label, method_cavs, a0 in runs:
        traces = [run_session(reprs, start, method_cavs, sim, k=k, T=T,
                              alpha0=a0) for sim in sims]
        for metric in ("uau", "umu"):
            mat = padded_metric(traces, metric, T)
            for t in range(T):
                rows.append(_row(experiment, "", label, t, metric.upper(),
                                 float(mat[:, t].mean())))
    rows.append(_row(experiment, "", "RankNet", "", "alpha0", float(alpha0)))
    return rows


def _tune_alpha0(reprs, start, cavs, val_sims, k, T) -> float:
    best, best_uau = ALPHA0_GRID[0], -np.inf
    for a0 in ALPHA0_GRID:
        traces = [run_session(reprs, start, cavs, sim, k=k, T=T, alpha0=a0)
                  for sim in val_sims]
        uau = float(padded_metric(traces, "uau", T)[:, -1].mean())
        if uau > best_uau:
            best, best_uau = a0, uau
    return best


# --- MovieLens / SoftAttributes pipelines -----------------------------------

def _require_files(cfg: dict, keys: tuple[str, ...]) -> dict:
    data = cfg.get("data", {})
    missing = [k for k in keys if not data.get(k) or not Path(data[k]).exists()]
    if missing:
        raise StageError("ingest", f"missing data files: {', '.join(missing)}")
    return data


def _load_movielens_stage(cfg, stats=False):
    data = _require_files(cfg, ("ratings", "tags", "movies"))
    dataset, meta, funnel = load_movielens(data["ratings"], data["tags"],
                                           data["movies"])
    if stats:
        print("ingest funnel:")
        for k, v in funnel.items():
            print(f"  {k}: {v}")
    return dataset, meta, funnel


def run_movielens_tags(cfg: dict, stats=False) -> list[dict]:
    experiment = "movielens-tags"
    rng = np.random.default_rng(cfg["seed"])
    dataset, meta, funnel = _load_movielens_stage(cfg, stats)
    split = split_by_pair(dataset, cfg["train_fraction"], rng)
    model = _train_cf(split.train, cfg, rng)
    reprs = item_representations(model)

    rows = [_row(experiment, "all", "ingest", "", key, float(val))
            for key, val in funnel.items()]
    opt = cfg.get("cav_opt", {})
    max_tags = cfg.get("max_tags")
    tag_ids = range(dataset.num_tags if max_tags is None
                    else min(max_tags, dataset.num_tags))
    accs = {m: [] for m in ("logistic", "ranknet")}
    for g in tag_ids:
        ep_test = eval_pairs(split.test, g)
        test_ex, _ = build_examples(split.test, g,
                                    DEFAULT_NEG_RATIO["logistic"], rng)
        for method in ("logistic", "ranknet"):
            try:
                cav = train_cav(method, split.train, g, reprs, rng,
                                lam=cfg["lam"], **opt)
                test = test_ex if method == "logistic" else ep_test
                acc = tag_accuracy(cav, test, reprs)
            except ValueError as exc:
                log.info("tag %s skipped for %s: %s",
                         dataset.tag_vocab[g], method, exc)
                continue
            accs[method].append(acc)
            rows.append(_row(experiment, dataset.tag_vocab[g],
                             METHOD_NAMES[method], "", "Accur", acc))
    for method, vals in accs.items():
        if vals:
            rows.append(_row(experiment, "all", METHOD_NAMES[method], "",
                             "MeanAccur", float(np.mean(vals))))
    return rows


def run_movielens_artificial(cfg: dict, stats=False) -> list[dict]:
    experiment = "movielens-artificial"
    rng = np.random.default_rng(cfg["seed"])
    dataset, meta, _ = _load_movielens_stage(cfg, stats)
    art = cfg["artificial"]
    spec = ArtificialTagSpec(
        genre_tags=tuple(art.get("genre_tags", ())),
        odd_year_tag=art.get("odd_year_tag", False),
        meta_groups={k: tuple(v) for k, v in art.get("meta_groups", {}).items()})
    dataset, sense_truth = make_artificial_tags(dataset, meta, spec, rng)
    split = split_by_pair(dataset, cfg["train_fraction"], rng)
    model = _train_cf(split.train, cfg, rng)
    reprs = item_representations(model)

    rows = []
    opt = cfg.get("cav_opt", {})
    em_cfg = cfg.get("em", {})
    vocab = {name: g for g, name in enumerate(dataset.tag_vocab)}
    targets = list(spec.meta_groups) + [t.lower() for t in spec.genre_tags]
    if spec.odd_year_tag:
        targets.append("odd-year")
    for name in targets:
        g = vocab[name]
        ep_test = eval_pairs(split.test, g)
        cav = train_cav("ranknet", split.train, g, reprs, rng,
                        lam=cfg["lam"], **opt)
        rows.append(_row(experiment, name, "RankNet", "", "Accur",
                         tag_accuracy(cav, ep_test, reprs)))
        if name in spec.meta_groups:
            sense_model = select_sense_count(
                split.train, g, s_max=em_cfg.get("s_max", 4),
                eps=em_cfg.get("eps", 0.01), trainer="ranknet", reprs=reprs,
                rng=rng, lam=cfg["lam"], **opt)
            rows.append(_row(experiment, name, "EM RankNet", "", "Accur",
                             sense_model_accuracy(sense_model, split.train,
                                                  split.test, g, reprs)))
            rows.append(_row(experiment, name, "EM RankNet", "",
                             "SenseAgreement",
                             sense_partition_agreement(
                                 sense_model.user_assignment,
                                 sense_truth[name])))
    return rows


def _load_rater_stage(cfg, stats=False):
    data = _require_files(cfg, ("ratings", "tags", "movies", "soft_attributes"))
    dataset, meta, _ = _load_movielens_stage(cfg, stats)
    title_index = build_title_index(meta)
    assessments, attributes = load_soft_attributes(data["soft_attributes"],
                                                   title_index)
    return dataset, meta, assessments, attributes


def run_rater_eval_softattr(cfg: dict, stats=False) -> list[dict]:
    experiment = "rater-eval-softattr"
    rng = np.random.default_rng(cfg["seed"])
    dataset, meta, assessments, attributes = _load_rater_stage(cfg, stats)
    model = _train_cf(dataset, cfg, rng)
    reprs = item_representations(model)
    rows = []
    for label, senses in (("RankNet", None), ("EM RankNet", "auto")):
        res = kfold_rater_eval(assessments, cfg.get("folds", 5), reprs, rng,
                               trainer="ranknet", lam=cfg["lam"],
                               senses=senses, **cfg.get("cav_opt", {}))
        rows.append(_row(experiment, "all", label, "", "Gamma", res.aggregate))
        for g, val in sorted(res.per_attribute.items()):
            rows.append(_row(experiment, attributes[g], label, "", "Gamma", val))
    return rows


def run_rater_eval_movielens(cfg: dict, stats=False) -> list[dict]:
    """Tag-trained CAVs evaluated against rater comparisons: per attribute
    shared by both corpora, train on MovieLens tag data and pool gamma counts
    over every rater's pairs."""
    experiment = "rater-eval-movielens"
    rng = np.random.default_rng(cfg["seed"])
    dataset, meta, assessments, attributes = _load_rater_stage(cfg, stats)
    model = _train_cf(dataset, cfg, rng)
    reprs = item_representations(model)
    vocab = {name: g for g, name in enumerate(dataset.tag_vocab)}
    opt = cfg.get("cav_opt", {})
    em_cfg = cfg.get("em", {})
    rows = []
    pooled = GammaCounts()
    for a_idx, name in enumerate(attributes):
        if name not in vocab:
            continue
        g = vocab[name]
        sense_model = select_sense_count(
            dataset, g, s_max=em_cfg.get("s_max", 4),
            eps=em_cfg.get("eps", 0.01), trainer="ranknet", reprs=reprs,
            rng=rng, lam=cfg["lam"], **opt)
        counts = GammaCounts()
        comps = [comparisons_from_assessment(a) for a in assessments
                 if a.attribute == a_idx]
        for comp in comps:
            sense = assign_sense_from_pairs(
                sense_model, pairs_from_comparisons([comp]), reprs)
            scores = cav_score(sense_model.senses[sense], reprs, cosine=True)
            counts.add(gamma_counts(comp, scores))
        if counts.denominator == 0:
            continue
        rows.append(_row(experiment, name, "EM RankNet", "", "Gamma",
                         counts.gamma))
        pooled.add(counts)
    if pooled.denominator > 0:
        rows.append(_row(experiment, "all", "EM RankNet", "", "Gamma",
                         pooled.gamma))
    return rows


def run_critique_movielens(cfg: dict, stats=False) -> list[dict]:
    """Sessions where the user's ground truth is a frozen learned embedding
    and relevance comes from held-out ratings."""
    experiment = "critique-movielens"
    rng = np.random.default_rng(cfg["seed"])
    dataset, meta, _ = _load_movielens_stage(cfg, stats)
    split = split_by_pair(dataset, cfg["train_fraction"], rng)
    model = _train_cf(split.train, cfg, rng)
    reprs = item_representations(model)
    uembs = user_embeddings(model)
    start = uembs.mean(axis=0)

    opt = cfg.get("cav_opt", {})
    cavs = {g: train_cav("ranknet", split.train, g, reprs, rng,
                         lam=cfg["lam"], **opt)
            for g in range(dataset.num_tags)}
    tag_dirs = np.stack([cavs[g].direction for g in range(dataset.num_tags)])

    cr = cfg["critique"]
    counts = np.bincount(split.test.rating_users, minlength=dataset.num_users)
    eligible = np.flatnonzero(counts >= cr.get("min_ratings", 50))
    users = rng.choice(eligible, size=min(cr["num_users"], eligible.size),
                       replace=False)

    rows = []
    traces = []
    for u in users:
        sim = make_user_sim(int(u), reprs, uembs[u], tag_dirs, rng)
        ratings = np.zeros(dataset.num_items)
        mask = split.test.rating_users == u
        ratings[split.test.rating_items[mask]] = split.test.rating_values[mask]
        traces.append(run_session(reprs, start, cavs, sim, k=cr["k"],
                                  T=cr["T"], alpha0=cr["alpha0"],
                                  reference_ratings=ratings))
    for metric in ("uau", "umu", "ndcg", "mrr", "binarized"):
        mat = padded_metric(traces, metric, cr["T"])
        for t in range(cr["T"]):
            rows.append(_row(experiment, "", "RankNet", t, metric.upper(),
                             float(mat[:, t].mean())))
    return rows


# --- orchestration ----------------------------------------------------------

PIPELINES = {
    "synth-objective": lambda cfg, stats: run_synth_cav_experiment(
        cfg, "synth-objective"),
    "synth-degree": lambda cfg, stats: run_synth_cav_experiment(
        cfg, "synth-degree"),
    "synth-sense": lambda cfg, stats: run_synth_sense(cfg),
    "critique-synth": lambda cfg, stats: run_critique_synth(cfg),
    "movielens-tags": run_movielens_tags,
    "movielens-artificial": run_movielens_artificial,
    "rater-eval-movielens": run_rater_eval_movielens,
    "rater-eval-softattr": run_rater_eval_softattr,
    "critique-movielens": run_critique_movielens,
}

STAGES = {
    "synth-objective": ["synthgen", "split", "cftrain", "cavlearn",
                        "baselines", "evalmetrics"],
    "synth-degree": ["synthgen", "split", "cftrain", "cavlearn", "evalmetrics"],
    "synth-sense": ["synthgen", "split", "cftrain", "cavlearn(EM)",
                    "evalmetrics"],
    "critique-synth": ["synthgen", "cftrain", "cavlearn", "critique"],
    "movielens-tags": ["ingest", "split", "cftrain", "cavlearn", "evalmetrics"],
    "movielens-artificial": ["ingest", "artificial-tags", "split", "cftrain",
                             "cavlearn(EM)", "evalmetrics"],
    "rater-eval-movielens": ["ingest", "soft-attributes", "cftrain",
                             "cavlearn(EM)", "evalmetrics(gamma)"],
    "rater-eval-softattr": ["ingest", "soft-attributes", "cftrain",
                            "evalmetrics(kfold gamma)"],
    "critique-movielens": ["ingest", "split", "cftrain", "cavlearn",
                           "critique"],
}

TABLE_NOTES = {
    "synth-objective": "accuracy/Spearman per method per tag",
    "synth-degree": "accuracy under degree subjectivity",
    "synth-sense": "EM vs non-EM accuracy, chosen sense counts",
    "critique-synth": "per-step UAU/UMU per method",
    "movielens-tags": "per-tag accuracy on real tags",
    "movielens-artificial": "artificial-tag accuracy, sense recovery",
    "rater-eval-movielens": "gamma of tag-trained CAVs vs raters",
    "rater-eval-softattr": "k-fold gamma of comparison-trained CAVs",
    "critique-movielens": "per-step UAU/NDCG/MRR",
}


def run_experiment(cfg: dict, stats=False) -> list[dict]:
    t0 = time.time()
    rows = PIPELINES[cfg["experiment"]](cfg, stats)
    out_dir = Path(cfg.get("out", "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    write_rows(rows, out_dir / "metrics.csv")
    write_manifest(cfg, out_dir, time.time() - t0)
    return rows


def describe(cfg: dict) -> str:
    name = cfg["experiment"]
    lines = [f"experiment: {name} (scale={cfg.get('scale', 'desk')}, "
             f"seed={cfg['seed']})",
             "stages: " + " -> ".join(STAGES[name]),
             f"output: metrics.csv ({TABLE_NOTES[name]}), manifest.json"]
    if "synth" in cfg:
        s = cfg["synth"]
        lines.append(f"corpus: {s['n']} users x {s['m']} items (synthetic)")
    if cfg.get("scale") == "full" and name.startswith(
            ("movielens", "rater", "critique-movielens")):
        lines.append("warning: full scale on real data runs for hours")
    return "\n".join(lines)


# --- argument parsing -------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=None,
                   help="cap numba worker threads")
    p.add_argument("--scale", choices=["desk", "full"])
    p.add_argument("--stats", action="store_true",
                   help="print ingest filter funnel")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cavrec",
                                 description="concept-vector recommender "
                                             "experiment toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a named experiment end to end")
    p.add_argument("experiment", nargs="?", choices=EXPERIMENTS)
    _add_common(p)

    p = sub.add_parser("describe", help="print the plan without computing")
    p.add_argument("experiment", nargs="?", choices=EXPERIMENTS)
    _add_common(p)

    p = sub.add_parser("synth", help="generate a synthetic dataset file")
    p.add_argument("--config", help="JSON with a 'synth' section")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output .npz path")

    p = sub.add_parser("train-cf", help="train an embedding model")
    p.add_argument("--data", required=True, help="dataset .npz")
    p.add_argument("--method", choices=["wals", "two_tower"], default="wals")
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--iterations", type=int, default=15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="model .json path")

    p = sub.add_parser("train-cav", help="train one concept vector")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--tag", required=True, help="tag name or id")
    p.add_argument("--trainer", choices=["logistic", "ranknet", "lambdarank"],
                   default="ranknet")
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="cav .json path")

    p = sub.add_parser("eval", help="evaluate a concept vector on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--cav", required=True)

    p = sub.add_parser("critique", help="run the critique-synth experiment")
    _add_common(p)
    return ap


def _resolve_tag(dataset, tag: str) -> int:
    if tag in dataset.tag_vocab:
        return dataset.tag_vocab.index(tag)
    try:
        g = int(tag)
    except ValueError:
        raise StageError("config", f"unknown tag {tag!r}")
    if not 0 <= g < dataset.num_tags:
        raise StageError("config", f"tag id {g} out of range")
    return g


def save_cav(cav: CAV, path) -> None:
    Path(path).write_text(json.dumps({
        "format_version": 1, "kind": "cav", "tag": cav.tag,
        "trainer": cav.trainer, "lambda_reg": cav.lambda_reg,
        "layer": cav.layer, "quality": cav.quality,
        "direction": cav.direction.tolist()}))


def load_cav(path) -> CAV:
    obj = json.loads(Path(path).read_text())
    if obj.get("kind") != "cav":
        raise ValueError(f"not a cav checkpoint: {obj.get('kind')!r}")
    return CAV(tag=obj["tag"], direction=np.asarray(obj["direction"]),
               layer=obj["layer"], trainer=obj["trainer"],
               lambda_reg=obj["lambda_reg"], quality=obj["quality"])


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    if getattr(args, "threads", None):
        try:
            import numba
            numba.set_num_threads(args.threads)
        except ImportError:
            pass
    try:
        if args.command in ("run", "describe", "critique"):
            experiment = getattr(args, "experiment", None)
            if args.command == "critique":
                experiment = experiment or "critique-synth"
            cfg = load_config(args.config, experiment=experiment,
                              scale=args.scale, seed=args.seed, out=args.out)
            if args.command == "describe":
                print(describe(cfg))
            else:
                rows = run_experiment(cfg, stats=args.stats)
                out_dir = cfg.get("out", "out")
                print(f"{len(rows)} metric rows written to {out_dir}/metrics.csv")
        elif args.command == "synth":
            cfg = {}
            if args.config:
                cfg = json.loads(Path(args.config).read_text())
            kw = dict(cfg.get("synth", {}))
            kw["seed"] = args.seed
            dataset, _ = generate_dataset(SynthConfig(**kw))
            report = validate_dataset(dataset)
            save_dataset(dataset, args.out)
            print(f"{dataset.num_ratings} ratings, {dataset.num_tag_triples} "
                  f"tag triples -> {args.out} ({report.summary()})")
        elif args.command == "train-cf":
            dataset = load_dataset(args.data)
            rng = np.random.default_rng(args.seed)
            if args.method == "two_tower":
                model = train_two_tower(dataset, d=args.d, kappa=args.kappa,
                                        rng=rng)
            else:
                model = train_wals(dataset, d=args.d, kappa=args.kappa,
                                   iterations=args.iterations, rng=rng)
            save_model(model, args.out)
            print(f"model ({args.method}, d={args.d}) -> {args.out}")
        elif args.command == "train-cav":
            dataset = load_dataset(args.data)
            model = load_model(args.model)
            rng = np.random.default_rng(args.seed)
            g = _resolve_tag(dataset, args.tag)
            cav = train_cav(args.trainer, dataset, g,
                            item_representations(model), rng, lam=args.lam)
            save_cav(cav, args.out)
            print(f"cav for tag {dataset.tag_vocab[g]!r} "
                  f"(quality={cav.quality}) -> {args.out}")
        elif args.command == "eval":
            dataset = load_dataset(args.data)
            model = load_model(args.model)
            cav = load_cav(args.cav)
            reprs = item_representations(model)
            acc = tag_accuracy(cav, eval_pairs(dataset, cav.tag), reprs)
            print(f"tag {dataset.tag_vocab[cav.tag]!r}: quality {acc:.4f}")
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
