"""Evaluation computations.

Tag-prediction accuracy, Spearman correlation against ground-truth attribute
values, rater assessment -> comparison-pair extraction, the extended
Goodman-Kruskal gamma (strong pairs weighted double), and the k-fold
cross-rater protocol that trains ranking CAVs on explicit comparisons.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy import stats

from .cavlearn import (CAV, EvalPairs, LabeledExamples, PairSet, SenseModel,
                       UndefinedQualityError, assign_sense_from_pairs,
                       assign_user_sense, cav_score, em_sense_from_pairs,
                       eval_pairs, per_user_explained_counts,
                       quality_from_scores, select_sense_count_from_pairs,
                       train_cav_lambdarank, train_cav_ranknet)

log = logging.getLogger(__name__)

STRONG_WEIGHT = 2.0
WEAK_WEIGHT = 1.0


@dataclass(frozen=True)
class RaterAssessment:
    """One rater's three-way split of candidate items around an anchor."""

    rater: int
    attribute: int
    anchor: int
    less: tuple[int, ...]
    same: tuple[int, ...]    # includes the anchor
    more: tuple[int, ...]

    def validate(self) -> None:
        l, s, m = set(self.less), set(self.same), set(self.more)
        if l & s or l & m or s & m:
            raise ValueError(f"rater {self.rater}: overlapping assessment classes")
        if self.anchor not in s:
            raise ValueError(f"rater {self.rater}: anchor not in the 'same' class")


@dataclass
class ComparisonSet:
    """Ordered item pairs implied by one assessment.

    In each (i, j) pair the rater judged item i to show the attribute more
    than (strong/weak) or equally to (indifferent) item j."""

    rater: int
    attribute: int
    strong: list[tuple[int, int]] = field(default_factory=list)
    weak: list[tuple[int, int]] = field(default_factory=list)
    indifferent: list[tuple[int, int]] = field(default_factory=list)


def comparisons_from_assessment(a: RaterAssessment) -> ComparisonSet:
    """All cross-class pairs: more > less is a strong difference, pairs
    touching the anchor class are weak, within-class pairs are indifferent."""
    a.validate()
    out = ComparisonSet(rater=a.rater, attribute=a.attribute)
    out.strong = [(m, l) for m in a.more for l in a.less]
    out.weak = ([(m, s) for m in a.more for s in a.same]
                + [(s, l) for s in a.same for l in a.less])
    for cls in (a.more, a.same, a.less):
        out.indifferent.extend(combinations(cls, 2))
    return out


# --- extended Goodman-Kruskal gamma -----------------------------------------

@dataclass
class GammaCounts:
    """Pair-classification tallies.  ns/nd are weak (dis)agreements, nss/ndd
    strong; score ties contribute half to each side."""

    ns: float = 0.0
    nd: float = 0.0
    nss: float = 0.0
    ndd: float = 0.0

    def add(self, other: "GammaCounts") -> None:
        self.ns += other.ns
        self.nd += other.nd
        self.nss += other.nss
        self.ndd += other.ndd

    @property
    def denominator(self) -> float:
        return self.ns + self.nd + 2.0 * (self.nss + self.ndd)

    @property
    def gamma(self) -> float:
        d = self.denominator
        if d == 0:
            raise UndefinedQualityError("no strong or weak pairs to classify")
        return (self.ns - self.nd + 2.0 * (self.nss - self.ndd)) / d


def _tally(pairs, scores, agree_field, disagree_field, counts: GammaCounts):
    for i, j in pairs:
        diff = scores[i] - scores[j]
        if diff > 0:
            setattr(counts, agree_field, getattr(counts, agree_field) + 1.0)
        elif diff < 0:
            setattr(counts, disagree_field, getattr(counts, disagree_field) + 1.0)
        else:
            setattr(counts, agree_field, getattr(counts, agree_field) + 0.5)
            setattr(counts, disagree_field, getattr(counts, disagree_field) + 0.5)


def gamma_counts(comp: ComparisonSet, item_scores: np.ndarray) -> GammaCounts:
    """Classify one rater's strong/weak pairs against the score ordering.
    Indifferent pairs never enter the tallies."""
    counts = GammaCounts()
    _tally(comp.strong, item_scores, "nss", "ndd", counts)
    _tally(comp.weak, item_scores, "ns", "nd", counts)
    return counts


def _rater_scores(model: "CAV | SenseModel", comp: ComparisonSet,
                  reprs: np.ndarray,
                  rater_senses: dict[int, int] | None) -> np.ndarray:
    if isinstance(model, SenseModel):
        if rater_senses is not None and comp.rater in rater_senses:
            k = rater_senses[comp.rater]
        else:
            k = assign_sense_from_pairs(model, pairs_from_comparisons([comp]),
                                        reprs)
        cav = model.senses[k]
    else:
        cav = model
    return cav_score(cav, reprs, cosine=True)


def gamma_rank_correlation(model: "CAV | SenseModel",
                           comparisons, reprs: np.ndarray,
                           rater_senses: dict[int, int] | None = None) -> float:
    """Extended gamma between cosine CAV scores and rater comparisons.

    Strong pairs count double; rater-indifferent pairs are excluded.  A sense
    model scores each rater with the sense assigned to that rater (explicit
    ``rater_senses`` map, else inferred from the rater's own pairs).
    Multiple comparison sets pool their counts, so the aggregate is the
    count-weighted combination, not a mean of per-set gammas."""
    if isinstance(comparisons, ComparisonSet):
        comparisons = [comparisons]
    total = GammaCounts()
    for comp in comparisons:
        scores = _rater_scores(model, comp, reprs, rater_senses)
        total.add(gamma_counts(comp, scores))
    return total.gamma


# --- scalar metrics ---------------------------------------------------------

def spearman_vs_ground_truth(cav: CAV, truth: np.ndarray,
                             reprs: np.ndarray) -> float:
    """Spearman rho between CAV item scores and ground-truth attribute
    values, average ranks on ties."""
    truth = np.asarray(truth, dtype=np.float64)
    if truth.size < 2:
        raise ValueError("need at least two items")
    scores = cav_score(cav, reprs)
    if np.ptp(scores) == 0 or np.ptp(truth) == 0:
        raise UndefinedQualityError("constant ranking has no rank correlation")
    rho = stats.spearmanr(scores, truth).statistic
    return float(rho)


def tag_accuracy(cav: CAV, test: "LabeledExamples | EvalPairs | PairSet",
                 reprs: np.ndarray) -> float:
    """Held-out accuracy: classification at score >= 0 for logistic CAVs,
    ordering quality over test pairs for ranking CAVs."""
    if isinstance(test, LabeledExamples):
        if test.size == 0:
            raise ValueError("empty test set")
        pred = np.where(reprs[test.items] @ cav.direction >= 0, 1, -1)
        return float(np.mean(pred == test.labels))
    scores = reprs @ cav.direction
    if isinstance(test, EvalPairs):
        return quality_from_scores(scores, test)
    if test.n_pairs == 0:
        raise UndefinedQualityError("no comparable pairs")
    return float(np.mean(scores[test.pos] >= scores[test.neg]))


def sense_model_accuracy(model: SenseModel, train_ds, test_ds, tag: int,
                         reprs: np.ndarray) -> float:
    """Held-out quality of a sense model: each user's test pairs are scored
    by the sense assigned during training (users unseen in training are
    assigned from their training-split pairs, which may be empty)."""
    ep = eval_pairs(test_ds, tag)
    if ep.n_pairs == 0:
        raise UndefinedQualityError("no test pairs")
    per_sense = [per_user_explained_counts(reprs @ c.direction, ep)
                 for c in model.senses]
    pair_counts = np.diff(ep.pos_off) * np.diff(ep.neg_off)
    correct = 0.0
    for j, u in enumerate(ep.user_ids):
        sense = model.user_assignment.get(int(u))
        if sense is None:
            sense = assign_user_sense(
                model, eval_pairs(train_ds, tag, users=[int(u)]), reprs)
        correct += per_sense[sense][j]
    return float(correct / pair_counts.sum())


def sense_partition_agreement(predicted: dict[int, int],
                              truth: dict[int, int]) -> float:
    """Best-relabeling agreement between a recovered user partition and the
    ground-truth one, over users present in both."""
    users = sorted(set(predicted) & set(truth))
    if not users:
        raise ValueError("no users in common")
    pred_labels = sorted({predicted[u] for u in users})
    true_labels = sorted({truth[u] for u in users})
    conf = np.zeros((len(pred_labels), len(true_labels)))
    pmap = {l: j for j, l in enumerate(pred_labels)}
    tmap = {l: j for j, l in enumerate(true_labels)}
    for u in users:
        conf[pmap[predicted[u]], tmap[truth[u]]] += 1
    from scipy.optimize import linear_sum_assignment
    r, c = linear_sum_assignment(-conf)
    return float(conf[r, c].sum() / len(users))


# --- k-fold rater protocol --------------------------------------------------

def pairs_from_comparisons(comparisons) -> PairSet:
    """Flatten strong + weak pairs into a weighted PairSet keyed by rater.
    Strong comparisons carry instance weight 2."""
    users, pos, neg, w = [], [], [], []
    for comp in comparisons:
        for i, j in comp.strong:
            users.append(comp.rater)
            pos.append(i)
            neg.append(j)
            w.append(STRONG_WEIGHT)
        for i, j in comp.weak:
            users.append(comp.rater)
            pos.append(i)
            neg.append(j)
            w.append(WEAK_WEIGHT)
    return PairSet(np.asarray(users, dtype=np.int64),
                   np.asarray(pos, dtype=np.int64),
                   np.asarray(neg, dtype=np.int64),
                   np.asarray(w, dtype=np.float64))


def _train_fold_model(pairs: PairSet, reprs, attribute, trainer, lam,
                      senses, sense_eps, rng, opt):
    if senses is None or senses == 1:
        if trainer == "lambdarank":
            return train_cav_lambdarank(pairs, reprs, attribute, lam=lam, **opt)
        return train_cav_ranknet(pairs, reprs, attribute, lam=lam, **opt)
    if senses == "auto":
        return select_sense_count_from_pairs(pairs, reprs, s_max=10,
                                             eps=sense_eps, trainer=trainer,
                                             rng=rng, tag=attribute, lam=lam,
                                             **opt)
    return em_sense_from_pairs(pairs, reprs, senses, trainer, rng,
                               tag=attribute, lam=lam, **opt)


@dataclass
class RaterEvalResult:
    per_attribute: dict[int, float]          # mean G' over folds
    aggregate: float                         # mean over folds of pooled G'
    fold_values: dict[int, list[float]]      # attribute -> per-fold G'
    fold_aggregate: list[float] = field(default_factory=list)


def kfold_rater_eval(assessments: list[RaterAssessment], k: int,
                     reprs: np.ndarray, rng: np.random.Generator,
                     trainer: str = "ranknet", lam: float = 1.0,
                     senses: "int | str | None" = None,
                     sense_eps: float = 0.01, **opt) -> RaterEvalResult:
    """Cross-rater gamma evaluation.

    Raters are shuffled into k folds; per attribute, a CAV (or sense model
    when ``senses`` is set) is trained on the comparison pairs of k-1 folds
    and scored with pooled G' on the held-out raters.  Held-out raters are
    mapped to senses using only their own comparison pairs."""
    if k < 2:
        raise ValueError("k must be >= 2")
    raters = sorted({a.rater for a in assessments})
    if len(raters) < k:
        raise ValueError(f"cannot split {len(raters)} raters into {k} folds")
    order = rng.permutation(len(raters))
    folds = [set(np.asarray(raters)[order[f::k]].tolist()) for f in range(k)]

    comps = [comparisons_from_assessment(a) for a in assessments]
    attributes = sorted({c.attribute for c in comps})
    by_attr = {g: [c for c in comps if c.attribute == g] for g in attributes}

    fold_values: dict[int, list[float]] = {g: [] for g in attributes}
    fold_aggregate = []
    for f, test_raters in enumerate(folds):
        pooled = GammaCounts()
        for g in attributes:
            train_c = [c for c in by_attr[g] if c.rater not in test_raters]
            test_c = [c for c in by_attr[g] if c.rater in test_raters]
            pairs = pairs_from_comparisons(train_c)
            if pairs.n_pairs == 0 or not test_c:
                log.info("fold %d: attribute %d skipped (no usable pairs)", f, g)
                continue
            model = _train_fold_model(pairs, reprs, g, trainer, lam,
                                      senses, sense_eps, rng, opt)
            counts = GammaCounts()
            for comp in test_c:
                scores = _rater_scores(model, comp, reprs, rater_senses=None)
                counts.add(gamma_counts(comp, scores))
            if counts.denominator == 0:
                continue
            fold_values[g].append(counts.gamma)
            pooled.add(counts)
        if pooled.denominator > 0:
            fold_aggregate.append(pooled.gamma)

    per_attribute = {g: float(np.mean(v)) for g, v in fold_values.items() if v}
    aggregate = float(np.mean(fold_aggregate)) if fold_aggregate else float("nan")
    return RaterEvalResult(per_attribute=per_attribute, aggregate=aggregate,
                           fold_values=fold_values, fold_aggregate=fold_aggregate)
