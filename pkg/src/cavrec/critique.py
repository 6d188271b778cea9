"""Simulated example-critiquing sessions.

A recommender scores items against a user embedding and shows the top-k
slate; a simulated user either accepts (some slate item clears the utility
threshold) or critiques the most salient tag; the critique moves the user
embedding along the tag's concept direction with a 1/(1+t) decayed step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .cavlearn import CAV, SenseModel

log = logging.getLogger(__name__)

DEFAULT_ACCEPT_QUANTILE = 0.98
DEFAULT_BOUND_SAMPLE = 1000
ALPHA0_GRID = (0.05, 0.1, 0.25, 0.5, 1.0)


@dataclass
class UserSim:
    """Simulated user: true utilities over the corpus, a taste vector and tag
    semantics in the critique feature space, and attainable per-dimension
    bounds used to form the estimated ideal item."""

    user: int
    item_feats: np.ndarray           # (m, D) items in the user's own space
    utilities: np.ndarray            # (m,) true utility per item
    user_vec: np.ndarray             # (D,) taste vector
    tag_dirs: np.ndarray             # (G, D) tag meaning per tag
    attr_bounds: np.ndarray          # (D, 2) attainable [min, max] per dim
    accept_threshold: float
    peaks: np.ndarray | None = None  # single-peaked utility peaks, else linear


def make_user_sim(user: int, item_feats: np.ndarray, user_vec: np.ndarray,
                  tag_dirs: np.ndarray, rng: np.random.Generator,
                  utilities: np.ndarray | None = None,
                  peaks: np.ndarray | None = None,
                  quantile: float = DEFAULT_ACCEPT_QUANTILE,
                  bound_sample: int = DEFAULT_BOUND_SAMPLE) -> UserSim:
    """Build a UserSim from a feature matrix.

    Utilities default to the linear (or single-peaked, when ``peaks`` is
    given) utility over ``item_feats``; the accept threshold is the
    ``quantile`` point of the user's utility over the whole corpus; bounds
    come from a random item sample, the user's rough market estimate."""
    m = item_feats.shape[0]
    if utilities is None:
        if peaks is None:
            utilities = item_feats @ user_vec
        else:
            x = item_feats * user_vec[None, :]
            utilities = np.sum(peaks[None, :] - np.abs(x - peaks[None, :]), axis=1)
    sample = rng.choice(m, size=min(bound_sample, m), replace=False)
    feats = item_feats[sample]
    bounds = np.stack([feats.min(axis=0), feats.max(axis=0)], axis=1)
    threshold = float(np.quantile(utilities, quantile))
    return UserSim(user=user, item_feats=np.asarray(item_feats, dtype=np.float64),
                   utilities=np.asarray(utilities, dtype=np.float64),
                   user_vec=np.asarray(user_vec, dtype=np.float64),
                   tag_dirs=np.asarray(tag_dirs, dtype=np.float64),
                   attr_bounds=bounds, accept_threshold=threshold, peaks=peaks)


@dataclass(frozen=True)
class Accept:
    item: int


@dataclass(frozen=True)
class Critique:
    tag: int
    direction: int     # +1 = "more", -1 = "less"


@dataclass
class SessionStep:
    slate: np.ndarray
    response: "Accept | Critique"
    embedding: np.ndarray
    umu: float
    uau: float
    ndcg: float | None = None
    mrr: float | None = None
    binarized: float | None = None


@dataclass
class SessionTrace:
    user: int
    steps: list[SessionStep]
    terminated_by: str       # "accept" | "max_steps"


def recommend_slate(item_reprs: np.ndarray, user_embedding: np.ndarray,
                    k: int) -> np.ndarray:
    """Top-k items by dot-product score, score ties broken by ascending id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = item_reprs @ user_embedding
    m = scores.size
    k = min(k, m)
    # argsort on (-score, id): stable sort over ids already ascending
    order = np.argsort(-scores, kind="stable")
    return order[:k]


def estimated_ideal_item(sim: UserSim) -> np.ndarray:
    """The user's utility-maximizing attainable point, dimension by dimension:
    the bound endpoint matching the taste sign for linear utility, the clamped
    peak for single-peaked utility."""
    lo, hi = sim.attr_bounds[:, 0], sim.attr_bounds[:, 1]
    if sim.peaks is None:
        return np.where(sim.user_vec >= 0, hi, lo)
    return np.clip(sim.peaks, lo, hi)


def user_respond(sim: UserSim, slate: np.ndarray) -> "Accept | Critique":
    """Accept the best slate item if it clears the threshold, else critique
    the tag most salient in the gap between the estimated ideal item and the
    slate average, weighted by the user's taste.  All of this happens in the
    user's own feature space, independent of the recommender's embeddings."""
    if slate.size == 0:
        raise ValueError("empty slate")
    utils = sim.utilities[slate]
    best = int(np.argmax(utils))
    if utils[best] >= sim.accept_threshold:
        return Accept(item=int(slate[best]))
    delta = (estimated_ideal_item(sim) - sim.item_feats[slate].mean(axis=0)) * sim.user_vec
    salience = sim.tag_dirs @ delta
    g = int(np.argmax(np.abs(salience)))
    return Critique(tag=g, direction=1 if salience[g] >= 0 else -1)


def _tag_direction(cav, user_sense: int | None) -> np.ndarray:
    if isinstance(cav, SenseModel):
        k = 0 if user_sense is None else user_sense
        if user_sense is None:
            log.debug("no sense estimate for tag %d; using sense 0", cav.tag)
        return cav.senses[k].direction
    if isinstance(cav, CAV):
        return cav.direction
    return np.asarray(cav, dtype=np.float64)


def apply_critique(user_embedding: np.ndarray, cav, direction: int, t: int,
                   alpha0: float, user_sense: int | None = None) -> np.ndarray:
    """embedding + direction * alpha0/(1+t) * concept direction.  ``t`` counts
    the user's prior critiques with this same tag."""
    d = _tag_direction(cav, user_sense)
    if d.shape != user_embedding.shape:
        raise ValueError(f"concept dim {d.shape} != embedding dim "
                         f"{user_embedding.shape}")
    return user_embedding + direction * (alpha0 / (1.0 + t)) * d


def slate_metrics(slate: np.ndarray, ratings: np.ndarray,
                  relevant_above: float = 3.0) -> dict[str, float]:
    """NDCG (binary gains, log2 discount, ideal = slate re-sorted), MRR of
    the first relevant item, and mean binarized rating over the slate."""
    if slate.size == 0:
        raise ValueError("empty slate")
    rel = (np.asarray(ratings, dtype=np.float64)[slate] > relevant_above)
    gains = rel.astype(np.float64)
    disc = 1.0 / np.log2(np.arange(2, slate.size + 2))
    dcg = float(gains @ disc)
    ideal = float(np.sort(gains)[::-1] @ disc)
    ndcg = dcg / ideal if ideal > 0 else 0.0
    hits = np.flatnonzero(rel)
    mrr = 1.0 / (hits[0] + 1) if hits.size else 0.0
    return {"ndcg": ndcg, "mrr": float(mrr), "binarized": float(gains.mean())}


def run_session(item_reprs: np.ndarray, start_embedding: np.ndarray,
                cavs: dict[int, "CAV | SenseModel | np.ndarray"],
                sim: UserSim, k: int = 10, T: int = 25,
                alpha0: float = 0.25,
                reference_ratings: np.ndarray | None = None,
                user_senses: dict[int, int] | None = None) -> SessionTrace:
    """One critiquing session: recommend, respond, update, at most T steps.

    ``cavs`` maps tag id to the system's concept model; sense models use the
    user's estimated sense from ``user_senses`` (cold users fall back to
    sense 0).  Per-step user max/avg utility is always recorded; ranking
    metrics are added when ``reference_ratings`` is given."""
    emb = np.asarray(start_embedding, dtype=np.float64).copy()
    tag_uses: dict[int, int] = {}
    steps: list[SessionStep] = []
    terminated = "max_steps"
    for _ in range(T):
        slate = recommend_slate(item_reprs, emb, k)
        response = user_respond(sim, slate)
        utils = sim.utilities[slate]
        step = SessionStep(slate=slate, response=response, embedding=emb.copy(),
                           umu=float(utils.max()), uau=float(utils.mean()))
        if reference_ratings is not None:
            step.__dict__.update(slate_metrics(slate, reference_ratings))
        steps.append(step)
        if isinstance(response, Accept):
            terminated = "accept"
            break
        t = tag_uses.get(response.tag, 0)
        sense = user_senses.get(response.tag) if user_senses else None
        emb = apply_critique(emb, cavs[response.tag], response.direction,
                             t, alpha0, user_sense=sense)
        tag_uses[response.tag] = t + 1
    return SessionTrace(user=sim.user, steps=steps, terminated_by=terminated)


def padded_metric(traces: list[SessionTrace], name: str, T: int) -> np.ndarray:
    """(len(traces), T) per-step metric matrix; sessions that accepted early
    carry their last value forward."""
    out = np.empty((len(traces), T))
    for r, tr in enumerate(traces):
        vals = [getattr(s, name) for s in tr.steps]
        if not vals:
            raise ValueError("empty session trace")
        vals = vals + [vals[-1]] * (T - len(vals))
        out[r] = vals[:T]
    return out
