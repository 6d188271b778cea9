"""Synthetic population, rating and tag generator with known ground truth.

Items and users live in a shared [0,1]^D attribute space drawn from a
truncated Gaussian mixture.  Ratings follow a Zipf count / softmax choice /
discretized-score pipeline; tags are thresholded attribute values with
optional degree- or sense-subjective behavior.  Everything generated is
recorded in a GroundTruth object so downstream evaluation can compare
against the true attribute levels, thresholds and sense assignments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TagInfo:
    name: str
    kind: str               # "objective" | "degree" | "sense" | "irrelevant"
    attrs: tuple[int, ...]  # attribute indices (one per sense for sense tags)


@dataclass
class SynthConfig:
    n: int = 2000
    m: int = 1000
    dims: int = 8             # D = latent + soft attribute dimensions
    latent_dims: int = 3
    mixture_k: int = 20
    sigma: float = 0.5
    zipf_a: float = 1.05
    max_ratings_per_user: int = 300
    softmax_temp: float = 1.0
    tag_zero_weight: float = 0.8     # Dirac-at-zero mass of the tag propensity
    tag_prob_range: tuple[float, float] = (0.1, 0.5)
    tag_threshold: float = 0.5
    tag_noise_std: float = 0.01
    rating_noise_std: float = 0.01
    utility_kind: str = "linear"     # "linear" | "single_peaked"
    peak_floor_default: float = 0.5
    peak_floor_sense: float = 0.3
    subjectivity: str = "none"       # "none" | "degree" | "sense"
    degree_threshold_ranges: tuple[tuple[float, float], ...] = ((0.5, 0.7),)
    sense_groups: tuple[tuple[int, ...], ...] = ()
    num_irrelevant_tags: int = 0
    irrelevant_tag_prob: float = 0.5
    seed: int = 0

    @property
    def soft_attrs(self) -> tuple[int, ...]:
        return tuple(range(self.latent_dims, self.dims))

    def validate(self) -> None:
        if self.n <= 0 or self.m <= 0:
            raise ConfigError("n and m must be positive")
        if not 0 < self.latent_dims < self.dims:
            raise ConfigError("latent_dims must be in (0, dims)")
        if self.zipf_a <= 1.0:
            raise ConfigError("zipf_a must exceed 1")
        if not 0.0 <= self.tag_zero_weight <= 1.0:
            raise ConfigError("tag_zero_weight must be in [0, 1]")
        p_lo, p_hi = self.tag_prob_range
        if not 0.0 < p_lo <= p_hi <= 1.0:
            raise ConfigError("tag_prob_range must satisfy 0 < lo <= hi <= 1")
        if self.utility_kind not in ("linear", "single_peaked"):
            raise ConfigError(f"unknown utility_kind {self.utility_kind!r}")
        if self.subjectivity not in ("none", "degree", "sense"):
            raise ConfigError(f"unknown subjectivity {self.subjectivity!r}")
        if self.subjectivity == "sense":
            if not self.sense_groups:
                raise ConfigError("sense subjectivity requires sense_groups")
            seen: set[int] = set()
            soft = set(self.soft_attrs)
            for grp in self.sense_groups:
                if len(grp) <= 1:
                    raise ConfigError("each sense group needs more than one attribute")
                if set(grp) & seen:
                    raise ConfigError("sense groups must be disjoint")
                if not set(grp) <= soft:
                    raise ConfigError("sense groups must index soft attributes")
                seen |= set(grp)

    def tag_table(self) -> tuple[TagInfo, ...]:
        """Deterministic tag vocabulary derived from the config."""
        tags: list[TagInfo] = []
        grouped: set[int] = set()
        if self.subjectivity == "sense":
            for j, grp in enumerate(self.sense_groups):
                tags.append(TagInfo(f"tag-S{j}", "sense", tuple(grp)))
                grouped |= set(grp)
        kind = "degree" if self.subjectivity == "degree" else "objective"
        for a in self.soft_attrs:
            if a not in grouped:
                tags.append(TagInfo(f"tag-{a}", kind, (a,)))
        for r in range(self.num_irrelevant_tags):
            tags.append(TagInfo(f"tag-rand{r}", "irrelevant", ()))
        return tuple(tags)

    def peak_floors(self) -> np.ndarray:
        floors = np.full(self.dims, self.peak_floor_default)
        for grp in self.sense_groups:
            floors[list(grp)] = self.peak_floor_sense
        return floors


@dataclass
class GroundTruth:
    item_attrs: np.ndarray          # (m, D) in [0, 1]
    item_popularity: np.ndarray     # (m,) in [0, 1]
    user_weights: np.ndarray        # (n, D) in [0, 1]
    user_peaks: np.ndarray | None   # (n, D), single-peaked utility only
    user_tag_thresholds: np.ndarray | None  # (n, n_tags), degree subjectivity
    user_sense: np.ndarray | None   # (n, n_groups) designated attribute index
    user_tag_prob: np.ndarray       # (n,)
    tags: tuple[TagInfo, ...]

    def tag_attribute(self, user: int, tag: int) -> int | None:
        """The attribute a user evaluates when applying a tag (None if the
        tag is preference-irrelevant)."""
        info = self.tags[tag]
        if info.kind == "irrelevant":
            return None
        if info.kind == "sense":
            group_idx = [t.name for t in self.tags if t.kind == "sense"].index(info.name)
            return int(self.user_sense[user, group_idx])
        return info.attrs[0]


def _truncated_gaussian(rng, means, std, max_tries=100):
    """Per-coordinate resampling into [0,1]; clamps whatever survives."""
    out = rng.normal(means, std)
    for _ in range(max_tries):
        bad = (out < 0.0) | (out > 1.0)
        if not bad.any():
            break
        out[bad] = rng.normal(means[bad], std)
    return np.clip(out, 0.0, 1.0)


def sample_population(config: SynthConfig, rng: np.random.Generator) -> GroundTruth:
    config.validate()
    D, K = config.dims, config.mixture_k
    means = rng.uniform(0.0, 1.0, size=(K, D))

    item_w = rng.uniform(0.0, 1.0, size=K)
    item_w /= item_w.sum()
    comp = rng.choice(K, size=config.m, p=item_w)
    item_attrs = _truncated_gaussian(rng, means[comp], config.sigma)

    # users reuse the component means/variances; only the weights are resampled
    user_w = rng.uniform(0.0, 1.0, size=K)
    user_w /= user_w.sum()
    comp = rng.choice(K, size=config.n, p=user_w)
    user_weights = _truncated_gaussian(rng, means[comp], config.sigma)

    item_popularity = rng.uniform(0.0, 1.0, size=config.m)

    zero = rng.uniform(size=config.n) < config.tag_zero_weight
    p_lo, p_hi = config.tag_prob_range
    user_tag_prob = np.where(zero, 0.0, rng.uniform(p_lo, p_hi, size=config.n))

    tags = config.tag_table()

    user_sense = None
    if config.subjectivity == "sense":
        groups = config.sense_groups
        user_sense = np.empty((config.n, len(groups)), dtype=np.int64)
        for j, grp in enumerate(groups):
            choice = rng.integers(0, len(grp), size=config.n)
            user_sense[:, j] = np.asarray(grp)[choice]
            # one-hot weight pattern inside the group: only the designated
            # sense attribute carries utility weight
            for a in grp:
                user_weights[:, a] = np.where(user_sense[:, j] == a,
                                              user_weights[:, a], 0.0)

    user_tag_thresholds = None
    if config.subjectivity == "degree":
        ranges = config.degree_threshold_ranges
        user_tag_thresholds = np.empty((config.n, len(tags)))
        for g in range(len(tags)):
            pick = rng.integers(0, len(ranges), size=config.n)
            lo = np.asarray([ranges[p][0] for p in pick])
            hi = np.asarray([ranges[p][1] for p in pick])
            user_tag_thresholds[:, g] = rng.uniform(lo, hi)

    user_peaks = None
    if config.utility_kind == "single_peaked":
        floors = config.peak_floors()
        user_peaks = rng.uniform(floors[None, :], 1.0, size=(config.n, D))

    return GroundTruth(item_attrs=item_attrs, item_popularity=item_popularity,
                       user_weights=user_weights, user_peaks=user_peaks,
                       user_tag_thresholds=user_tag_thresholds,
                       user_sense=user_sense, user_tag_prob=user_tag_prob,
                       tags=tags)


def user_utilities(gt: GroundTruth, config: SynthConfig, user: int) -> np.ndarray:
    """True utility of every item for one user."""
    w = gt.user_weights[user]
    if config.utility_kind == "linear":
        return gt.item_attrs @ w
    p = gt.user_peaks[user]
    x = gt.item_attrs * w[None, :]
    return np.sum(p[None, :] - np.abs(x - p[None, :]), axis=1)


def item_utility(gt: GroundTruth, config: SynthConfig, user: int, item: int) -> float:
    w = gt.user_weights[user]
    v = gt.item_attrs[item]
    if config.utility_kind == "linear":
        return float(w @ v)
    p = gt.user_peaks[user]
    return float(np.sum(p - np.abs(w * v - p)))


def _zipf_counts(rng, a, max_count, size):
    """Inverse-CDF sampling of Zipf(a) truncated to [1, max_count]."""
    support = np.arange(1, max_count + 1, dtype=np.float64)
    pmf = support ** (-a)
    cdf = np.cumsum(pmf / pmf.sum())
    u = rng.uniform(size=size)
    return np.searchsorted(cdf, u) + 1


def generate_ratings(gt: GroundTruth, config: SynthConfig, rng: np.random.Generator):
    """Sparse ratings: Zipf per-user counts, softmax item choice without
    replacement (Gumbel top-k), scores discretized into five per-user bins."""
    m = config.m
    counts = _zipf_counts(rng, config.zipf_a, min(config.max_ratings_per_user, m),
                          config.n)
    users, items, values = [], [], []
    for u in range(config.n):
        num = int(counts[u])
        util = user_utilities(gt, config, u)
        logits = config.softmax_temp * (util + gt.item_popularity)
        gumbel = rng.gumbel(size=m)
        rated = np.argpartition(-(logits + gumbel), num - 1)[:num] if num < m \
            else np.arange(m)
        scores = util[rated] + rng.normal(0.0, config.rating_noise_std, size=num)
        lo, hi = scores.min(), scores.max()
        if hi - lo < 1e-12:
            rating = np.full(num, 5.0)
        else:
            rating = 1.0 + np.minimum(4, np.floor(5.0 * (scores - lo) / (hi - lo)))
        users.append(np.full(num, u, dtype=np.int64))
        items.append(rated.astype(np.int64))
        values.append(rating)
    return (np.concatenate(users), np.concatenate(items), np.concatenate(values))


def generate_tags(gt: GroundTruth, config: SynthConfig, ratings, rng: np.random.Generator):
    """Tag triples over the rated pairs: inclusion by per-user propensity,
    then per-tag threshold tests on the designated attribute with fresh noise
    per (user, item, tag)."""
    r_users, r_items, _ = ratings
    tags = gt.tags
    out_u, out_i, out_g = [], [], []
    order = np.argsort(r_users, kind="stable")
    r_users, r_items = r_users[order], r_items[order]
    bounds = np.searchsorted(r_users, np.arange(config.n + 1))
    sense_names = [t.name for t in tags if t.kind == "sense"]
    for u in range(config.n):
        pt = gt.user_tag_prob[u]
        if pt <= 0.0:
            continue
        rated = r_items[bounds[u]:bounds[u + 1]]
        tagged = rated[rng.uniform(size=rated.size) < pt]
        if tagged.size == 0:
            continue
        for g, info in enumerate(tags):
            if info.kind == "irrelevant":
                hit = rng.uniform(size=tagged.size) < config.irrelevant_tag_prob
            else:
                if info.kind == "sense":
                    attr = int(gt.user_sense[u, sense_names.index(info.name)])
                else:
                    attr = info.attrs[0]
                if info.kind == "degree":
                    tau = gt.user_tag_thresholds[u, g]
                else:
                    tau = config.tag_threshold
                noise = rng.normal(0.0, config.tag_noise_std, size=tagged.size) \
                    if config.tag_noise_std > 0 else 0.0
                hit = gt.item_attrs[tagged, attr] >= tau + noise
            chosen = tagged[hit]
            out_u.append(np.full(chosen.size, u, dtype=np.int64))
            out_i.append(chosen)
            out_g.append(np.full(chosen.size, g, dtype=np.int64))
    if not out_u:
        e = np.empty(0, dtype=np.int64)
        return e, e.copy(), e.copy()
    return np.concatenate(out_u), np.concatenate(out_i), np.concatenate(out_g)


def generate_dataset(config: SynthConfig) -> tuple[Dataset, GroundTruth]:
    """Full pipeline from a seeded config; fixed seed gives identical output."""
    rng = np.random.default_rng(config.seed)
    gt = sample_population(config, rng)
    ratings = generate_ratings(gt, config, rng)
    t_users, t_items, t_ids = generate_tags(gt, config, ratings, rng)
    dataset = Dataset(num_users=config.n, num_items=config.m,
                      rating_users=ratings[0], rating_items=ratings[1],
                      rating_values=ratings[2],
                      tag_users=t_users, tag_items=t_items, tag_ids=t_ids,
                      tag_vocab=tuple(t.name for t in gt.tags))
    return dataset, gt
