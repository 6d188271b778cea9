"""Real-data loading and filtering.

MovieLens-format ratings/tags/movies with the tag-quality funnel (lowercase,
rating >= 4 co-occurrence, top-250-by-movies intersected with
top-250-by-users), pair-atomic train/test splitting, artificial tag
construction (genre, odd-year, sense-conflated meta-tags), and
SoftAttributes-style rater assessment files.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .core import Dataset, SplitDataset
from .evalmetrics import RaterAssessment

log = logging.getLogger(__name__)

TOP_TAGS = 250
MIN_TAG_RATING = 4.0


@dataclass(frozen=True)
class MovieMeta:
    item: int
    title: str
    genres: frozenset[str]
    release_year: int | None


_YEAR_RE = re.compile(r"\((\d{4})\)\s*$")
_ARTICLE_RE = re.compile(r"^(.*),\s*(the|a|an|la|le|les|el|los|das|der|die)$",
                         re.IGNORECASE)


def parse_title_year(title: str) -> tuple[str, int | None]:
    title = title.strip()
    m = _YEAR_RE.search(title)
    if not m:
        return title, None
    return title[:m.start()].strip(), int(m.group(1))


def normalize_title(title: str) -> str:
    """Lowercase, article moved back to front, punctuation stripped."""
    base, _ = parse_title_year(title)
    base = base.strip().lower()
    m = _ARTICLE_RE.match(base)
    if m:
        base = f"{m.group(2)} {m.group(1)}"
    return re.sub(r"[^a-z0-9 ]+", "", base).strip()


def _read_csv(path, columns, required=None):
    try:
        df = pd.read_csv(path, usecols=columns, on_bad_lines="skip")
    except FileNotFoundError:
        raise
    except ValueError as exc:
        raise ValueError(f"{path}: unexpected columns ({exc})") from exc
    return df.dropna(subset=required if required is not None else columns)


def load_movie_meta(movies_file) -> dict[int, MovieMeta]:
    df = _read_csv(movies_file, ["movieId", "title", "genres"])
    meta = {}
    for row in df.itertuples(index=False):
        _, year = parse_title_year(str(row.title))
        genres = frozenset(g.strip().lower() for g in str(row.genres).split("|")
                           if g.strip() and g != "(no genres listed)")
        meta[int(row.movieId)] = MovieMeta(item=int(row.movieId),
                                           title=str(row.title),
                                           genres=genres, release_year=year)
    return meta


def load_movielens(ratings_file, tags_file, movies_file,
                   top_n: int = TOP_TAGS, min_tag_rating: float = MIN_TAG_RATING,
                   ) -> tuple[Dataset, dict[int, MovieMeta], dict[str, int]]:
    """Load a MovieLens-layout corpus with the tag-quality funnel.

    Tags are lowercased; a tag triple survives only if the same user rated
    the same movie at least ``min_tag_rating``; surviving tags are then cut
    to the intersection of the ``top_n`` tags by distinct tagged movies and
    the ``top_n`` by distinct applying users.  Returns the dense-id Dataset,
    raw-id movie metadata, and the filter funnel counts."""
    ratings = _read_csv(ratings_file, ["userId", "movieId", "rating"])
    tags = _read_csv(tags_file, ["userId", "movieId", "tag"])
    meta = load_movie_meta(movies_file)
    funnel = {"rating_rows": len(ratings), "tag_rows": len(tags)}

    tags = tags.assign(tag=tags["tag"].astype(str).str.strip().str.lower())
    tags = tags[tags["tag"] != ""]
    funnel["unique_tags_raw"] = tags["tag"].nunique()

    merged = tags.merge(ratings, on=["userId", "movieId"], how="inner")
    merged = merged[merged["rating"] >= min_tag_rating]
    merged = merged.drop_duplicates(["userId", "movieId", "tag"])
    funnel["triples_after_rating_filter"] = len(merged)
    funnel["unique_tags_after_rating_filter"] = merged["tag"].nunique()

    by_movies = merged.groupby("tag")["movieId"].nunique().nlargest(top_n)
    by_users = merged.groupby("tag")["userId"].nunique().nlargest(top_n)
    keep = set(by_movies.index) & set(by_users.index)
    merged = merged[merged["tag"].isin(keep)]
    funnel["final_tags"] = len(keep)
    funnel["final_triples"] = len(merged)

    user_ids = np.sort(ratings["userId"].unique())
    item_ids = np.sort(ratings["movieId"].unique())
    umap = {int(u): j for j, u in enumerate(user_ids)}
    imap = {int(i): j for j, i in enumerate(item_ids)}
    vocab = tuple(sorted(keep))
    gmap = {g: j for j, g in enumerate(vocab)}

    dataset = Dataset(
        num_users=len(user_ids), num_items=len(item_ids),
        rating_users=ratings["userId"].map(umap).to_numpy(),
        rating_items=ratings["movieId"].map(imap).to_numpy(),
        rating_values=ratings["rating"].to_numpy(dtype=np.float64),
        tag_users=merged["userId"].map(umap).to_numpy(),
        tag_items=merged["movieId"].map(imap).to_numpy(),
        tag_ids=merged["tag"].map(gmap).to_numpy(),
        tag_vocab=vocab)
    # remap meta to dense item ids; unrated movies are dropped
    dense_meta = {imap[i]: MovieMeta(item=imap[i], title=m.title,
                                     genres=m.genres, release_year=m.release_year)
                  for i, m in meta.items() if i in imap}
    return dataset, dense_meta, funnel


def split_by_pair(dataset: Dataset, train_fraction: float,
                  rng: np.random.Generator) -> SplitDataset:
    """Assign each distinct (user, item) pair wholly to train or test; every
    rating and tag record follows its pair."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    pair_key = dataset.rating_users * dataset.num_items + dataset.rating_items
    uniq = np.unique(pair_key)
    in_train = rng.random(uniq.size) < train_fraction
    train_pairs = set(uniq[in_train].tolist())

    r_mask = np.fromiter((int(k) in train_pairs for k in pair_key),
                         dtype=bool, count=pair_key.size)
    tag_key = dataset.tag_users * dataset.num_items + dataset.tag_items
    t_mask = np.fromiter((int(k) in train_pairs for k in tag_key),
                         dtype=bool, count=tag_key.size)

    def subset(rm, tm):
        return Dataset(num_users=dataset.num_users, num_items=dataset.num_items,
                       rating_users=dataset.rating_users[rm],
                       rating_items=dataset.rating_items[rm],
                       rating_values=dataset.rating_values[rm],
                       tag_users=dataset.tag_users[tm],
                       tag_items=dataset.tag_items[tm],
                       tag_ids=dataset.tag_ids[tm],
                       tag_vocab=dataset.tag_vocab)

    return SplitDataset(train=subset(r_mask, t_mask),
                        test=subset(~r_mask, ~t_mask))


@dataclass
class ArtificialTagSpec:
    """Which synthetic tags to inject on top of real tag data."""
    genre_tags: tuple[str, ...] = ()
    odd_year_tag: bool = False
    meta_groups: dict[str, tuple[str, ...]] = field(default_factory=dict)
    genre_prob: float = 0.5
    odd_year_prob: float = 0.5


ODD_YEAR_TAG = "odd-year"


def make_artificial_tags(dataset: Dataset, meta: dict[int, MovieMeta],
                         spec: ArtificialTagSpec, rng: np.random.Generator,
                         ) -> tuple[Dataset, dict[str, dict[int, int]]]:
    """Inject controlled tags with known ground truth.

    Genre tags: objective, added to a random half of the already-tagged
    (user, item) pairs whose movie lists the genre.  Odd-year: irrelevant,
    added to a random half of tagged pairs of odd-release-year movies.
    Meta-tags: per user, one group member becomes the designated sense and
    that user's triples of it are relabeled with the meta-tag.  Returns the
    augmented dataset plus, per meta-tag, the user -> designated-ground-tag
    map (ground-truth senses, tag ids in the new vocabulary)."""
    vocab = list(dataset.tag_vocab)
    gmap = {g: j for j, g in enumerate(vocab)}
    for name, members in spec.meta_groups.items():
        for t in members:
            if t not in gmap:
                raise ValueError(f"meta group {name!r}: unknown ground tag {t!r}")

    new_names = [g.lower() for g in spec.genre_tags]
    if spec.odd_year_tag:
        new_names.append(ODD_YEAR_TAG)
    new_names.extend(spec.meta_groups)
    for nm in new_names:
        if nm in gmap:
            raise ValueError(f"artificial tag {nm!r} collides with an existing tag")
        gmap[nm] = len(vocab)
        vocab.append(nm)

    tu = list(dataset.tag_users)
    ti = list(dataset.tag_items)
    tg = list(dataset.tag_ids)

    pairs = np.unique(np.stack([dataset.tag_users, dataset.tag_items], axis=1),
                      axis=0)
    for genre in spec.genre_tags:
        gid = gmap[genre.lower()]
        chosen = rng.random(pairs.shape[0]) < spec.genre_prob
        for u, i in pairs[chosen]:
            m = meta.get(int(i))
            if m is not None and genre.lower() in m.genres:
                tu.append(int(u))
                ti.append(int(i))
                tg.append(gid)

    if spec.odd_year_tag:
        gid = gmap[ODD_YEAR_TAG]
        chosen = rng.random(pairs.shape[0]) < spec.odd_year_prob
        for u, i in pairs[chosen]:
            m = meta.get(int(i))
            if m is not None and m.release_year is not None \
                    and m.release_year % 2 == 1:
                tu.append(int(u))
                ti.append(int(i))
                tg.append(gid)

    tu = np.asarray(tu, dtype=np.int64)
    ti = np.asarray(ti, dtype=np.int64)
    tg = np.asarray(tg, dtype=np.int64)

    sense_truth: dict[str, dict[int, int]] = {}
    for name, members in spec.meta_groups.items():
        meta_gid = gmap[name]
        member_ids = [gmap[t] for t in members]
        truth: dict[int, int] = {}
        group_mask = np.isin(tg, member_ids)
        for u in np.unique(tu[group_mask]):
            used = np.unique(tg[group_mask & (tu == u)])
            designated = int(rng.choice(used))
            truth[int(u)] = designated
            tg = np.where((tu == u) & (tg == designated), meta_gid, tg)
        sense_truth[name] = truth

    out = Dataset(num_users=dataset.num_users, num_items=dataset.num_items,
                  rating_users=dataset.rating_users,
                  rating_items=dataset.rating_items,
                  rating_values=dataset.rating_values,
                  tag_users=tu, tag_items=ti, tag_ids=tg,
                  tag_vocab=tuple(vocab))
    return out, sense_truth


def build_title_index(meta: dict[int, MovieMeta]) -> dict:
    """(normalized title, year) and normalized-title keys to dense item ids."""
    idx: dict = {}
    for item, m in meta.items():
        norm = normalize_title(m.title)
        idx[(norm, m.release_year)] = item
        idx.setdefault(norm, item)
    return idx


def _split_titles(cell) -> list[str]:
    if pd.isna(cell):
        return []
    return [t.strip() for t in str(cell).split("|") if t.strip()]


def load_soft_attributes(path, title_index: dict,
                         ) -> tuple[list[RaterAssessment], list[str]]:
    """Rater assessment rows -> RaterAssessment objects.

    Expected columns: rater, attribute, anchor, less, same, more; the three
    list columns hold pipe-separated movie titles.  Titles resolve through
    ``title_index`` (exact normalized match, year-qualified first); titles
    that stay unresolved are dropped from the assessment and logged."""
    df = _read_csv(path, ["rater", "attribute", "anchor", "less", "same", "more"],
                   required=["rater", "attribute", "anchor"])
    attributes = sorted(df["attribute"].astype(str).str.lower().unique())
    amap = {a: j for j, a in enumerate(attributes)}
    raters = {r: j for j, r in enumerate(pd.unique(df["rater"]))}

    def resolve(title: str) -> int | None:
        norm = normalize_title(title)
        _, year = parse_title_year(title)
        item = title_index.get((norm, year)) if year is not None else None
        if item is None:
            item = title_index.get(norm)
        if item is None:
            log.warning("unmapped movie title %r dropped", title)
        return item

    out = []
    for row in df.itertuples(index=False):
        sets = {}
        for cls in ("less", "same", "more"):
            resolved = [resolve(t) for t in _split_titles(getattr(row, cls))]
            sets[cls] = tuple(i for i in resolved if i is not None)
        anchor = resolve(str(row.anchor))
        if anchor is None:
            log.warning("assessment dropped: unmappable anchor %r", row.anchor)
            continue
        if anchor not in sets["same"]:
            sets["same"] = sets["same"] + (anchor,)
        a = RaterAssessment(rater=raters[row.rater],
                            attribute=amap[str(row.attribute).lower()],
                            anchor=anchor, less=sets["less"],
                            same=sets["same"], more=sets["more"])
        a.validate()
        out.append(a)
    return out, attributes


def soft_attribute_tag_overlap(attributes: list[str],
                               tag_vocab: tuple[str, ...]) -> list[str]:
    """Attribute names that also exist verbatim in the tag vocabulary."""
    tags = set(tag_vocab)
    return [a for a in attributes if a in tags]
