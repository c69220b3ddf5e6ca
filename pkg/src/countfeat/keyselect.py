"""Counting-key candidates from per-user forests, ranked by tf-idf.

Users act as documents and the feature set of each root-to-leaf path
acts as a word.  For a key k over a model set M:

    tf(k)  = mean occurrences of k per model containing it
    idf(k) = ln(|M| / (1 + |M_k|))
    score  = tf * idf

Occurrences count every path whose collapsed feature set equals k,
including duplicates inside one tree; split thresholds never matter.
Keys present in (almost) every model get a near-zero or negative idf,
which is exactly the ubiquity penalty the ranking relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import CountingKey, Dataset, FeatureSchema, columns
from .errors import EmptyData, InvalidConfig, IoFailure, UnknownFeature
from .trees import Forest, TrainParams, enumerate_paths, train_forest

__all__ = [
    "CandidateStats",
    "extract_candidates",
    "score_tfidf",
    "select_top_k",
    "top_users",
    "run_selection",
    "write_candidate_report",
    "read_keys",
    "write_keys",
]


@dataclass(frozen=True)
class CandidateStats:
    """Occurrence bookkeeping and scores for one candidate key."""

    key: CountingKey
    per_model_occurrences: dict
    tf: float | None = None
    idf: float | None = None
    tfidf: float | None = None

    @property
    def model_count(self) -> int:
        return len(self.per_model_occurrences)

    @property
    def total_occurrences(self) -> int:
        return sum(self.per_model_occurrences.values())


def extract_candidates(
    models: Sequence[tuple[int, Forest]], feature_names: Sequence[str]
) -> list[CandidateStats]:
    """Per-model occurrence counts of every distinct path feature set."""
    if not models:
        raise EmptyData("extract_candidates needs at least one model")
    acc: dict[CountingKey, dict[int, int]] = {}
    for model_id, forest in models:
        for feats in enumerate_paths(forest, feature_names):
            key = CountingKey(tuple(feats))
            per_model = acc.setdefault(key, {})
            per_model[model_id] = per_model.get(model_id, 0) + 1
    return [CandidateStats(key, per_model) for key, per_model in acc.items()]


def score_tfidf(stats: Sequence[CandidateStats], n_models: int) -> list[CandidateStats]:
    """Fill tf, idf, tfidf on a copy of each candidate."""
    out = []
    for s in stats:
        m_k = s.model_count
        if n_models < m_k:
            raise InvalidConfig(f"n_models={n_models} < model_count={m_k} for {s.key}")
        tf = s.total_occurrences / m_k
        idf = float(np.log(n_models / (1.0 + m_k)))
        out.append(replace(s, tf=tf, idf=idf, tfidf=tf * idf))
    return out


def _rank_key(s: CandidateStats):
    # score desc, then model_count desc, then feature names ascending
    return (-s.tfidf, -s.model_count, s.key.features)


def select_top_k(scored: Sequence[CandidateStats], k: int) -> list[CountingKey]:
    """The k highest-tfidf keys (fewer if the pool is smaller)."""
    if k < 1:
        raise InvalidConfig("k must be >= 1")
    for s in scored:
        if s.tfidf is None:
            raise InvalidConfig(f"candidate {s.key} is unscored")
    return [s.key for s in sorted(scored, key=_rank_key)[:k]]


def top_users(dataset: Dataset, n_top_users: int) -> list[int]:
    """Users ranked by impression count descending, ties by ascending id."""
    counts: dict[int, int] = {}
    for imp in dataset.impressions:
        counts[imp.user_id] = counts.get(imp.user_id, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [uid for uid, _ in ranked[:n_top_users]]


def run_selection(
    dataset: Dataset,
    params: TrainParams = TrainParams(),
    n_top_users: int = 100,
    k: int = 5,
) -> tuple[list[CountingKey], list[CandidateStats]]:
    """Train one forest per heavy user, then extract and rank keys.

    Models are trained and merged in ascending user-id order, so the
    result does not depend on any intermediate ordering.
    """
    if not dataset.impressions:
        raise EmptyData("run_selection needs a nonempty dataset")
    cols = columns(dataset)
    chosen = sorted(top_users(dataset, n_top_users))

    order = np.argsort(cols.user_ids, kind="stable")
    sorted_users = cols.user_ids[order]
    models: list[tuple[int, Forest]] = []
    for uid in chosen:
        lo = np.searchsorted(sorted_users, uid, side="left")
        hi = np.searchsorted(sorted_users, uid, side="right")
        rows = order[lo:hi]
        forest = train_forest((cols.values[rows], cols.labels[rows]), params)
        models.append((uid, forest))

    stats = score_tfidf(
        extract_candidates(models, dataset.schema.names), n_models=len(models)
    )
    return select_top_k(stats, k), stats


# --- report / key files ----------------------------------------------------


def write_candidate_report(stats: Sequence[CandidateStats], path: str) -> None:
    """Scored candidates, tfidf-descending, one key per row."""
    rows = sorted(stats, key=_rank_key)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("key\tmodel_count\ttotal_occurrences\ttf\tidf\ttfidf\n")
            for s in rows:
                fh.write(
                    f"{s.key.name}\t{s.model_count}\t{s.total_occurrences}"
                    f"\t{s.tf!r}\t{s.idf!r}\t{s.tfidf!r}\n"
                )
    except OSError as e:
        raise IoFailure(str(e)) from e


def write_keys(keys: Sequence[CountingKey], path: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for key in keys:
                fh.write(key.name + "\n")
    except OSError as e:
        raise IoFailure(str(e)) from e


def read_keys(path: str, schema: FeatureSchema | None = None) -> list[CountingKey]:
    """Read one key per line; optionally validate names against a schema."""
    keys = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                key = CountingKey.parse(line)
                if schema is not None:
                    for name in key.features:
                        schema.index(name)  # raises UnknownFeature
                keys.append(key)
    except OSError as e:
        raise IoFailure(str(e)) from e
    return keys
