"""Ranking and retrieval metrics for the text-query / image-gallery protocol.

Ties in similarity break toward the lower gallery index so every ranking is
deterministic.  Queries whose identity never appears in the gallery are
excluded from mAP but counted in the report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InputError


@dataclass
class QueryRanking:
    query_index: int
    order: np.ndarray          # gallery indices, best first
    relevant: np.ndarray       # bool, aligned with order
    similarities: np.ndarray   # aligned with order


@dataclass
class MetricsReport:
    rank1: float
    rank5: float
    rank10: float
    mean_ap: float
    n_queries: int
    n_unmatchable: int = 0

    def as_dict(self) -> dict:
        return {
            "rank1": self.rank1, "rank5": self.rank5, "rank10": self.rank10,
            "mAP": self.mean_ap, "queries": self.n_queries,
            "unmatchable_queries": self.n_unmatchable,
        }


def rank_gallery(sim_row, gallery_ids, query_id, query_index: int = 0) -> QueryRanking:
    sims = np.asarray(sim_row, dtype=np.float64).reshape(-1)
    if sims.size == 0:
        raise InputError("cannot rank an empty gallery")
    gallery_ids = np.asarray(gallery_ids)
    if gallery_ids.shape[0] != sims.size:
        raise InputError(
            f"{sims.size} similarities vs {gallery_ids.shape[0]} gallery ids")
    # stable sort on negated scores keeps ascending-index order among ties
    order = np.argsort(-sims, kind="stable")
    return QueryRanking(
        query_index=query_index,
        order=order,
        relevant=gallery_ids[order] == query_id,
        similarities=sims[order],
    )


def average_precision(relevant: np.ndarray) -> float:
    """Mean over relevant ranks r of precision-at-r."""
    hits = np.flatnonzero(relevant)
    if hits.size == 0:
        return 0.0
    precisions = (np.arange(hits.size) + 1.0) / (hits + 1.0)
    return float(precisions.mean())


def compute_metrics(rankings, ks=(1, 5, 10)) -> MetricsReport:
    if not rankings:
        raise InputError("no queries to score")
    hit_fractions = {}
    for k in ks:
        hits = [r.relevant[:k].any() for r in rankings]
        hit_fractions[k] = float(np.mean(hits))
    scoreable = [r for r in rankings if r.relevant.any()]
    ap_values = [average_precision(r.relevant) for r in scoreable]
    mean_ap = float(np.mean(ap_values)) if ap_values else 0.0
    return MetricsReport(
        rank1=hit_fractions.get(1, 0.0),
        rank5=hit_fractions.get(5, 0.0),
        rank10=hit_fractions.get(10, 0.0),
        mean_ap=mean_ap,
        n_queries=len(rankings),
        n_unmatchable=len(rankings) - len(scoreable),
    )


def evaluate_similarity(sim: np.ndarray, query_ids, gallery_ids) -> MetricsReport:
    """Score a full query-by-gallery similarity matrix."""
    rankings = [
        rank_gallery(sim[i], gallery_ids, query_ids[i], query_index=i)
        for i in range(sim.shape[0])
    ]
    return compute_metrics(rankings)


def dump_top_k(rankings, path, k: int = 10) -> None:
    """One JSON line per query: ranked gallery indices with scores and
    relevance flags."""
    with open(path, "w") as f:
        for r in rankings:
            record = {
                "query_index": int(r.query_index),
                "top_k": [
                    [int(g), float(s), bool(rel)]
                    for g, s, rel in zip(r.order[:k], r.similarities[:k],
                                         r.relevant[:k])
                ],
            }
            f.write(json.dumps(record) + "\n")
