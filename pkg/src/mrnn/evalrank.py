"""Candidate ranking by model distance and the retrieval metrics.

Candidates order by ascending distance with ties broken by doc id.
Queries without any relevant candidate cannot contribute to recall@k,
MRR or MAP; they are excluded and counted in the report.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

from mrnn.autodiff import DomainError
from mrnn.data import QueryExample
from mrnn.model import MRNNModel, score_candidates

logger = logging.getLogger("mrnn")


@dataclass
class RankedList:
    query_id: str
    ranking: List[str]  # doc ids, ascending distance
    labels: Dict[str, int]
    distances: Dict[str, float]

    def relevant_ranks(self) -> List[int]:
        """1-based ranks of the relevant documents, ascending."""
        return [i + 1 for i, doc in enumerate(self.ranking) if self.labels[doc] == 1]


def rank_candidates(model: MRNNModel, example: QueryExample, mode: str = "eval") -> RankedList:
    if not example.candidates:
        raise DomainError(f"rank_candidates: query {example.query_id!r} has no candidates")
    cands = [(c.doc_id, c.tokens) for c in example.candidates]
    dists = score_candidates(model, example.query_id, example.tokens, cands, mode=mode)
    order = sorted(zip(dists, (c.doc_id for c in example.candidates)))
    return RankedList(
        query_id=example.query_id,
        ranking=[doc_id for _, doc_id in order],
        labels={c.doc_id: c.label for c in example.candidates},
        distances={doc_id: dist for dist, doc_id in order},
    )


def _thread_count() -> int:
    raw = os.environ.get("MRNN_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def rank_all(model: MRNNModel, examples: Sequence[QueryExample], mode: str = "eval") -> List[RankedList]:
    """Rank every query; parallel across queries when MRNN_THREADS > 1.

    Results assemble in input order regardless of thread interleaving.
    """
    workers = _thread_count()
    if workers == 1 or len(examples) < 2:
        return [rank_candidates(model, ex, mode=mode) for ex in examples]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ex: rank_candidates(model, ex, mode=mode), examples))


def _eligible(lists: Sequence[RankedList]) -> List[RankedList]:
    return [rl for rl in lists if any(v == 1 for v in rl.labels.values())]


def recall_at_k(lists: Sequence[RankedList], k: int) -> float:
    """Fraction of queries with a relevant document in the top k."""
    if k < 1:
        raise DomainError(f"recall_at_k: k must be >= 1, got {k}")
    eligible = _eligible(lists)
    if not eligible:
        return 0.0
    hits = sum(1 for rl in eligible if any(r <= k for r in rl.relevant_ranks()))
    return hits / len(eligible)


def mrr(lists: Sequence[RankedList]) -> float:
    """Mean reciprocal rank of the first relevant document."""
    eligible = _eligible(lists)
    excluded = len(lists) - len(eligible)
    if excluded:
        logger.warning("mrr: excluded %d queries without relevant candidates", excluded)
    if not eligible:
        return 0.0
    return sum(1.0 / rl.relevant_ranks()[0] for rl in eligible) / len(eligible)


def map_metric(lists: Sequence[RankedList]) -> float:
    """Mean over queries of average precision at the relevant ranks."""
    eligible = _eligible(lists)
    excluded = len(lists) - len(eligible)
    if excluded:
        logger.warning("map: excluded %d queries without relevant candidates", excluded)
    if not eligible:
        return 0.0
    total = 0.0
    for rl in eligible:
        ranks = rl.relevant_ranks()
        total += sum((i + 1) / rank for i, rank in enumerate(ranks)) / len(ranks)
    return total / len(eligible)


def build_report(lists: Sequence[RankedList], ks: Sequence[int] = (1, 3, 5)) -> dict:
    """Evaluation report: metric values, per-query ranks, exclusion count."""
    eligible = _eligible(lists)
    report = {
        "queries": len(lists),
        "excluded_no_relevant": len(lists) - len(eligible),
        "metrics": {f"recall@{k}": recall_at_k(lists, k) for k in ks},
        "per_query": {
            rl.query_id: {
                "first_relevant_rank": rl.relevant_ranks()[0] if rl.relevant_ranks() else None,
                "ranking": rl.ranking,
            }
            for rl in lists
        },
    }
    report["metrics"]["mrr"] = mrr(lists)
    report["metrics"]["map"] = map_metric(lists)
    return report
