"""
Retrieval metrics over ranked galleries.

`relevance` maps each query id to the set of gallery ids that count as
correct for it (same category, or same instance in the fine-grained protocol).
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .ranking import RankingResult

_LOGGER = logging.getLogger("sketch-retrieval.eval")

REPORT_HEADER = "# sketch-retrieval metrics v1"

Relevance = Mapping[str, set[str]]


def _hits(ranking: RankingResult, relevance: Relevance) -> np.ndarray:
    relevant = relevance.get(ranking.query_id, set())
    return np.array([gid in relevant for gid in ranking.gallery_ids], dtype=bool)


def _total_relevant(ranking: RankingResult, relevance: Relevance) -> int:
    return int(_hits(ranking, relevance).sum())


def average_precision(hits: Sequence[bool], cutoff: int = 0) -> float:
    """
    Mean precision at the rank of each relevant item. With a positive
    `cutoff` only the first `cutoff` ranks are scored, and the mean runs over
    the relevant items found there.
    """

    hits = np.asarray(hits, dtype=bool)
    if cutoff > 0:
        hits = hits[:cutoff]
    if not hits.any():
        return 0.0
    ranks = np.flatnonzero(hits) + 1
    precisions = np.cumsum(hits)[ranks - 1] / ranks
    return float(precisions.mean())


def per_query_average_precision(
    rankings: Sequence[RankingResult],
    relevance: Relevance,
    cutoff: int = 0,
) -> dict[str, float]:
    values = {}
    for ranking in rankings:
        hits = _hits(ranking, relevance)
        if not hits.any():
            raise ValueError(f"mAP: query {ranking.query_id} has no relevant gallery items")
        values[ranking.query_id] = average_precision(hits, cutoff)
    return values


def mean_average_precision(rankings: Sequence[RankingResult], relevance: Relevance, cutoff: int = 0) -> float:
    if not rankings:
        raise ValueError("mAP: no rankings")
    return float(np.mean(list(per_query_average_precision(rankings, relevance, cutoff).values())))


def _check_k(k: int) -> None:
    if k < 1:
        raise ValueError(f"K must be at least 1, got {k}")


def precision_at_k(rankings: Sequence[RankingResult], relevance: Relevance, k: int) -> float:
    """Mean fraction of relevant items among the top min(K, gallery size)."""

    _check_k(k)
    values = []
    for ranking in rankings:
        top = _hits(ranking, relevance)[:k]
        values.append(top.mean() if top.size else 0.0)
    return float(np.mean(values))


def accuracy_at_k(rankings: Sequence[RankingResult], relevance: Relevance, k: int) -> float:
    """Fraction of queries with a true match in the top K."""

    _check_k(k)
    return float(np.mean([_hits(ranking, relevance)[:k].any() for ranking in rankings]))


def expected_random_average_precision(relevant: int, total: int) -> float:
    """Expected AP of a uniformly random ranking of `total` items, `relevant` of them correct."""

    if not 1 <= relevant <= total:
        raise ValueError(f"expected AP: need 1 <= relevant <= total, got {relevant}/{total}")
    if total == 1:
        return 1.0
    harmonic = float(np.sum(1.0 / np.arange(1, total + 1)))
    return harmonic / total + (relevant - 1) / (total * (total - 1)) * (total - harmonic)


def expected_random_map(rankings: Sequence[RankingResult], relevance: Relevance) -> float:
    return float(
        np.mean(
            [
                expected_random_average_precision(_total_relevant(r, relevance), len(r.gallery_ids))
                for r in rankings
            ]
        )
    )


@dataclass
class MetricReport:
    mode: str
    map: float
    map_cutoff: int = 0
    prec_at: dict[int, float] = field(default_factory=dict)
    acc_at: dict[int, float] = field(default_factory=dict)
    per_query_ap: dict[str, float] = field(default_factory=dict)
    random_map: float = 0.0
    gallery_size: int = 0

    def __post_init__(self) -> None:
        values = [self.map, self.random_map, *self.prec_at.values(), *self.acc_at.values()]
        if any(not 0.0 <= v <= 1.0 for v in values):
            raise ValueError("MetricReport: metric values must lie in [0, 1]")

    @property
    def n_queries(self) -> int:
        return len(self.per_query_ap)

    def summary(self) -> str:
        label = f"mAP@{self.map_cutoff}" if self.map_cutoff else "mAP"
        parts = [f"{label} {self.map:.4f}"]
        parts.extend(f"Prec@{k} {v:.4f}" for k, v in sorted(self.prec_at.items()))
        parts.extend(f"acc@{k} {v:.4f}" for k, v in sorted(self.acc_at.items()))
        parts.append(f"random mAP {self.random_map:.4f}")
        return f"[{self.mode}] " + ", ".join(parts)

    def to_text(self) -> str:
        lines = [
            REPORT_HEADER,
            f"mode\t{self.mode}",
            f"queries\t{self.n_queries}",
            f"gallery_size\t{self.gallery_size}",
            f"map_cutoff\t{self.map_cutoff}",
            f"map\t{self.map!r}",
            f"random_map\t{self.random_map!r}",
        ]
        lines.extend(f"prec@{k}\t{v!r}" for k, v in sorted(self.prec_at.items()))
        lines.extend(f"acc@{k}\t{v!r}" for k, v in sorted(self.acc_at.items()))
        lines.extend(f"ap\t{qid}\t{v!r}" for qid, v in self.per_query_ap.items())
        return "\n".join(lines) + "\n"

    def write(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text(), encoding="utf-8")
        return path


def build_report(
    rankings: Sequence[RankingResult],
    relevance: Relevance,
    ks: Sequence[int],
    map_cutoff: int = 0,
) -> MetricReport:
    if not rankings:
        raise ValueError("MetricReport: no rankings to score")
    per_query = per_query_average_precision(rankings, relevance, map_cutoff)
    return MetricReport(
        mode=rankings[0].mode,
        map=float(np.mean(list(per_query.values()))),
        map_cutoff=map_cutoff,
        prec_at={k: precision_at_k(rankings, relevance, k) for k in ks},
        acc_at={k: accuracy_at_k(rankings, relevance, k) for k in ks},
        per_query_ap=per_query,
        random_map=expected_random_map(rankings, relevance),
        gallery_size=len(rankings[0].gallery_ids),
    )


__all__ = [
    "MetricReport",
    "accuracy_at_k",
    "average_precision",
    "build_report",
    "expected_random_average_precision",
    "expected_random_map",
    "mean_average_precision",
    "per_query_average_precision",
    "precision_at_k",
]
