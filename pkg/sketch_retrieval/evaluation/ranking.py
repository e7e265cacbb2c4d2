import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence, TypeVar, Union

import numpy as np

from ..autodiff import no_grad
from ..data.records import ImageSample
from ..model.network import SketchPhotoMatcher
from ..model.sequence import TokenSequence

_LOGGER = logging.getLogger("sketch-retrieval.eval")

RANKING_HEADER = "# sketch-retrieval rankings v1"

T = TypeVar("T")
R = TypeVar("R")


@dataclass(frozen=True, eq=False)
class RankingResult:
    """Gallery ids best-first; scores are non-increasing (negated distances in ret mode)."""

    query_id: str
    gallery_ids: tuple[str, ...]
    scores: np.ndarray
    mode: str

    def __post_init__(self) -> None:
        if len(self.gallery_ids) != len(self.scores):
            raise ValueError(f"ranking {self.query_id}: {len(self.gallery_ids)} ids vs {len(self.scores)} scores")
        if len(set(self.gallery_ids)) != len(self.gallery_ids):
            raise ValueError(f"ranking {self.query_id}: gallery ids are not unique")
        if np.any(np.diff(self.scores) > 0):
            raise ValueError(f"ranking {self.query_id}: scores must be non-increasing")

    def top(self, k: int) -> tuple[str, ...]:
        return self.gallery_ids[:k]


@dataclass(frozen=True, eq=False)
class EncodedItem:
    """A sample with its frozen encoder output."""

    sample: ImageSample
    seq: TokenSequence
    vector: np.ndarray

    @property
    def item_id(self) -> str:
        return self.sample.sample_id


Item = Union[ImageSample, EncodedItem]


def parallel_map(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> list[R]:
    """Order-preserving map; each worker thread runs with gradient recording off."""

    def run(item: T) -> R:
        with no_grad():
            return fn(item)

    if workers <= 1 or len(items) <= 1:
        return [run(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, items))


def encode_item(model: SketchPhotoMatcher, item: Item) -> EncodedItem:
    if isinstance(item, EncodedItem):
        return item
    with no_grad():
        seq = model.embed(item).detach()
        vector = model.retrieval_vector(seq).data.reshape(-1).copy()
    return EncodedItem(item, seq, vector)


def encode_items(model: SketchPhotoMatcher, items: Sequence[Item], workers: int = 1) -> list[EncodedItem]:
    return parallel_map(lambda item: encode_item(model, item), list(items), workers)


def order_by_score(gallery_ids: Sequence[str], scores: np.ndarray, query_id: str, mode: str) -> RankingResult:
    """Sort best-first; equal scores fall back to gallery id order."""

    scores = np.asarray(scores, dtype=np.float64)
    order = sorted(range(len(gallery_ids)), key=lambda i: (-scores[i], gallery_ids[i]))
    return RankingResult(query_id, tuple(gallery_ids[i] for i in order), scores[order], mode)


def _check_gallery(gallery: Sequence) -> None:
    if not gallery:
        raise ValueError("ranking: the gallery is empty")


def retrieval_distances(query: np.ndarray, gallery: np.ndarray, distance: str = "euclidean") -> np.ndarray:
    if distance == "euclidean":
        return np.sqrt(((gallery - query[None, :]) ** 2).sum(axis=1))
    if distance == "cosine":
        norms = np.linalg.norm(gallery, axis=1) * np.linalg.norm(query)
        safe = np.where(norms > 0, norms, 1.0)
        return 1.0 - np.where(norms > 0, gallery @ query / safe, 0.0)
    raise ValueError(f"ranking: unknown distance {distance!r}")


def rank_ret(
    model: SketchPhotoMatcher,
    query: Item,
    gallery: Sequence[Item],
    distance: str = "euclidean",
) -> RankingResult:
    """Ascending distance between encoder-output retrieval vectors."""

    _check_gallery(gallery)
    q = encode_item(model, query)
    items = [encode_item(model, g) for g in gallery]
    distances = retrieval_distances(q.vector, np.stack([g.vector for g in items]), distance)
    return order_by_score([g.item_id for g in items], -distances, q.item_id, "ret")


def rank_rn(model: SketchPhotoMatcher, query: Item, gallery: Sequence[Item]) -> RankingResult:
    """Descending relation score of the query against every gallery item."""

    _check_gallery(gallery)
    q = encode_item(model, query)
    items = [encode_item(model, g) for g in gallery]
    with no_grad():
        kernels = [model.match(q.seq, g.seq) for g in items]
        scores = model.relation_scores(kernels).data.reshape(-1)
    return order_by_score([g.item_id for g in items], scores, q.item_id, "rn")


def write_rankings(path: Path, rankings: Sequence[RankingResult]) -> Path:
    """One line per query: query id, then `gallery_id:score` pairs best-first."""

    lines = [RANKING_HEADER]
    for ranking in rankings:
        pairs = "\t".join(f"{gid}:{score:.17g}" for gid, score in zip(ranking.gallery_ids, ranking.scores))
        lines.append(f"{ranking.query_id}\t{pairs}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_rankings(path: Path, mode: str = "") -> list[RankingResult]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != RANKING_HEADER:
        raise ValueError(f"{path}: missing '{RANKING_HEADER}' header")
    rankings = []
    for line in lines[1:]:
        if not line.strip():
            continue
        query_id, *pairs = line.split("\t")
        ids, scores = [], []
        for pair in pairs:
            gid, _, score = pair.rpartition(":")
            ids.append(gid)
            scores.append(float(score))
        rankings.append(RankingResult(query_id, tuple(ids), np.array(scores), mode))
    return rankings


__all__ = [
    "EncodedItem",
    "RankingResult",
    "encode_item",
    "encode_items",
    "order_by_score",
    "parallel_map",
    "rank_rn",
    "rank_ret",
    "read_rankings",
    "retrieval_distances",
    "write_rankings",
]
