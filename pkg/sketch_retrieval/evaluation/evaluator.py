import logging
import time
from dataclasses import dataclass
from typing import Iterable, Optional

from ..config import Settings
from ..data.corpus import Corpus, ZeroShotViolation, check_zero_shot
from ..data.records import SampleRecord
from ..model.network import SketchPhotoMatcher
from .metrics import MetricReport, Relevance, build_report
from .ranking import RankingResult, encode_items, parallel_map, rank_ret, rank_rn

_LOGGER = logging.getLogger("sketch-retrieval.eval")


@dataclass
class EvaluationResult:
    report: MetricReport
    rankings: list[RankingResult]


def query_and_gallery(
    corpus: Corpus,
    generalized: bool = False,
    split: Optional[str] = "test",
) -> tuple[list[SampleRecord], list[SampleRecord]]:
    """
    Sketches against photos of the `split` categories (every category when
    split is None), plus training photos in the generalized setting.
    """

    queries = corpus.select(split, "sketch")
    gallery = corpus.select(split, "photo")
    if generalized and split == "test":
        gallery = gallery + corpus.select("train", "photo")
    if not queries or not gallery:
        raise ValueError(f"eval: {len(queries)} query sketches and {len(gallery)} gallery photos; both must be nonempty")
    return queries, gallery


def build_relevance(queries: list[SampleRecord], gallery: list[SampleRecord], granularity: str) -> Relevance:
    def key(record: SampleRecord) -> int:
        return record.instance_id if granularity == "instance" else record.category_id

    by_key: dict[int, set[str]] = {}
    for record in gallery:
        by_key.setdefault(key(record), set()).add(record.sample_id)
    return {q.sample_id: by_key.get(key(q), set()) for q in queries}


def check_unseen(model: SketchPhotoMatcher, corpus: Corpus, categories: Iterable[int]) -> None:
    """
    Raise ZeroShotViolation when any of `categories` was trained on.

    Categories match by shape name when both sides carry one, by id otherwise.
    """

    trained = model.trained_categories
    if not trained:
        return
    trained_names = {name for name in trained.values() if name}
    seen = []
    for cid in sorted(set(categories)):
        name = corpus.category_names.get(cid, "")
        if (name and name in trained_names) or (not name and cid in trained):
            seen.append(f"{cid} ({name})" if name else str(cid))
    if seen:
        raise ZeroShotViolation(f"query categories {', '.join(seen)} were seen in training")


def evaluate(
    model: SketchPhotoMatcher,
    corpus: Corpus,
    settings: Settings,
    mode: Optional[str] = None,
    split: Optional[str] = "test",
) -> EvaluationResult:
    """Zero-shot retrieval over the `split` categories in `ret` or `rn` mode."""

    check_zero_shot(corpus)
    cfg = settings.eval
    mode = mode or cfg.mode
    if mode not in {"ret", "rn"}:
        raise ValueError(f"eval: mode must be ret or rn, got {mode!r}")
    model.eval()
    started = time.perf_counter()

    query_records, gallery_records = query_and_gallery(corpus, cfg.generalized, split)
    check_unseen(model, corpus, (r.category_id for r in query_records))
    queries = encode_items(model, corpus.load_many(query_records), cfg.workers)
    gallery = encode_items(model, corpus.load_many(gallery_records), cfg.workers)
    if mode == "ret":
        rankings = parallel_map(lambda q: rank_ret(model, q, gallery, cfg.distance), queries, cfg.workers)
    else:
        rankings = parallel_map(lambda q: rank_rn(model, q, gallery), queries, cfg.workers)

    relevance = build_relevance(query_records, gallery_records, settings.train.label_granularity)
    report = build_report(rankings, relevance, cfg.ks, cfg.map_cutoff)
    _LOGGER.info(
        "%s (%d queries, %d gallery, %.1fs)",
        report.summary(),
        len(queries),
        len(gallery),
        time.perf_counter() - started,
    )
    return EvaluationResult(report, rankings)


def cross_corpus_evaluate(
    model: SketchPhotoMatcher,
    target: Corpus,
    settings: Settings,
    mode: Optional[str] = None,
) -> EvaluationResult:
    """
    Retrieval on every category of a second corpus, none of which the model
    was trained on. The target's own train/test split is ignored.
    """

    if not model.trained_categories:
        raise ValueError("cross-eval: the model carries no training categories; train it or keep the .categories file")
    check_unseen(model, target, target.categories)
    _LOGGER.info("Cross-corpus evaluation on %s: %d categories", target.root, len(target.categories))
    return evaluate(model, target, settings, mode, split=None)


__all__ = [
    "EvaluationResult",
    "build_relevance",
    "check_unseen",
    "cross_corpus_evaluate",
    "evaluate",
    "query_and_gallery",
]
