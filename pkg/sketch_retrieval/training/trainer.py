"""
Epoch loop: in-batch triplets on retrieval vectors plus the relation loss
over every sketch/photo pair of the batch, optimised with AdamW.

Batches are fixed by the seed (redrawn per epoch when reshuffling). Each
batch draws negatives and dropout masks from its own generator keyed on
(seed, epoch, batch), so masks change between epochs and reruns are bit-identical.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..autodiff import AdamW, AdamWHyper, Tensor, backward, get_tape, save_checkpoint
from ..autodiff import tensor as ops
from ..config import Settings, write_config
from ..data.corpus import Corpus
from ..data.records import ImageSample, SampleRecord
from ..model.network import (
    SketchPhotoMatcher,
    build_model,
    categories_path_for,
    config_path_for,
    write_trained_categories,
)
from ..model.sequence import TokenSequence
from .losses import distance_triplet_loss, relation_loss, total_loss

_LOGGER = logging.getLogger("sketch-retrieval.train")

TRACE_HEADER = "# sketch-retrieval loss trace v1"


@dataclass(frozen=True)
class EpochLoss:
    epoch: int
    triplet: float
    relation: float
    total: float


@dataclass
class TrainResult:
    model: SketchPhotoMatcher
    trace: list[EpochLoss] = field(default_factory=list)
    checkpoint: Optional[Path] = None
    trace_path: Optional[Path] = None


def plan_batches(count: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    if batch_size < 2:
        raise ValueError(f"train: batch_size must be at least 2, got {batch_size}")
    order = rng.permutation(count)
    return [order[start : start + batch_size] for start in range(0, count, batch_size)]


def batch_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Generator for the negatives and dropout masks of batch `index` in `epoch`."""

    return np.random.default_rng([seed, epoch, index])


def _pick_negatives(labels: np.ndarray, rng: np.random.Generator) -> list[Optional[int]]:
    negatives: list[Optional[int]] = []
    for label in labels:
        candidates = np.flatnonzero(labels != label)
        negatives.append(int(rng.choice(candidates)) if candidates.size else None)
    return negatives


class Trainer:
    def __init__(self, model: SketchPhotoMatcher, settings: Settings) -> None:
        self.model = model
        self.settings = settings
        cfg = settings.train
        self.optimizer = AdamW(
            model.named_parameters(),
            lr=cfg.lr,
            hyper=AdamWHyper(beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps, weight_decay=cfg.weight_decay),
        )

    def _distance(self, a: Tensor, b: Tensor) -> Tensor:
        return ops.norm(ops.sub(a, b))

    def batch_loss(
        self,
        sketches: list[ImageSample],
        photos: list[ImageSample],
        rng: np.random.Generator,
    ) -> tuple[Optional[Tensor], Optional[Tensor]]:
        """(triplet, relation) losses of one batch; either may be None when nothing applies."""

        model, cfg = self.model, self.settings
        granularity = cfg.train.label_granularity
        sketch_labels = np.array([s.label(granularity) for s in sketches])
        photo_labels = np.array([p.label(granularity) for p in photos])
        sketch_seqs = [model.embed(s) for s in sketches]
        photo_seqs = [model.embed(p) for p in photos]

        need_pairs = cfg.train.relation_loss or cfg.cross.triplet_source == "cross"
        interacted: dict[tuple[int, int], tuple[TokenSequence, TokenSequence]] = {}
        if need_pairs:
            for i, s in enumerate(sketch_seqs):
                for j, p in enumerate(photo_seqs):
                    interacted[i, j] = model.interact(s, p)

        def distance(i: int, j: int) -> Tensor:
            if cfg.cross.triplet_source == "cross":
                s, p = interacted[i, j]
            else:
                s, p = sketch_seqs[i], photo_seqs[j]
            return self._distance(model.retrieval_vector(s), model.retrieval_vector(p))

        positive, negative = [], []
        negatives = _pick_negatives(photo_labels, rng) if cfg.encoder.use_ret else []
        for i, j in enumerate(negatives):
            if j is None or photo_labels[j] == sketch_labels[i]:
                continue
            positive.append(distance(i, i))
            negative.append(distance(i, j))
        triplet = distance_triplet_loss(positive, negative, cfg.train.margin) if positive else None
        if triplet is None and cfg.encoder.use_ret:
            _LOGGER.warning("Batch of %d pairs has no valid negatives; triplet term skipped", len(sketches))

        relation = None
        if cfg.train.relation_loss:
            keys = sorted(interacted)
            kernels = [model.kernel(*interacted[key]) for key in keys]
            scores = model.relation_scores(kernels, rng)
            matches = np.array([sketch_labels[i] == photo_labels[j] for i, j in keys], dtype=np.float64)
            relation = relation_loss(scores, matches)
        return triplet, relation

    def step(
        self, sketches: list[ImageSample], photos: list[ImageSample], rng: np.random.Generator
    ) -> Optional[EpochLoss]:
        """One optimizer update; None when the batch has no loss term and is skipped."""

        get_tape().clear()
        self.optimizer.zero_grad()
        triplet, relation = self.batch_loss(sketches, photos, rng)
        if triplet is None and relation is None:
            return None
        if triplet is None:
            loss = relation
        else:
            loss = total_loss(triplet, relation)
        backward(loss)
        self.optimizer.step(skip_missing=True)
        return EpochLoss(
            0,
            0.0 if triplet is None else triplet.item(),
            0.0 if relation is None else relation.item(),
            loss.item(),
        )


def _training_pairs(corpus: Corpus) -> list[tuple[SampleRecord, SampleRecord]]:
    pairs = corpus.pairs("train")
    categories = {sketch.category_id for sketch, _ in pairs}
    if len(categories) < 2:
        raise ValueError(f"train: need at least 2 training categories, corpus has {len(categories)}")
    return pairs


def train(
    corpus: Corpus,
    settings: Settings,
    checkpoint: Optional[Path] = None,
    model: Optional[SketchPhotoMatcher] = None,
) -> TrainResult:
    """Run the configured epochs; write the checkpoint, its config and the loss trace when a path is given."""

    pairs = _training_pairs(corpus)
    model = model or build_model(settings)
    model.trained_categories = {
        cid: corpus.category_names.get(cid, "") for cid in sorted({s.category_id for s, _ in pairs})
    }
    model.train()
    trainer = Trainer(model, settings)
    cfg = settings.train
    sketches = corpus.load_many(s for s, _ in pairs)
    photos = corpus.load_many(p for _, p in pairs)
    _LOGGER.info(
        "Training on %d pairs from %d categories for %d epochs",
        len(pairs),
        len({s.category_id for s, _ in pairs}),
        cfg.epochs,
    )

    result = TrainResult(model=model)
    fixed_plan = plan_batches(len(pairs), cfg.batch_size, np.random.default_rng([settings.seed, 0]))
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        plan = (
            plan_batches(len(pairs), cfg.batch_size, np.random.default_rng([settings.seed, epoch]))
            if cfg.reshuffle_each_epoch
            else fixed_plan
        )
        sums, counted = np.zeros(3), 0
        for index, batch in enumerate(plan):
            losses = trainer.step(
                [sketches[i] for i in batch],
                [photos[i] for i in batch],
                batch_rng(settings.seed, epoch, index),
            )
            if losses is None:
                _LOGGER.debug("epoch %d batch %d: skipped", epoch, index)
                continue
            sums += (losses.triplet, losses.relation, losses.total)
            counted += 1
            _LOGGER.debug("epoch %d batch %d: total %.6f", epoch, index, losses.total)
        if counted == 0:
            _LOGGER.warning("epoch %d: every batch was skipped; losses recorded as nan", epoch)
            triplet = relation = total = float("nan")
        else:
            triplet, relation, total = (sums / counted).tolist()
        result.trace.append(EpochLoss(epoch, triplet, relation, total))
        _LOGGER.info(
            "epoch %d/%d: triplet %.4f relation %.4f total %.4f (%.1fs)",
            epoch,
            cfg.epochs,
            triplet,
            relation,
            total,
            time.perf_counter() - started,
        )

    model.eval()
    if checkpoint is not None:
        checkpoint = Path(checkpoint)
        result.checkpoint = save_checkpoint(checkpoint, model.state_dict())
        write_config(settings, config_path_for(checkpoint))
        write_trained_categories(categories_path_for(checkpoint), model.trained_categories)
        result.trace_path = write_loss_trace(trace_path_for(checkpoint), result.trace)
    return result


def trace_path_for(checkpoint: Path) -> Path:
    return checkpoint.with_name(checkpoint.name + ".loss.csv")


def write_loss_trace(path: Path, trace: list[EpochLoss]) -> Path:
    lines = [TRACE_HEADER, "epoch,triplet,relation,total"]
    lines.extend(f"{e.epoch},{e.triplet!r},{e.relation!r},{e.total!r}" for e in trace)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_loss_trace(path: Path) -> list[EpochLoss]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != TRACE_HEADER:
        raise ValueError(f"{path}: missing '{TRACE_HEADER}' header")
    trace = []
    for line in lines[2:]:
        epoch, triplet, relation, total = line.split(",")
        trace.append(EpochLoss(int(epoch), float(triplet), float(relation), float(total)))
    return trace


__all__ = [
    "EpochLoss",
    "TrainResult",
    "Trainer",
    "batch_rng",
    "config_path_for",
    "plan_batches",
    "read_loss_trace",
    "trace_path_for",
    "train",
    "write_loss_trace",
]
