from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..autodiff import Tensor, constant
from ..autodiff import tensor as ops


@dataclass(frozen=True, eq=False)
class Triplet:
    """Retrieval vectors of an anchor sketch, a same-label photo and a different-label photo."""

    anchor: Tensor
    positive: Tensor
    negative: Tensor


def triplet_term(positive_distance: Tensor, negative_distance: Tensor, margin: float) -> Tensor:
    return ops.relu(ops.add(ops.sub(positive_distance, negative_distance), margin))


def triplet_loss(triplets: Sequence[Triplet], margin: float) -> Tensor:
    """Mean hinge max(‖a − p‖ − ‖a − n‖ + margin, 0) with euclidean distances."""

    if not triplets:
        raise ValueError("triplet_loss: empty batch")
    if margin < 0:
        raise ValueError(f"triplet_loss: margin must be non-negative, got {margin}")
    terms = [
        triplet_term(ops.norm(ops.sub(t.anchor, t.positive)), ops.norm(ops.sub(t.anchor, t.negative)), margin)
        for t in triplets
    ]
    return ops.mean(ops.stack(terms))


def distance_triplet_loss(positive: Sequence[Tensor], negative: Sequence[Tensor], margin: float) -> Tensor:
    """The same hinge over precomputed scalar distances d⁺ and d⁻."""

    if not positive or len(positive) != len(negative):
        raise ValueError(f"triplet_loss: {len(positive)} positive vs {len(negative)} negative distances")
    return ops.mean(ops.stack([triplet_term(p, n, margin) for p, n in zip(positive, negative)]))


def relation_loss(scores: Tensor, matches: np.ndarray) -> Tensor:
    """Squared error against 0/1 match labels, averaged over the scored pairs."""

    targets = np.asarray(matches, dtype=np.float64).reshape(scores.shape)
    if targets.size == 0:
        raise ValueError("relation_loss: no scored pairs")
    return ops.mean_square(ops.sub(scores, constant(targets)))


def total_loss(triplet: Tensor, relation: Optional[Tensor]) -> Tensor:
    if relation is None:
        return triplet
    return ops.add(triplet, relation)


__all__ = ["Triplet", "distance_triplet_loss", "relation_loss", "total_loss", "triplet_loss", "triplet_term"]
