import logging
from dataclasses import dataclass

import numpy as np

from ..autodiff import constant, no_grad
from ..data.records import ImageSample
from ..model.network import SketchPhotoMatcher
from ..model.relation import KernelMatrix, RelationNetwork
from .correspondence import pair_kernel

_LOGGER = logging.getLogger("sketch-retrieval.explain")


@dataclass(frozen=True)
class InfluenceResult:
    sketch_patch: int
    photo_patch: int
    drop: float
    base_score: float
    granularity: str


def ablate(values: np.ndarray, i: int, j: int, granularity: str) -> np.ndarray:
    """Copy of the kernel with entry (i, j) zeroed, or sketch row i and photo column j for `token`."""

    out = values.copy()
    if granularity == "entry":
        out[i, j] = 0.0
    elif granularity == "token":
        out[i, :] = 0.0
        out[:, j] = 0.0
    else:
        raise ValueError(f"influence: granularity must be entry or token, got {granularity!r}")
    return out


def _score(relation: RelationNetwork, kernel: KernelMatrix, values: np.ndarray) -> float:
    return relation.relation_score(KernelMatrix(constant(values), kernel.row_alive, kernel.col_alive)).item()


def leave_one_out(relation: RelationNetwork, kernel: KernelMatrix, granularity: str = "entry") -> InfluenceResult:
    """
    Remove each alive (i, j) pair in turn and keep the largest drop in the
    relation score; ties go to the lexicographically smallest pair.
    """

    was_training = relation.training
    relation.eval()
    try:
        with no_grad():
            base = _score(relation, kernel, kernel.array)
            best = None
            for i in np.flatnonzero(kernel.row_alive).tolist():
                for j in np.flatnonzero(kernel.col_alive).tolist():
                    drop = base - _score(relation, kernel, ablate(kernel.array, i, j, granularity))
                    if best is None or drop > best[2]:
                        best = (i, j, drop)
    finally:
        relation.train(was_training)
    if best is None:
        raise ValueError("influence: the kernel has no alive pairs")
    return InfluenceResult(best[0], best[1], best[2], base, granularity)


def most_influential_pair(
    model: SketchPhotoMatcher,
    sketch: ImageSample,
    photo: ImageSample,
    granularity: str = "entry",
) -> InfluenceResult:
    result = leave_one_out(model.relation, pair_kernel(model, sketch, photo), granularity)
    _LOGGER.info(
        "Most influential pair for %s/%s: sketch %d, photo %d (drop %.6f of %.6f)",
        sketch.sample_id,
        photo.sample_id,
        result.sketch_patch,
        result.photo_patch,
        result.drop,
        result.base_score,
    )
    return result


__all__ = ["InfluenceResult", "ablate", "leave_one_out", "most_influential_pair"]
