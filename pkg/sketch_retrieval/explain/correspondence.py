import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..autodiff import no_grad
from ..data.records import ImageSample
from ..model.network import SketchPhotoMatcher
from ..model.relation import KernelMatrix

_LOGGER = logging.getLogger("sketch-retrieval.explain")

CORRESPONDENCE_HEADER = "# sketch-retrieval correspondences v1"


@dataclass
class CorrespondenceSet:
    """For each alive sketch patch, photo patches best-first with their kernel values."""

    source_id: str
    matches: dict[int, list[tuple[int, float]]] = field(default_factory=dict)

    def best(self, sketch_patch: int) -> int:
        return self.matches[sketch_patch][0][0]


def pair_kernel(model: SketchPhotoMatcher, sketch: ImageSample, photo: ImageSample) -> KernelMatrix:
    with no_grad():
        return model.match(model.embed(sketch), model.embed(photo))


def ranked_columns(row: np.ndarray, alive_cols: np.ndarray) -> list[int]:
    """Alive column indices by descending value, lower index first on ties."""

    cols = np.flatnonzero(alive_cols)
    return sorted(cols.tolist(), key=lambda j: (-row[j], j))


def correspondences(kernel: KernelMatrix, top_k: int, source_id: str = "") -> CorrespondenceSet:
    if top_k < 1:
        raise ValueError(f"correspondences: top_k must be at least 1, got {top_k}")
    values = kernel.array
    alive_cols = int(kernel.col_alive.sum())
    if top_k > alive_cols:
        _LOGGER.warning("top_k %d exceeds %d alive photo tokens; truncating", top_k, alive_cols)
    result = CorrespondenceSet(source_id)
    for i in np.flatnonzero(kernel.row_alive).tolist():
        cols = ranked_columns(values[i], kernel.col_alive)[:top_k]
        result.matches[i] = [(j, float(values[i, j])) for j in cols]
    return result


def write_correspondences(path: Path, result: CorrespondenceSet) -> Path:
    lines = [CORRESPONDENCE_HEADER, "sketch_patch\trank\tphoto_patch\tvalue\tsource"]
    for i, matches in sorted(result.matches.items()):
        for rank, (j, value) in enumerate(matches, start=1):
            lines.append(f"{i}\t{rank}\t{j}\t{value:.9g}\t{result.source_id}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


__all__ = ["CorrespondenceSet", "correspondences", "pair_kernel", "ranked_columns", "write_correspondences"]
