"""
Patch-replacement synthesis: rebuild a sketch from photo patches.

In `retrieved` mode each sketch patch takes the best-matching patch of the
top-ranked gallery photo. In `gallery` mode it takes the pixel mean of the k
best (photo, patch) candidates across the whole gallery. The provenance
records every source patch so the output can be replayed exactly.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..autodiff import no_grad
from ..data.records import ImageSample
from ..evaluation.ranking import encode_items, rank_rn
from ..model.network import SketchPhotoMatcher
from ..model.tokenizer import patchify, unpatchify
from .correspondence import ranked_columns

_LOGGER = logging.getLogger("sketch-retrieval.explain")

PROVENANCE_HEADER = "# sketch-retrieval provenance v1"


@dataclass(frozen=True)
class PatchSource:
    sketch_patch: int
    photo_id: str
    photo_patch: int


@dataclass
class SynthesisResult:
    pixels: np.ndarray
    provenance: list[PatchSource]
    mode: str
    k: int


def _gather(sketch: ImageSample, sources: Mapping[str, ImageSample], provenance: Sequence[PatchSource], side: int):
    patches = patchify(sketch.pixels, side).copy()
    photo_patches = {pid: patchify(image.pixels, side) for pid, image in sources.items()}
    grouped: dict[int, list[np.ndarray]] = {}
    for entry in provenance:
        grouped.setdefault(entry.sketch_patch, []).append(photo_patches[entry.photo_id][entry.photo_patch])
    for index, chosen in grouped.items():
        patches[index] = chosen[0] if len(chosen) == 1 else np.mean(np.stack(chosen), axis=0)
    rows, cols = sketch.height // side, sketch.width // side
    return unpatchify(patches, (rows, cols), side, sketch.pixels.shape[2])


def replay_provenance(
    sketch: ImageSample,
    sources: Mapping[str, ImageSample],
    provenance: Sequence[PatchSource],
    patch_side: int,
) -> np.ndarray:
    """Rebuild a synthesized image from its provenance; patches without a source keep the sketch pixels."""

    return _gather(sketch, sources, provenance, patch_side)


def patch_replace_synthesis(
    model: SketchPhotoMatcher,
    sketch: ImageSample,
    gallery: Sequence[ImageSample],
    mode: str = "retrieved",
    k: int = 1,
) -> SynthesisResult:
    if not gallery:
        raise ValueError("synthesis: the gallery is empty")
    if mode not in {"retrieved", "gallery"}:
        raise ValueError(f"synthesis: mode must be retrieved or gallery, got {mode!r}")
    if k < 1:
        raise ValueError(f"synthesis: k must be at least 1, got {k}")
    ids = [image.sample_id for image in gallery]
    if len(set(ids)) != len(ids):
        raise ValueError("synthesis: gallery images need unique sample ids")
    side = model.settings.tokenizer.patch_side

    encoded = encode_items(model, gallery)
    query = encode_items(model, [sketch])[0]
    if mode == "retrieved":
        best = rank_rn(model, query, encoded).gallery_ids[0]
        encoded = [item for item in encoded if item.item_id == best]
        k = 1

    with no_grad():
        kernels = {item.item_id: model.match(query.seq, item.seq) for item in encoded}
    order = sorted(kernels)
    provenance: list[PatchSource] = []
    row_alive = kernels[order[0]].row_alive
    for i in np.flatnonzero(row_alive).tolist():
        candidates = []
        for pid in order:
            kernel = kernels[pid]
            for j in ranked_columns(kernel.array[i], kernel.col_alive)[:k]:
                candidates.append((-kernel.array[i, j], pid, j))
        candidates.sort()
        provenance.extend(PatchSource(i, pid, j) for _, pid, j in candidates[:k])

    sources = {image.sample_id: image for image in gallery}
    pixels = _gather(sketch, sources, provenance, side)
    _LOGGER.info("Synthesized %s from %d source patches (%s mode)", sketch.sample_id, len(provenance), mode)
    return SynthesisResult(pixels, provenance, mode, k)


def write_provenance(path: Path, result: SynthesisResult) -> Path:
    lines = [PROVENANCE_HEADER, f"# mode={result.mode} k={result.k}", "sketch_patch\tphoto_id\tphoto_patch"]
    lines.extend(f"{p.sketch_patch}\t{p.photo_id}\t{p.photo_patch}" for p in result.provenance)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_provenance(path: Path) -> list[PatchSource]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != PROVENANCE_HEADER:
        raise ValueError(f"{path}: missing '{PROVENANCE_HEADER}' header")
    entries = []
    for line in lines[3:]:
        if line.strip():
            sketch_patch, photo_id, photo_patch = line.split("\t")
            entries.append(PatchSource(int(sketch_patch), photo_id, int(photo_patch)))
    return entries


__all__ = [
    "PatchSource",
    "SynthesisResult",
    "patch_replace_synthesis",
    "read_provenance",
    "replay_provenance",
    "write_provenance",
]
