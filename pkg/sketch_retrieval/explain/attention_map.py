import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..autodiff import no_grad
from ..data.imageio import upscale_grid, write_image
from ..data.records import ImageSample
from ..model.layers import TransformerBlock
from ..model.network import SketchPhotoMatcher
from ..model.sequence import TokenSequence

_LOGGER = logging.getLogger("sketch-retrieval.explain")


@dataclass(frozen=True, eq=False)
class AttentionMap:
    raw: np.ndarray
    normalized: np.ndarray
    alive: np.ndarray
    layer: int
    head: Optional[int]


def ret_query_logits(seq: TokenSequence, block: TransformerBlock, head: Optional[int] = None) -> np.ndarray:
    """Q_ret · K_i / √d_head for each alive token (one head, or the head mean)."""

    if seq.ret is None:
        raise ValueError("attention map: the model has no retrieval token")
    with no_grad():
        logits = block.attn.logits(block.norm1(seq.ret), block.norm1(seq.tokens))[:, 0, :]
    return logits.mean(axis=0) if head is None else logits[head]


def min_max(values: np.ndarray) -> np.ndarray:
    low, high = float(values.min()), float(values.max())
    if high == low:
        return np.zeros_like(values)
    return (values - low) / (high - low)


def scatter_grid(seq: TokenSequence, values: np.ndarray, fill: float) -> np.ndarray:
    grid = np.full(seq.n_patches, fill, dtype=np.float64)
    grid[seq.origin] = values
    return grid.reshape(seq.grid)


def self_attention_map(
    model: SketchPhotoMatcher,
    image: ImageSample,
    layer: Optional[int] = None,
    head: Optional[int] = None,
) -> AttentionMap:
    """
    Retrieval-token attention logits over the patch lattice at `layer`
    (1-based, last by default), min-max normalised. Patches removed before
    that layer take the lowest alive value.
    """

    encoder = model.encoder_for(image.modality)
    depth = len(encoder.blocks)
    layer = depth if layer is None else layer
    if not 1 <= layer <= depth:
        raise ValueError(f"attention map: layer {layer} outside [1, {depth}]")
    heads = encoder.config.heads
    if head is not None and not 0 <= head < heads:
        raise ValueError(f"attention map: head {head} outside [0, {heads})")

    with no_grad():
        start = encoder.attach_ret(model.tokenizer.tokenize(image), model.tokenizer.ret_position())
        if start.ret is None:
            raise ValueError("attention map: the model has no retrieval token")
        seq = encoder.encode(start, image.modality, depth=layer - 1)
        raw_alive = ret_query_logits(seq, encoder.blocks[layer - 1], head)
        final = encoder.encode(start, image.modality)

    raw = scatter_grid(seq, raw_alive, float(raw_alive.min()))
    return AttentionMap(raw=raw, normalized=min_max(raw), alive=final.alive.reshape(final.grid), layer=layer, head=head)


def write_attention_map(path: Path, amap: AttentionMap, patch_side: int) -> tuple[Path, Path]:
    """Write the normalised map and the post-selection alive mask as graymaps."""

    path = Path(path)
    alive_path = path.with_name(path.stem + ".alive.pgm")
    write_image(path, upscale_grid(amap.normalized, patch_side))
    write_image(alive_path, upscale_grid(amap.alive.astype(np.float64), patch_side))
    _LOGGER.info("Attention map (layer %d) written to %s", amap.layer, path)
    return path, alive_path


__all__ = ["AttentionMap", "min_max", "ret_query_logits", "scatter_grid", "self_attention_map", "write_attention_map"]
