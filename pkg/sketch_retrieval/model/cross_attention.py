"""
Swapped-query cross-attention: the sketch branch queries photo keys/values
and the photo branch queries sketch keys/values through one shared block.
"""

import numpy as np

from ..autodiff import Module
from ..config import CrossAttnConfig
from .encoder import query_scores, select_tokens
from .layers import TransformerBlock
from .sequence import TokenSequence


class CrossAttention(Module):
    def __init__(self, config: CrossAttnConfig, width: int, mlp_ratio: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.config = config
        self.block = TransformerBlock(width, config.heads, mlp_ratio, rng, use_mlp=config.mlp)

    def cross_attend(self, sketch: TokenSequence, photo: TokenSequence) -> tuple[TokenSequence, TokenSequence]:
        if sketch.width != photo.width:
            raise ValueError(f"cross_attend: sketch width {sketch.width} differs from photo width {photo.width}")
        xs, xp = sketch.stacked(), photo.stacked()
        return sketch.unstack(self.block(xs, context=xp)), photo.unstack(self.block(xp, context=xs))

    def ca_select(self, sketch: TokenSequence, photo: TokenSequence, keep_rate: float) -> TokenSequence:
        """Reduce the photo's alive tokens to those the sketch retrieval token attends to most."""

        if keep_rate == 1.0:
            return photo
        if sketch.ret is None:
            raise ValueError("ca_select: the sketch sequence carries no retrieval token")
        return select_tokens(photo, query_scores(self.block, sketch.ret, photo.tokens), keep_rate)


__all__ = ["CrossAttention"]
