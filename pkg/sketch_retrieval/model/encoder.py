import logging
import math
from typing import Optional

import numpy as np

from ..autodiff import Module, Tensor, no_grad, parameter
from ..autodiff import tensor as ops
from ..config import EncoderConfig
from .layers import TransformerBlock
from .sequence import TokenSequence

_LOGGER = logging.getLogger("sketch-retrieval.model")


def keep_count(n_alive: int, keep_rate: float) -> int:
    if not 0.0 < keep_rate <= 1.0:
        raise ValueError(f"keep_rate must lie in (0, 1], got {keep_rate}")
    return max(1, math.ceil(round(keep_rate * n_alive, 9))) if n_alive else 0


def select_tokens(seq: TokenSequence, scores: np.ndarray, keep_rate: float) -> TokenSequence:
    """
    Keep the top ceil(keep_rate · n_alive) tokens by score. Equal scores go to
    the lower patch index; survivors stay in raster order and `ret` is untouched.
    """

    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (seq.n_alive,):
        raise ValueError(f"select_tokens: {scores.shape} scores for {seq.n_alive} alive tokens")
    k = keep_count(seq.n_alive, keep_rate)
    if k == seq.n_alive:
        return seq
    ranked = np.lexsort((seq.origin, -scores))
    rows = np.sort(ranked[:k])
    return seq.keep(rows)


def query_scores(block: TransformerBlock, query: Tensor, keys: Tensor) -> np.ndarray:
    """Head-averaged softmax attention of one (1, d) query over (n, d) keys, both layer-normed by `block`."""

    with no_grad():
        return block.attn.query_scores(block.norm1(query), block.norm1(keys))


def ret_attention_scores(seq: TokenSequence, block: TransformerBlock) -> np.ndarray:
    """Importance of each alive visual token as seen by the retrieval token through `block`."""

    if seq.ret is None:
        raise ValueError("ret_attention_scores: the sequence carries no retrieval token")
    return query_scores(block, seq.ret, seq.tokens)


class Encoder(Module):
    """Pre-norm self-attention stack with a trainable retrieval token and token selection."""

    def __init__(self, config: EncoderConfig, width: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.config = config
        self.ret: Optional[Tensor] = parameter(rng.normal(0.0, 0.02, size=(1, width))) if config.use_ret else None
        self.blocks = [TransformerBlock(width, config.heads, config.mlp_ratio, rng) for _ in range(config.layers)]
        self.width = width

    def attach_ret(self, seq: TokenSequence, position: Optional[Tensor] = None) -> TokenSequence:
        if self.ret is None:
            return seq.with_ret(None)
        ret = self.ret if position is None else ops.add(self.ret, position)
        return seq.with_ret(ret)

    def encode(
        self,
        seq: TokenSequence,
        modality: str,
        keep_rate: Optional[float] = None,
        depth: Optional[int] = None,
    ) -> TokenSequence:
        """Run the first `depth` blocks (all by default), selecting tokens after the configured layers."""

        if seq.width != self.width:
            raise ValueError(f"encode: token width {seq.width} does not match encoder width {self.width}")
        rate = self.config.keep_rate(modality) if keep_rate is None else keep_rate
        blocks = self.blocks if depth is None else self.blocks[:depth]
        for index, block in enumerate(blocks, start=1):
            selecting = rate < 1.0 and index in self.config.selection_layers
            scores = ret_attention_scores(seq, block) if selecting else None
            seq = seq.unstack(block(seq.stacked()))
            if scores is not None:
                before = seq.n_alive
                seq = select_tokens(seq, scores, rate)
                _LOGGER.debug("%s layer %d: kept %d of %d tokens", modality, index, seq.n_alive, before)
        return seq

    def ret_attention_scores(self, seq: TokenSequence, layer: Optional[int] = None) -> np.ndarray:
        if not self.blocks:
            raise ValueError("ret_attention_scores: the encoder has no layers")
        return ret_attention_scores(seq, self.blocks[(layer or len(self.blocks)) - 1])


__all__ = ["Encoder", "keep_count", "query_scores", "ret_attention_scores", "select_tokens"]
