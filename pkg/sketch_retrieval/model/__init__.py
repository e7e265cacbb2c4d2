from .cross_attention import CrossAttention
from .encoder import Encoder, keep_count, ret_attention_scores, select_tokens
from .layers import Conv2d, LayerNorm, Linear, MLP, MultiHeadAttention, TransformerBlock
from .network import SketchPhotoMatcher, build_model
from .relation import KernelMatrix, PairConcatKernel, RelationNetwork, cosine_kernel, write_kernel_matrix
from .sequence import TokenSequence
from .tokenizer import Tokenizer, patchify, unpatchify

__all__ = [
    "Conv2d",
    "CrossAttention",
    "Encoder",
    "KernelMatrix",
    "LayerNorm",
    "Linear",
    "MLP",
    "MultiHeadAttention",
    "PairConcatKernel",
    "RelationNetwork",
    "SketchPhotoMatcher",
    "TokenSequence",
    "Tokenizer",
    "TransformerBlock",
    "build_model",
    "cosine_kernel",
    "keep_count",
    "patchify",
    "ret_attention_scores",
    "select_tokens",
    "unpatchify",
    "write_kernel_matrix",
]
