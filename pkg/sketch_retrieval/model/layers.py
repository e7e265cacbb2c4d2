import logging
import math
from typing import Optional

import numpy as np

from ..autodiff import Module, Tensor, init_normal, no_grad, parameter
from ..autodiff import tensor as ops

_LOGGER = logging.getLogger("sketch-retrieval.model")


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.weight = parameter(init_normal(rng, (in_features, out_features), fan_in=in_features))
        self.bias = parameter(np.zeros(out_features))

    @property
    def in_features(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        return ops.affine(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        stride: int,
        rng: np.random.Generator,
    ) -> None:
        super().__init__()
        fan_in = in_channels * kernel * kernel
        self.weight = parameter(init_normal(rng, (out_channels, in_channels, kernel, kernel), fan_in=fan_in))
        self.bias = parameter(np.zeros(out_channels))
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding="same")


class LayerNorm(Module):
    def __init__(self, width: int) -> None:
        super().__init__()
        self.gamma = parameter(np.ones(width))
        self.beta = parameter(np.zeros(width))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta)


class MLP(Module):
    def __init__(self, width: int, ratio: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.fc1 = Linear(width, width * ratio, rng)
        self.fc2 = Linear(width * ratio, width, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ops.relu(self.fc1(x)))


class MultiHeadAttention(Module):
    """
    Scaled dot-product attention with `heads` heads of width d / heads.

    Queries come from `xq`, keys and values from `xkv`; self-attention passes
    the same matrix twice.
    """

    def __init__(self, width: int, heads: int, rng: np.random.Generator) -> None:
        super().__init__()
        if width % heads:
            raise ValueError(f"attention: width {width} is not divisible by {heads} heads")
        self.heads = heads
        self.head_width = width // heads
        self.query = Linear(width, width, rng)
        self.key = Linear(width, width, rng)
        self.value = Linear(width, width, rng)
        self.out = Linear(width, width, rng)

    @property
    def width(self) -> int:
        return self.query.in_features

    def _head(self, x: Tensor, head: int) -> Tensor:
        start = head * self.head_width
        return ops.slice_cols(x, start, start + self.head_width)

    def __call__(self, xq: Tensor, xkv: Tensor) -> Tensor:
        if xq.shape[1] != self.width or xkv.shape[1] != self.width:
            raise ValueError(f"attention: token width {xq.shape[1]}/{xkv.shape[1]} does not match weights {self.width}")
        q, k, v = self.query(xq), self.key(xkv), self.value(xkv)
        scale = 1.0 / math.sqrt(self.head_width)
        outputs = []
        for head in range(self.heads):
            logits = ops.scale(ops.matmul(self._head(q, head), ops.transpose(self._head(k, head))), scale)
            outputs.append(ops.matmul(ops.softmax(logits), self._head(v, head)))
        merged = outputs[0] if self.heads == 1 else ops.concat_cols(outputs)
        return self.out(merged)

    def logits(self, xq: Tensor, xkv: Tensor) -> np.ndarray:
        """Per-head scaled logits Q·Kᵀ/√d_head as an array (heads, m, n); nothing is recorded."""

        with no_grad():
            q = self.query(xq).data
            k = self.key(xkv).data
        m, n = q.shape[0], k.shape[0]
        q = q.reshape(m, self.heads, self.head_width).transpose(1, 0, 2)
        k = k.reshape(n, self.heads, self.head_width).transpose(1, 0, 2)
        return q @ k.transpose(0, 2, 1) / math.sqrt(self.head_width)

    def weights(self, xq: Tensor, xkv: Tensor) -> np.ndarray:
        """Per-head attention weights (heads, m, n); row i is a distribution over the n keys."""

        logits = self.logits(xq, xkv)
        weights = np.exp(logits - logits.max(axis=-1, keepdims=True))
        return weights / weights.sum(axis=-1, keepdims=True)

    def query_scores(self, query: Tensor, keys: Tensor) -> np.ndarray:
        """Softmax of one query row over `keys`, averaged across heads."""

        return self.weights(query, keys)[:, 0, :].mean(axis=0)


class TransformerBlock(Module):
    """Pre-norm attention and MLP, each with a residual add."""

    def __init__(
        self,
        width: int,
        heads: int,
        mlp_ratio: int,
        rng: np.random.Generator,
        *,
        use_mlp: bool = True,
    ) -> None:
        super().__init__()
        self.norm1 = LayerNorm(width)
        self.attn = MultiHeadAttention(width, heads, rng)
        self.norm2: Optional[LayerNorm] = LayerNorm(width) if use_mlp else None
        self.mlp: Optional[MLP] = MLP(width, mlp_ratio, rng) if use_mlp else None

    def __call__(self, x: Tensor, context: Optional[Tensor] = None) -> Tensor:
        h = self.norm1(x)
        kv = h if context is None else self.norm1(context)
        x = ops.add(x, self.attn(h, kv))
        if self.mlp is not None:
            x = ops.add(x, self.mlp(self.norm2(x)))
        return x


__all__ = ["Conv2d", "LayerNorm", "Linear", "MLP", "MultiHeadAttention", "TransformerBlock"]
