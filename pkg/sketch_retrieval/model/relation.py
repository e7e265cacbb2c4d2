import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..autodiff import Module, Tensor, constant, init_normal, parameter
from ..autodiff import tensor as ops
from ..config import RelationConfig
from .layers import Linear
from .sequence import TokenSequence

_LOGGER = logging.getLogger("sketch-retrieval.model")

KERNEL_HEADER = "# sketch-retrieval kernel v1"


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """
    Full n × n similarity layout between sketch rows and photo columns.
    Entries involving a removed token are exactly zero.
    """

    values: Tensor
    row_alive: np.ndarray
    col_alive: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def array(self) -> np.ndarray:
        return self.values.data


def _full_layout(block: Tensor, sketch: TokenSequence, photo: TokenSequence) -> KernelMatrix:
    if sketch.n_patches != photo.n_patches:
        raise ValueError(f"kernel: sketch has {sketch.n_patches} patches, photo {photo.n_patches}")
    n = sketch.n_patches
    values = ops.place(block, sketch.origin, photo.origin, (n, n))
    return KernelMatrix(values, sketch.alive, photo.alive)


def cosine_kernel(sketch: TokenSequence, photo: TokenSequence) -> KernelMatrix:
    """Cosine similarity of every alive sketch/photo token pair; zero-norm tokens give 0."""

    if sketch.width != photo.width:
        raise ValueError(f"cosine_kernel: token widths differ ({sketch.width} vs {photo.width})")
    a = ops.l2_normalize_rows(sketch.tokens)
    b = ops.l2_normalize_rows(photo.tokens)
    block = ops.clip(ops.matmul(a, ops.transpose(b)), -1.0, 1.0)
    return _full_layout(block, sketch, photo)


class PairConcatKernel(Module):
    """
    Learned pair score on the concatenation [x_i; y_j]: one ReLU hidden layer
    of width d, then a scalar head. The first layer splits into a sketch half
    and a photo half, so the pre-activation of entry (i, j) is row_i + col_j.
    """

    def __init__(self, width: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.sketch_weight = parameter(init_normal(rng, (width, width), fan_in=2 * width))
        self.photo_weight = parameter(init_normal(rng, (width, width), fan_in=2 * width))
        self.hidden_bias = parameter(np.zeros(width))
        self.head = Linear(width, 1, rng)

    def __call__(self, sketch: TokenSequence, photo: TokenSequence) -> KernelMatrix:
        rows = ops.affine(sketch.tokens, self.sketch_weight, self.hidden_bias)
        cols = ops.matmul(photo.tokens, self.photo_weight)
        width = rows.shape[1]
        entries = []
        for i in range(sketch.n_alive):
            hidden = ops.relu(ops.add(cols, ops.reshape(ops.take_rows(rows, [i]), (width,))))
            entries.append(ops.transpose(self.head(hidden)))
        block = entries[0] if len(entries) == 1 else ops.concat_rows(entries)
        return _full_layout(block, sketch, photo)


def _masked_values(kernel: KernelMatrix) -> Tensor:
    mask = np.outer(kernel.row_alive, kernel.col_alive)
    if mask.all():
        return kernel.values
    return ops.mul(kernel.values, constant(mask.astype(kernel.array.dtype)))


class RelationNetwork(Module):
    """FC-ReLU-Dropout-FC on the row-major flattened kernel matrix, then a sigmoid."""

    def __init__(self, n_tokens: int, config: RelationConfig, rng: np.random.Generator) -> None:
        super().__init__()
        self.n_tokens = n_tokens
        self.dropout = config.dropout
        self.hidden = Linear(n_tokens * n_tokens, config.hidden_multiplier * n_tokens, rng)
        self.head = Linear(config.hidden_multiplier * n_tokens, 1, rng)

    def logits(self, kernels: Sequence[KernelMatrix], rng: Optional[np.random.Generator] = None) -> Tensor:
        if not kernels:
            raise ValueError("relation: no kernel matrices to score")
        flat = []
        for kernel in kernels:
            if kernel.n != self.n_tokens:
                raise ValueError(
                    f"relation: kernel layout {kernel.n}x{kernel.n} does not match the trained {self.n_tokens}x{self.n_tokens}"
                )
            flat.append(ops.reshape(_masked_values(kernel), (1, self.n_tokens * self.n_tokens)))
        return self.flat_logits(flat[0] if len(flat) == 1 else ops.concat_rows(flat), rng)

    def flat_logits(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        """Logits for rows of already flattened (row-major) kernel matrices."""

        if x.ndim != 2 or x.shape[1] != self.n_tokens * self.n_tokens:
            raise ValueError(f"relation: input width {x.shape} does not match {self.n_tokens * self.n_tokens}")
        h = ops.relu(self.hidden(x))
        if self.training and self.dropout > 0.0:
            if rng is None:
                raise ValueError("relation: a random generator is required for dropout in training mode")
            h = ops.dropout(h, self.dropout, True, rng)
        return self.head(h)

    def scores(self, kernels: Sequence[KernelMatrix], rng: Optional[np.random.Generator] = None) -> Tensor:
        """Match probabilities, shape (len(kernels), 1)."""

        return ops.sigmoid(self.logits(kernels, rng))

    def relation_score(self, kernel: KernelMatrix, rng: Optional[np.random.Generator] = None) -> Tensor:
        return self.scores([kernel], rng)


def write_kernel_matrix(path: Path, kernel: KernelMatrix) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{KERNEL_HEADER} n={kernel.n}"]
    lines.extend("\t".join(f"{value:.9g}" for value in row) for row in kernel.array)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_kernel_matrix(path: Path) -> np.ndarray:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or not text[0].startswith(KERNEL_HEADER):
        raise ValueError(f"{path}: missing '{KERNEL_HEADER}' header")
    return np.array([[float(v) for v in line.split("\t")] for line in text[1:] if line.strip()])


__all__ = [
    "KernelMatrix",
    "PairConcatKernel",
    "RelationNetwork",
    "cosine_kernel",
    "read_kernel_matrix",
    "write_kernel_matrix",
]
