from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ..autodiff import Tensor
from ..autodiff import tensor as ops


@dataclass(frozen=True, eq=False)
class TokenSequence:
    """
    Visual tokens still alive after selection, stored compactly.

    `tokens` row r belongs to patch `origin[r]`; `origin` is strictly
    increasing, so row order is raster order. `ret` is the (1, d) retrieval
    token, or None before the encoder attaches it (and in the no-[Ret] variant).
    """

    tokens: Tensor
    origin: np.ndarray
    n_patches: int
    grid: tuple[int, int]
    ret: Optional[Tensor] = None

    def __post_init__(self) -> None:
        origin = np.asarray(self.origin, dtype=np.int64)
        object.__setattr__(self, "origin", origin)
        if self.tokens.ndim != 2 or self.tokens.shape[0] != origin.size:
            raise ValueError(f"TokenSequence: {self.tokens.shape} tokens for {origin.size} origins")
        if origin.size and (np.any(np.diff(origin) <= 0) or origin[0] < 0 or origin[-1] >= self.n_patches):
            raise ValueError("TokenSequence: origins must be unique, increasing patch indices")
        if self.ret is not None and self.ret.shape != (1, self.width):
            raise ValueError(f"TokenSequence: retrieval token shape {self.ret.shape}, expected (1, {self.width})")

    @classmethod
    def from_tokens(cls, tokens: Tensor, grid: Optional[tuple[int, int]] = None, ret: Optional[Tensor] = None):
        count = tokens.shape[0]
        return cls(tokens, np.arange(count), count, grid or (1, count), ret)

    @property
    def width(self) -> int:
        return self.tokens.shape[1]

    @property
    def n_alive(self) -> int:
        return int(self.origin.size)

    @property
    def alive(self) -> np.ndarray:
        mask = np.zeros(self.n_patches, dtype=bool)
        mask[self.origin] = True
        return mask

    def stacked(self) -> Tensor:
        """[ret; tokens] as one matrix (just the tokens when there is no ret)."""

        if self.ret is None:
            return self.tokens
        return ops.concat_rows([self.ret, self.tokens])

    def unstack(self, matrix: Tensor) -> "TokenSequence":
        """Inverse of `stacked` for a matrix of the same row layout."""

        if self.ret is None:
            return replace(self, tokens=matrix)
        rows = np.arange(1, matrix.shape[0])
        return replace(self, ret=ops.take_rows(matrix, [0]), tokens=ops.take_rows(matrix, rows))

    def keep(self, rows: np.ndarray) -> "TokenSequence":
        rows = np.asarray(rows, dtype=np.int64)
        return replace(self, tokens=ops.take_rows(self.tokens, rows), origin=self.origin[rows])

    def with_ret(self, ret: Optional[Tensor]) -> "TokenSequence":
        return replace(self, ret=ret)

    def detach(self) -> "TokenSequence":
        return replace(
            self,
            tokens=self.tokens.detach(),
            ret=None if self.ret is None else self.ret.detach(),
        )


__all__ = ["TokenSequence"]
