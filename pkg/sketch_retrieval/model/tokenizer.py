"""
Image to visual tokens: a strided conv stack plus a residual linear patch
embedding, followed by learned absolute positions.
"""

import logging
from typing import Optional

import numpy as np

from ..autodiff import Module, Tensor, constant, parameter
from ..autodiff import tensor as ops
from ..config import TokenizerConfig
from ..data.records import ImageSample
from .layers import Conv2d, Linear
from .sequence import TokenSequence

_LOGGER = logging.getLogger("sketch-retrieval.model")


def _check_dims(image: ImageSample, patch_side: int, channels: int) -> tuple[int, int]:
    height, width, depth = image.pixels.shape
    if height % patch_side or width % patch_side or not height or not width:
        raise ValueError(
            f"tokenizer: image {image.sample_id or '<anonymous>'} is {height}x{width}, not a multiple of {patch_side}"
        )
    if depth != channels:
        raise ValueError(f"tokenizer: image has {depth} channels, expected {channels}")
    return height // patch_side, width // patch_side


def patchify(pixels: np.ndarray, patch_side: int) -> np.ndarray:
    """(h, w, c) -> (n, patch_side² · c), one row per patch in raster order."""

    height, width, channels = pixels.shape
    rows, cols = height // patch_side, width // patch_side
    blocks = pixels.reshape(rows, patch_side, cols, patch_side, channels).transpose(0, 2, 1, 3, 4)
    return blocks.reshape(rows * cols, patch_side * patch_side * channels)


def unpatchify(patches: np.ndarray, grid: tuple[int, int], patch_side: int, channels: int) -> np.ndarray:
    rows, cols = grid
    blocks = patches.reshape(rows, cols, patch_side, patch_side, channels).transpose(0, 2, 1, 3, 4)
    return blocks.reshape(rows * patch_side, cols * patch_side, channels)


def conv_parameter_count(config: TokenizerConfig) -> int:
    """Weights and biases of the strided conv stack `config` describes (0 when it is disabled)."""

    if not config.use_conv:
        return 0
    total, in_channels = 0, config.channels
    for kernel, out_channels in zip(config.kernel_sizes, config.conv_channels()):
        total += out_channels * in_channels * kernel * kernel + out_channels
        in_channels = out_channels
    return total


class Tokenizer(Module):
    def __init__(self, config: TokenizerConfig, rng: np.random.Generator) -> None:
        super().__init__()
        self.config = config
        side, d = config.patch_side, config.embed_dim
        self.patch_embed = Linear(side * side * config.channels, d, rng)
        self.convs: list[Conv2d] = []
        if config.use_conv:
            in_channels = config.channels
            for kernel, out_channels in zip(config.kernel_sizes, config.conv_channels()):
                self.convs.append(Conv2d(in_channels, out_channels, kernel, config.stride, rng))
                in_channels = out_channels
        # row 0 is the retrieval slot, rows 1..n the patches
        self.positions: Optional[Tensor] = (
            parameter(rng.normal(0.0, 0.02, size=(config.n_tokens + 1, d))) if config.positional else None
        )

    def vanilla_patch_embed(self, image: ImageSample) -> Tensor:
        _check_dims(image, self.config.patch_side, self.config.channels)
        return self.patch_embed(constant(patchify(image.pixels, self.config.patch_side)))

    def conv_tokenize(self, image: ImageSample) -> Tensor:
        rows, cols = _check_dims(image, self.config.patch_side, self.config.channels)
        if not self.convs:
            raise RuntimeError("tokenizer: the conv branch is disabled (tokenizer.use_conv = false)")
        x = constant(np.transpose(image.pixels, (2, 0, 1)))
        for conv in self.convs:
            x = ops.relu(conv(x))
        if x.shape[1:] != (rows, cols):
            raise ValueError(f"tokenizer: conv stack produced a {x.shape[1:]} map, expected {(rows, cols)}")
        return ops.transpose(ops.reshape(x, (x.shape[0], rows * cols)))

    def patch_positions(self) -> Optional[Tensor]:
        if self.positions is None:
            return None
        return ops.take_rows(self.positions, np.arange(1, self.positions.shape[0]))

    def ret_position(self) -> Optional[Tensor]:
        if self.positions is None:
            return None
        return ops.take_rows(self.positions, [0])

    def tokenize(self, image: ImageSample) -> TokenSequence:
        rows, cols = _check_dims(image, self.config.patch_side, self.config.channels)
        tokens = self.vanilla_patch_embed(image)
        if self.convs:
            tokens = ops.add(self.conv_tokenize(image), tokens)
        positions = self.patch_positions()
        if positions is not None:
            if positions.shape[0] != rows * cols:
                raise ValueError(
                    f"tokenizer: {rows * cols} patches but positional table holds {positions.shape[0]}; "
                    f"images must be {self.config.image_size}x{self.config.image_size}"
                )
            tokens = ops.add(tokens, positions)
        return TokenSequence(tokens, np.arange(rows * cols), rows * cols, (rows, cols))


__all__ = ["Tokenizer", "conv_parameter_count", "patchify", "unpatchify"]
