from dataclasses import dataclass

import numpy as np

MODALITIES = ("sketch", "photo")


@dataclass(frozen=True)
class SampleRecord:
    """One manifest row; `path` is relative to the corpus root."""

    path: str
    modality: str
    category_id: int
    instance_id: int
    split: str

    def __post_init__(self) -> None:
        if self.modality not in MODALITIES:
            raise ValueError(f"record {self.path}: modality must be sketch or photo, got {self.modality!r}")
        if self.split not in {"train", "test"}:
            raise ValueError(f"record {self.path}: split must be train or test, got {self.split!r}")

    @property
    def sample_id(self) -> str:
        return self.path


@dataclass(frozen=True, eq=False)
class ImageSample:
    pixels: np.ndarray
    modality: str
    category_id: int = -1
    instance_id: int = -1
    sample_id: str = ""

    def __post_init__(self) -> None:
        if self.modality not in MODALITIES:
            raise ValueError(f"image {self.sample_id!r}: modality must be sketch or photo, got {self.modality!r}")
        if self.pixels.ndim != 3:
            raise ValueError(f"image {self.sample_id!r}: expected (h, w, c) pixels, got shape {self.pixels.shape}")
        if self.pixels.size and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
            raise ValueError(f"image {self.sample_id!r}: pixel values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def label(self, granularity: str) -> int:
        return self.instance_id if granularity == "instance" else self.category_id


__all__ = ["ImageSample", "MODALITIES", "SampleRecord"]
