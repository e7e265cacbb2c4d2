from .corpus import Corpus, ZeroShotViolation, check_zero_shot, generate_corpus, load_corpus, split_zero_shot
from .imageio import read_image, write_image
from .records import ImageSample, SampleRecord
from .shapes import FAMILIES, ShapeSpec

__all__ = [
    "Corpus",
    "FAMILIES",
    "ImageSample",
    "SampleRecord",
    "ShapeSpec",
    "ZeroShotViolation",
    "check_zero_shot",
    "generate_corpus",
    "load_corpus",
    "read_image",
    "split_zero_shot",
    "write_image",
]
