"""Shared fixtures: seeded generators, tiny model settings and a micro corpus."""

import os

import numpy as np
import pytest

from sketch_retrieval.autodiff import get_tape, set_default_dtype
from sketch_retrieval.config import Settings, apply_overrides
from sketch_retrieval.data import ImageSample, generate_corpus
from sketch_retrieval.training import train

TINY = {
    "tokenizer.image_size": "32",
    "tokenizer.embed_dim": "8",
    "encoder.layers": "2",
    "encoder.heads": "2",
    "encoder.mlp_ratio": "2",
    "encoder.selection_layers": "1",
    "cross.heads": "2",
    "relation.hidden_multiplier": "2",
    "train.batch_size": "4",
    "train.epochs": "2",
    "eval.ks": "1, 2",
    "data.n_categories": "3",
    "data.pairs_per_category": "2",
}


def pytest_collection_modifyitems(config, items):
    if os.getenv("SKETCH_RETRIEVAL_SLOW", "").strip() == "1":
        return
    skip = pytest.mark.skip(reason="set SKETCH_RETRIEVAL_SLOW=1 to run slow checks")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(autouse=True)
def _float64_and_clean_tape():
    set_default_dtype(np.float64)
    get_tape().clear()
    yield
    get_tape().clear()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_settings():
    """Build validated tiny settings with extra `section.key` overrides."""

    def build(**overrides: str) -> Settings:
        pairs = dict(TINY)
        pairs.update({key.replace("__", "."): str(value) for key, value in overrides.items()})
        return apply_overrides(Settings(), pairs, "test").validate()

    return build


@pytest.fixture
def tiny_settings(make_settings):
    return make_settings()


@pytest.fixture
def random_image():
    def build(modality: str = "sketch", size: int = 32, seed: int = 0, sample_id: str = "") -> ImageSample:
        pixels = np.random.default_rng(seed).random((size, size, 3))
        return ImageSample(pixels, modality, sample_id=sample_id or f"{modality}-{seed}")

    return build


@pytest.fixture(scope="session")
def micro_corpus(tmp_path_factory):
    """3 categories x 2 pairs at 32x32: two training categories, one test category."""

    return generate_corpus(tmp_path_factory.mktemp("corpus"), 3, 2, 32, seed=0)


@pytest.fixture(scope="session")
def trained(tmp_path_factory, micro_corpus):
    """A tiny model trained for two epochs, with checkpoint, config and loss trace on disk."""

    settings = apply_overrides(Settings(), dict(TINY), "test").validate()
    checkpoint = tmp_path_factory.mktemp("run") / "model.ckpt"
    return train(micro_corpus, settings, checkpoint=checkpoint), settings


@pytest.fixture(scope="session")
def tiny_cli_args():
    """The tiny settings as repeated `--set key=value` flags."""

    return [arg for key, value in TINY.items() for arg in ("--set", f"{key}={value}")]
