import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..autodiff import Module, Tensor, constant, load_checkpoint, set_default_dtype
from ..autodiff import tensor as ops
from ..config import Settings, load_config
from ..data.records import ImageSample
from .cross_attention import CrossAttention
from .encoder import Encoder
from .relation import KernelMatrix, PairConcatKernel, RelationNetwork, cosine_kernel
from .sequence import TokenSequence
from .tokenizer import Tokenizer

_LOGGER = logging.getLogger("sketch-retrieval.model")

CATEGORIES_HEADER = "# sketch-retrieval trained categories v1"


class SketchPhotoMatcher(Module):
    """
    Tokenizer, encoder(s), optional cross-attention, kernel and relation
    network wired together. One tokenizer serves both modalities; the encoder
    is shared unless `encoder.share_weights` is off.
    """

    def __init__(self, settings: Settings, rng: Optional[np.random.Generator] = None) -> None:
        super().__init__()
        self.settings = settings
        rng = rng if rng is not None else np.random.default_rng(settings.seed)
        width = settings.tokenizer.embed_dim
        self.tokenizer = Tokenizer(settings.tokenizer, rng)
        self.encoder = Encoder(settings.encoder, width, rng)
        self.photo_encoder: Optional[Encoder] = (
            None if settings.encoder.share_weights else Encoder(settings.encoder, width, rng)
        )
        self.cross: Optional[CrossAttention] = (
            CrossAttention(settings.cross, width, settings.encoder.mlp_ratio, rng) if settings.cross.enabled else None
        )
        # category id -> shape name seen in training; empty when unknown
        self.trained_categories: dict[int, str] = {}
        self.pair_kernel: Optional[PairConcatKernel] = (
            PairConcatKernel(width, rng) if settings.relation.kernel == "concat" else None
        )
        self.relation = RelationNetwork(settings.tokenizer.n_tokens, settings.relation, rng)

    def encoder_for(self, modality: str) -> Encoder:
        if modality == "photo" and self.photo_encoder is not None:
            return self.photo_encoder
        return self.encoder

    def embed(self, image: ImageSample) -> TokenSequence:
        """Tokenize, attach the retrieval token and run the self-attention stack."""

        encoder = self.encoder_for(image.modality)
        seq = self.tokenizer.tokenize(image)
        seq = encoder.attach_ret(seq, self.tokenizer.ret_position())
        return encoder.encode(seq, image.modality)

    def retrieval_vector(self, seq: TokenSequence) -> Tensor:
        """The retrieval token, or the mean of the alive tokens when the model has none."""

        if seq.ret is not None:
            return seq.ret
        pool = constant(np.full((1, seq.n_alive), 1.0 / seq.n_alive))
        return ops.matmul(pool, seq.tokens)

    def interact(self, sketch: TokenSequence, photo: TokenSequence) -> tuple[TokenSequence, TokenSequence]:
        if self.cross is None:
            return sketch, photo
        sketch, photo = self.cross.cross_attend(sketch, photo)
        photo = self.cross.ca_select(sketch, photo, self.settings.cross.keep_rate)
        return sketch, photo

    def kernel(self, sketch: TokenSequence, photo: TokenSequence) -> KernelMatrix:
        if self.pair_kernel is not None:
            return self.pair_kernel(sketch, photo)
        return cosine_kernel(sketch, photo)

    def match(self, sketch: TokenSequence, photo: TokenSequence) -> KernelMatrix:
        """Kernel matrix of an encoded pair after cross-attention and selection."""

        return self.kernel(*self.interact(sketch, photo))

    def relation_scores(
        self,
        kernels: Sequence[KernelMatrix],
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        return self.relation.scores(kernels, rng)

    def score_pair(self, sketch: TokenSequence, photo: TokenSequence) -> float:
        return self.relation.relation_score(self.match(sketch, photo)).item()

    def component_parameter_counts(self) -> dict[str, int]:
        parts = {
            "tokenizer": self.tokenizer,
            "encoder": self.encoder,
            "photo_encoder": self.photo_encoder,
            "cross": self.cross,
            "pair_kernel": self.pair_kernel,
            "relation": self.relation,
        }
        return {name: (module.parameter_count() if module is not None else 0) for name, module in parts.items()}


def apply_precision(settings: Settings) -> None:
    """Make new tensors 32- or 64-bit according to `settings.precision`."""

    set_default_dtype(np.float32 if settings.precision == 32 else np.float64)


def build_model(settings: Settings, seed: Optional[int] = None) -> SketchPhotoMatcher:
    model = SketchPhotoMatcher(settings, np.random.default_rng(settings.seed if seed is None else seed))
    _LOGGER.info("Model built with %d parameters", model.parameter_count())
    return model


def config_path_for(checkpoint: Path) -> Path:
    """The architecture config written next to a checkpoint."""

    return checkpoint.with_name(checkpoint.name + ".conf")


def categories_path_for(checkpoint: Path) -> Path:
    """The training-category list written next to a checkpoint."""

    return checkpoint.with_name(checkpoint.name + ".categories")


def write_trained_categories(path: Path, categories: dict[int, str]) -> Path:
    lines = [CATEGORIES_HEADER, "category_id\tname"]
    lines.extend(f"{cid}\t{name}" for cid, name in sorted(categories.items()))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_trained_categories(path: Path) -> dict[int, str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != CATEGORIES_HEADER:
        raise ValueError(f"{path}: missing '{CATEGORIES_HEADER}' header")
    categories = {}
    for number, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        cid, _, name = line.partition("\t")
        try:
            categories[int(cid)] = name
        except ValueError as exc:
            raise ValueError(f"{path}: line {number}: bad category id {cid!r}") from exc
    return categories


def load_model(checkpoint: Path, settings: Optional[Settings] = None) -> SketchPhotoMatcher:
    """
    Rebuild a trained model. The architecture comes from `<checkpoint>.conf`
    when present, otherwise from `settings`; the eval and data sections of
    `settings` replace the stored ones.
    """

    checkpoint = Path(checkpoint)
    arrays = load_checkpoint(checkpoint)
    sidecar = config_path_for(checkpoint)
    if sidecar.exists():
        trained = load_config(sidecar)
        if settings is not None:
            trained.eval = settings.eval
            trained.data = settings.data
        settings = trained
    elif settings is None:
        raise RuntimeError(f"Checkpoint config '{sidecar}' is missing; pass --config with the training settings.")
    model = SketchPhotoMatcher(settings, np.random.default_rng(settings.seed))
    model.load_state_dict(arrays)
    categories = categories_path_for(checkpoint)
    if categories.exists():
        model.trained_categories = read_trained_categories(categories)
    else:
        _LOGGER.warning("No %s next to the checkpoint; unseen-category checks use the corpus split only", categories.name)
    model.eval()
    _LOGGER.info("Loaded %s (%d parameters)", checkpoint, model.parameter_count())
    return model


__all__ = [
    "SketchPhotoMatcher",
    "apply_precision",
    "build_model",
    "categories_path_for",
    "config_path_for",
    "load_model",
    "read_trained_categories",
    "write_trained_categories",
]
