"""
Procedural sketch/photo corpus with a category-level zero-shot split.

The manifest (`manifest.tsv`) is the single source of truth: every consumer
loads records from it instead of scanning directories.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from ..resources import read_text_file
from .imageio import read_image, write_image
from .records import ImageSample, SampleRecord
from .shapes import make_placement, make_shape_spec, render_photo, render_sketch

_LOGGER = logging.getLogger("sketch-retrieval.data")

MANIFEST_NAME = "manifest.tsv"
MANIFEST_HEADER = "# sketch-retrieval manifest v1"
CATEGORIES_NAME = "categories.tsv"
COLUMNS = ("path", "modality", "category_id", "instance_id", "split")


class ZeroShotViolation(RuntimeError):
    """A test category leaks into the training records."""


@dataclass
class Corpus:
    root: Path
    records: list[SampleRecord]
    category_names: dict[int, str] = field(default_factory=dict)
    _cache: dict[str, ImageSample] = field(default_factory=dict, repr=False)

    @property
    def categories(self) -> list[int]:
        return sorted({r.category_id for r in self.records})

    @property
    def splits(self) -> dict[str, list[int]]:
        return {
            split: sorted({r.category_id for r in self.records if r.split == split}) for split in ("train", "test")
        }

    def select(self, split: Optional[str] = None, modality: Optional[str] = None) -> list[SampleRecord]:
        return [
            r
            for r in self.records
            if (split is None or r.split == split) and (modality is None or r.modality == modality)
        ]

    def pairs(self, split: str) -> list[tuple[SampleRecord, SampleRecord]]:
        """Instance-level sketch/photo links; each sketch takes the first photo of its instance."""

        photos: dict[int, SampleRecord] = {}
        for record in self.select(split, "photo"):
            photos.setdefault(record.instance_id, record)
        return [(sketch, photos[sketch.instance_id]) for sketch in self.select(split, "sketch")]

    def load(self, record: SampleRecord) -> ImageSample:
        sample = self._cache.get(record.path)
        if sample is None:
            sample = ImageSample(
                pixels=read_image(self.root / record.path),
                modality=record.modality,
                category_id=record.category_id,
                instance_id=record.instance_id,
                sample_id=record.sample_id,
            )
            self._cache[record.path] = sample
        return sample

    def load_many(self, records: Iterable[SampleRecord]) -> list[ImageSample]:
        return [self.load(record) for record in records]


def split_zero_shot(
    corpus: Union[Corpus, Sequence[int]],
    train_fraction: float,
    seed: int,
) -> tuple[list[int], list[int]]:
    """Seeded category-level partition into (train, test); no category straddles the split."""

    categories = sorted(corpus.categories if isinstance(corpus, Corpus) else set(corpus))
    if len(categories) < 2:
        raise ValueError(f"split_zero_shot: need at least 2 categories, got {len(categories)}")
    n_train = int(round(train_fraction * len(categories)))
    if not 0 < n_train < len(categories):
        raise ValueError(
            f"split_zero_shot: train_fraction {train_fraction} leaves an empty side for {len(categories)} categories"
        )
    order = np.random.default_rng([seed, len(categories)]).permutation(len(categories))
    train = sorted(categories[i] for i in order[:n_train])
    test = sorted(categories[i] for i in order[n_train:])
    return train, test


def _render_instance(
    out_dir: Path,
    category_id: int,
    instance_id: int,
    local_index: int,
    image_size: int,
    seed: int,
    spec,
    split: str,
) -> list[SampleRecord]:
    rng = np.random.default_rng([seed, category_id, local_index])
    placement = make_placement(image_size, rng)
    photo = render_photo(spec, placement, image_size, rng)
    sketch = render_sketch(spec, placement, image_size, rng)
    stem = f"c{category_id:03d}_i{local_index:03d}"
    photo_path = f"photos/{stem}.ppm"
    sketch_path = f"sketches/{stem}.pgm"
    write_image(out_dir / photo_path, photo)
    write_image(out_dir / sketch_path, sketch)
    return [
        SampleRecord(sketch_path, "sketch", category_id, instance_id, split),
        SampleRecord(photo_path, "photo", category_id, instance_id, split),
    ]


def generate_corpus(
    out_dir: Path,
    n_categories: int,
    pairs_per_category: int,
    image_size: int,
    seed: int,
    train_fraction: float = 2.0 / 3.0,
    workers: int = 1,
    first_category: int = 0,
    test_only: bool = False,
) -> Corpus:
    """
    Render every category's instances as a photo/sketch pair and write the
    manifest. Each image draws from its own derived seed, so `workers` does
    not change the output.

    Category ids start at `first_category`; ids past the first twelve are
    stretched and rotated variants of the base families with their own names.
    `test_only` marks every category unseen, for a cross-corpus target.
    """

    if n_categories < 3:
        raise ValueError(f"generate_corpus: n_categories must be >= 3, got {n_categories}")
    if pairs_per_category < 1:
        raise ValueError(f"generate_corpus: pairs_per_category must be >= 1, got {pairs_per_category}")
    if image_size <= 0 or image_size % 16:
        raise ValueError(f"generate_corpus: image_size must be a positive multiple of 16, got {image_size}")
    if first_category < 0:
        raise ValueError(f"generate_corpus: first_category must be >= 0, got {first_category}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    category_ids = list(range(first_category, first_category + n_categories))
    train = [] if test_only else split_zero_shot(category_ids, train_fraction, seed)[0]
    train_set = set(train)

    names: dict[int, str] = {}
    jobs = []
    for category_id in category_ids:
        spec = make_shape_spec(category_id, np.random.default_rng([seed, category_id]))
        names[category_id] = spec.name
        split = "train" if category_id in train_set else "test"
        for local_index in range(pairs_per_category):
            instance_id = category_id * pairs_per_category + local_index
            jobs.append((out_dir, category_id, instance_id, local_index, image_size, seed, spec, split))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rendered = list(pool.map(lambda job: _render_instance(*job), jobs))
    else:
        rendered = [_render_instance(*job) for job in jobs]
    records = [record for pair in rendered for record in pair]

    corpus = Corpus(out_dir, records, names)
    write_manifest(corpus)
    _LOGGER.info(
        "Corpus written to %s: %d categories (%d train), %d images",
        out_dir,
        n_categories,
        len(train),
        len(records),
    )
    return corpus


def write_manifest(corpus: Corpus) -> Path:
    lines = [MANIFEST_HEADER, "\t".join(COLUMNS)]
    for r in corpus.records:
        lines.append(f"{r.path}\t{r.modality}\t{r.category_id}\t{r.instance_id}\t{r.split}")
    path = corpus.root / MANIFEST_NAME
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    if corpus.category_names:
        names = [f"{cid}\t{name}" for cid, name in sorted(corpus.category_names.items())]
        (corpus.root / CATEGORIES_NAME).write_text(
            "\n".join(["# sketch-retrieval categories v1", "category_id\tname", *names]) + "\n", encoding="utf-8"
        )
    return path


def _read_category_names(root: Path) -> dict[int, str]:
    path = root / CATEGORIES_NAME
    if not path.exists():
        return {}
    names = {}
    for line in path.read_text(encoding="utf-8").splitlines()[2:]:
        if line.strip():
            cid, name = line.split("\t", 1)
            names[int(cid)] = name
    return names


def validate_corpus(corpus: Corpus) -> Corpus:
    for category_id in corpus.categories:
        if not any(r.category_id == category_id and r.modality == "photo" for r in corpus.records):
            raise ValueError(f"degenerate corpus: category {category_id} has no photos")
    photo_instances = {r.instance_id for r in corpus.records if r.modality == "photo"}
    for r in corpus.records:
        if r.modality == "sketch" and r.instance_id not in photo_instances:
            raise ValueError(f"degenerate corpus: sketch {r.path} has no paired photo")
    check_zero_shot(corpus)
    return corpus


def check_zero_shot(corpus: Corpus) -> None:
    """Raise ZeroShotViolation if any test category also appears among training records."""

    splits = corpus.splits
    overlap = set(splits["train"]) & set(splits["test"])
    if overlap:
        raise ZeroShotViolation(f"test categories {sorted(overlap)} appear among training records")


def load_corpus(path: Path) -> Corpus:
    """Load `manifest.tsv` (or the manifest inside a corpus directory) and validate it."""

    path = Path(path)
    manifest = path / MANIFEST_NAME if path.is_dir() else path
    lines = read_text_file(manifest, hint="Generate a corpus first with `gen-data`.").splitlines()
    if len(lines) < 2 or lines[0].strip() != MANIFEST_HEADER:
        raise ValueError(f"{manifest}: missing '{MANIFEST_HEADER}' header")
    if tuple(lines[1].split("\t")) != COLUMNS:
        raise ValueError(f"{manifest}: expected columns {', '.join(COLUMNS)}")
    records = []
    for number, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != len(COLUMNS):
            raise ValueError(f"{manifest}: line {number} has {len(fields)} fields, expected {len(COLUMNS)}")
        try:
            records.append(SampleRecord(fields[0], fields[1], int(fields[2]), int(fields[3]), fields[4]))
        except ValueError as exc:
            raise ValueError(f"{manifest}: line {number}: {exc}") from exc
    corpus = Corpus(manifest.parent, records, _read_category_names(manifest.parent))
    _LOGGER.debug("Loaded %d records from %s", len(records), manifest)
    return validate_corpus(corpus)


__all__ = [
    "COLUMNS",
    "Corpus",
    "MANIFEST_HEADER",
    "MANIFEST_NAME",
    "ZeroShotViolation",
    "check_zero_shot",
    "generate_corpus",
    "load_corpus",
    "split_zero_shot",
    "validate_corpus",
    "write_manifest",
]
