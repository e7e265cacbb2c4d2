import dataclasses
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .resources import read_text_file

try:
    from dotenv import load_dotenv as _load_dotenv  # type: ignore
except ImportError:  # pragma: no cover - optional dependency

    def _load_dotenv() -> None:
        """Fallback no-op if python-dotenv is not installed."""
        return


_LOGGER = logging.getLogger("sketch-retrieval.config")

CONFIG_HEADER = "# sketch-retrieval config v1"
ENV_CONFIG_PATH = "SKETCH_RETRIEVAL_CONFIG"


def load_dotenv() -> None:
    """Public wrapper to keep imports lazy in callers."""

    _load_dotenv()


def _is_truthy(value) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, float)):
        return value != 0
    if isinstance(value, str):
        return value.strip().lower() not in {"", "0", "false", "no", "off"}
    return bool(value)


def _ints(*values: int):
    return field(default_factory=lambda: tuple(values), metadata={"item": int})


def _floats(*values: float):
    return field(default_factory=lambda: tuple(values), metadata={"item": float})


@dataclass
class TokenizerConfig:
    image_size: int = 64
    channels: int = 3
    embed_dim: int = 64
    patch_side: int = 16
    kernel_sizes: tuple[int, ...] = _ints(7, 3, 3, 3)
    stride: int = 2
    use_conv: bool = True
    positional: bool = True

    @property
    def grid_side(self) -> int:
        return self.image_size // self.patch_side

    @property
    def n_tokens(self) -> int:
        return self.grid_side * self.grid_side

    def conv_channels(self) -> list[int]:
        """Geometric ramp d/8, d/4, d/2, d (for the four-layer stack)."""

        depth = len(self.kernel_sizes)
        return [max(1, self.embed_dim >> (depth - 1 - i)) for i in range(depth)]


@dataclass
class EncoderConfig:
    layers: int = 4
    heads: int = 4
    mlp_ratio: int = 2
    selection_layers: tuple[int, ...] = _ints(2)
    keep_rate_sketch: float = 1.0
    keep_rate_photo: float = 1.0
    share_weights: bool = True
    use_ret: bool = True

    def keep_rate(self, modality: str) -> float:
        return self.keep_rate_sketch if modality == "sketch" else self.keep_rate_photo


@dataclass
class CrossAttnConfig:
    enabled: bool = True
    heads: int = 4
    keep_rate: float = 1.0
    mlp: bool = True
    triplet_source: str = "encoder"


@dataclass
class RelationConfig:
    kernel: str = "cosine"
    hidden_multiplier: int = 4
    dropout: float = 0.5


@dataclass
class TrainConfig:
    margin: float = 0.2
    batch_size: int = 8
    epochs: int = 15
    lr: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    label_granularity: str = "category"
    relation_loss: bool = True
    reshuffle_each_epoch: bool = False


@dataclass
class EvalConfig:
    mode: str = "rn"
    ks: tuple[int, ...] = _ints(1, 10, 100)
    map_cutoff: int = 0
    distance: str = "euclidean"
    generalized: bool = False
    workers: int = 1
    correspondence_top_k: int = 3
    influence_granularity: str = "entry"


@dataclass
class DataConfig:
    n_categories: int = 12
    pairs_per_category: int = 10
    train_fraction: float = 2.0 / 3.0
    first_category: int = 0
    test_only: bool = False


@dataclass
class Settings:
    seed: int = 0
    precision: int = 64
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    cross: CrossAttnConfig = field(default_factory=CrossAttnConfig)
    relation: RelationConfig = field(default_factory=RelationConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> "Settings":
        tok = self.tokenizer
        if tok.stride ** len(tok.kernel_sizes) != tok.patch_side:
            raise ValueError(
                f"tokenizer: stride {tok.stride} over {len(tok.kernel_sizes)} layers does not equal patch_side {tok.patch_side}"
            )
        if tok.image_size % tok.patch_side:
            raise ValueError(f"tokenizer.image_size {tok.image_size} is not a multiple of {tok.patch_side}")
        enc = self.encoder
        for layer in enc.selection_layers:
            if not 1 <= layer <= enc.layers:
                raise ValueError(f"encoder.selection_layers entry {layer} outside [1, {enc.layers}]")
        for key, rate in (
            ("encoder.keep_rate_sketch", enc.keep_rate_sketch),
            ("encoder.keep_rate_photo", enc.keep_rate_photo),
            ("cross.keep_rate", self.cross.keep_rate),
        ):
            if not 0.0 < rate <= 1.0:
                raise ValueError(f"{key} must lie in (0, 1], got {rate}")
        if tok.embed_dim % enc.heads or tok.embed_dim % self.cross.heads:
            raise ValueError(f"embed_dim {tok.embed_dim} must be divisible by the head counts")
        if not enc.use_ret and any(r < 1.0 for r in (enc.keep_rate_sketch, enc.keep_rate_photo, self.cross.keep_rate)):
            raise ValueError("token selection needs the retrieval token; keep rates must be 1.0 when encoder.use_ret is off")
        if not enc.use_ret and not self.train.relation_loss:
            raise ValueError("nothing to train: the triplet loss needs encoder.use_ret and train.relation_loss is off")
        if self.train.margin < 0:
            raise ValueError(f"train.margin must be non-negative, got {self.train.margin}")
        if self.train.label_granularity not in {"category", "instance"}:
            raise ValueError(f"train.label_granularity must be category or instance, got {self.train.label_granularity!r}")
        if self.relation.kernel not in {"cosine", "concat"}:
            raise ValueError(f"relation.kernel must be cosine or concat, got {self.relation.kernel!r}")
        if self.cross.triplet_source not in {"encoder", "cross"}:
            raise ValueError(f"cross.triplet_source must be encoder or cross, got {self.cross.triplet_source!r}")
        if self.eval.mode not in {"ret", "rn"}:
            raise ValueError(f"eval.mode must be ret or rn, got {self.eval.mode!r}")
        if self.eval.distance not in {"euclidean", "cosine"}:
            raise ValueError(f"eval.distance must be euclidean or cosine, got {self.eval.distance!r}")
        if self.eval.influence_granularity not in {"entry", "token"}:
            raise ValueError(
                f"eval.influence_granularity must be entry or token, got {self.eval.influence_granularity!r}"
            )
        if self.data.first_category < 0:
            raise ValueError(f"data.first_category must be non-negative, got {self.data.first_category}")
        if self.precision not in {32, 64}:
            raise ValueError(f"precision must be 32 or 64, got {self.precision}")
        return self


def _sections(settings: Settings) -> dict[str, Any]:
    return {f.name: getattr(settings, f.name) for f in dataclasses.fields(settings)}


def _parse_value(raw: str, default: Any, item_type: Optional[type], key: str) -> Any:
    text = raw.strip()
    try:
        if isinstance(default, bool):
            return _is_truthy(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            parts = [p.strip() for p in text.split(",") if p.strip()]
            return tuple((item_type or float)(p) for p in parts)
        return text
    except ValueError as exc:
        raise ValueError(f"config: cannot parse {key} = {raw!r}: {exc}") from exc


def apply_overrides(settings: Settings, pairs: dict[str, str], source: str = "overrides") -> Settings:
    """Apply `section.field` (or top-level `seed`/`precision`) string values in place."""

    for key, raw in pairs.items():
        section_name, _, field_name = key.partition(".")
        if not field_name:
            target, field_name = settings, section_name
        else:
            target = _sections(settings).get(section_name)
            if not dataclasses.is_dataclass(target):
                raise ValueError(f"config: unknown section '{section_name}' in {source}")
        spec = {f.name: f for f in dataclasses.fields(target)}.get(field_name)
        if spec is None or dataclasses.is_dataclass(getattr(target, field_name)):
            raise ValueError(f"config: unknown key '{key}' in {source}")
        value = _parse_value(raw, getattr(target, field_name), spec.metadata.get("item"), key)
        setattr(target, field_name, value)
    return settings


def parse_config_text(text: str, source: str = "<string>") -> dict[str, str]:
    pairs: dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ValueError(f"config: line {number} of {source} is not 'key = value': {line!r}")
        pairs[key.strip()] = value.strip()
    return pairs


def load_config(path: Optional[Path] = None, overrides: Optional[dict[str, str]] = None) -> Settings:
    load_dotenv()
    settings = Settings()

    config_path = path or (Path(os.environ[ENV_CONFIG_PATH]) if os.getenv(ENV_CONFIG_PATH) else None)
    if config_path is not None:
        text = read_text_file(Path(config_path), hint="Pass --config or set SKETCH_RETRIEVAL_CONFIG.")
        apply_overrides(settings, parse_config_text(text, str(config_path)), str(config_path))
        _LOGGER.debug("Configuration loaded from %s", config_path)

    env_pairs = {
        key: os.environ[env]
        for key, env in (("seed", "SKETCH_RETRIEVAL_SEED"), ("precision", "SKETCH_RETRIEVAL_PRECISION"))
        if os.getenv(env, "").strip()
    }
    apply_overrides(settings, env_pairs, "environment")
    apply_overrides(settings, overrides or {}, "command line")
    return settings.validate()


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


def dump_config(settings: Settings) -> str:
    lines = [CONFIG_HEADER, f"seed = {settings.seed}", f"precision = {settings.precision}"]
    for name, section in _sections(settings).items():
        if not dataclasses.is_dataclass(section):
            continue
        lines.append("")
        for f in dataclasses.fields(section):
            lines.append(f"{name}.{f.name} = {_format_value(getattr(section, f.name))}")
    return "\n".join(lines) + "\n"


def write_config(settings: Settings, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_config(settings), encoding="utf-8")
    return path


__all__ = [
    "CrossAttnConfig",
    "DataConfig",
    "EncoderConfig",
    "EvalConfig",
    "RelationConfig",
    "Settings",
    "TokenizerConfig",
    "TrainConfig",
    "apply_overrides",
    "dump_config",
    "load_config",
    "load_dotenv",
    "parse_config_text",
    "write_config",
]
