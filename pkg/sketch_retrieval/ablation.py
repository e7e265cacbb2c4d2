"""
Component ablations: each variant is the base settings plus one toggle,
trained and evaluated (both rank modes) under the shared seed.
"""

import copy
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .config import Settings, TokenizerConfig, apply_overrides, dump_config, parse_config_text
from .data.corpus import Corpus, load_corpus
from .evaluation.evaluator import evaluate
from .model.network import apply_precision, build_model
from .model.tokenizer import conv_parameter_count
from .training.trainer import train

_LOGGER = logging.getLogger("sketch-retrieval.ablation")

TABLE_HEADER = "# sketch-retrieval ablation v1"


@dataclass(frozen=True)
class Variant:
    name: str
    overrides: dict[str, str] = field(default_factory=dict)

    def settings(self, base: Settings) -> Settings:
        return apply_overrides(copy.deepcopy(base), dict(self.overrides), f"variant {self.name}").validate()


COMPONENT_VARIANTS: tuple[Variant, ...] = (
    Variant("full"),
    Variant("wo_ca", {"cross.enabled": "false"}),
    Variant("wo_cosk", {"relation.kernel": "concat"}),
    Variant("wo_rn_loss", {"train.relation_loss": "false"}),
    Variant(
        "wo_ret",
        {"encoder.use_ret": "false", "encoder.keep_rate_sketch": "1.0", "encoder.keep_rate_photo": "1.0", "cross.keep_rate": "1.0"},
    ),
    Variant("wo_ltok", {"tokenizer.use_conv": "false"}),
    Variant(
        "wo_sa",
        {
            "encoder.layers": "0",
            "encoder.selection_layers": "",
            "encoder.use_ret": "false",
            "encoder.keep_rate_sketch": "1.0",
            "encoder.keep_rate_photo": "1.0",
            "cross.keep_rate": "1.0",
        },
    ),
)

KEEP_RATE_VARIANTS: tuple[Variant, ...] = (
    *(
        Variant(f"sa_{rate}", {"encoder.keep_rate_sketch": rate, "encoder.keep_rate_photo": rate})
        for rate in ("1.0", "0.9", "0.7", "0.5")
    ),
    Variant("sa_0.7_0.9", {"encoder.keep_rate_sketch": "0.7", "encoder.keep_rate_photo": "0.9"}),
    Variant("sa_0.9_0.7", {"encoder.keep_rate_sketch": "0.9", "encoder.keep_rate_photo": "0.7"}),
    Variant(
        "sa_0.7_ca_0.9",
        {"encoder.keep_rate_sketch": "0.7", "encoder.keep_rate_photo": "0.7", "cross.keep_rate": "0.9"},
    ),
)


@dataclass
class AblationPlan:
    variants: list[Variant]

    @classmethod
    def default(cls, include_keep_rates: bool = True) -> "AblationPlan":
        variants = list(COMPONENT_VARIANTS)
        if include_keep_rates:
            variants.extend(KEEP_RATE_VARIANTS)
        return cls(variants)

    def select(self, names: Sequence[str]) -> "AblationPlan":
        known = {v.name: v for v in self.variants}
        missing = [name for name in names if name not in known]
        if missing:
            raise ValueError(f"ablation: unknown variants {missing}; choose from {sorted(known)}")
        return AblationPlan([known[name] for name in names])


@dataclass
class AblationRow:
    variant: str
    parameters: int = 0
    map_ret: float = 0.0
    map_rn: float = 0.0
    prec_at: dict[int, float] = field(default_factory=dict)
    acc_at: dict[int, float] = field(default_factory=dict)
    status: str = "ok"


def parameter_counts(plan: AblationPlan, base: Settings) -> dict[str, dict[str, int]]:
    """Per-component parameter counts of every variant, built untrained."""

    return {v.name: build_model(v.settings(base)).component_parameter_counts() for v in plan.variants}


def expected_parameter_delta(
    variant: str, full: dict[str, int], width: int, tokenizer: Optional[TokenizerConfig] = None
) -> Optional[int]:
    """
    Parameter change a component toggle implies relative to the full model.

    None for unknown names, and for wo_ltok when no tokenizer config is given.
    """

    if variant == "wo_ca":
        return -full["cross"]
    if variant == "wo_cosk":
        return 2 * width * width + 2 * width + 1
    if variant == "wo_ret":
        return -width * (2 if full["photo_encoder"] else 1)
    if variant == "wo_sa":
        return -(full["encoder"] + full["photo_encoder"])
    if variant == "wo_ltok":
        return None if tokenizer is None else -conv_parameter_count(tokenizer)
    if variant == "full" or variant == "wo_rn_loss" or variant.startswith("sa_"):
        return 0
    return None


def _run_variant(name: str, overrides: dict[str, str], base_text: str, corpus_root: str, out_dir: str) -> AblationRow:
    base = apply_overrides(Settings(), parse_config_text(base_text), "ablation base")
    apply_precision(base)
    return run_variant(Variant(name, overrides), base, load_corpus(Path(corpus_root)), Path(out_dir))


def run_variant(variant: Variant, base: Settings, corpus: Corpus, out_dir: Path) -> AblationRow:
    settings = variant.settings(base)
    variant_dir = Path(out_dir) / variant.name
    _LOGGER.info("Ablation variant %s", variant.name)
    result = train(corpus, settings, checkpoint=variant_dir / "model.ckpt")
    ret = evaluate(result.model, corpus, settings, mode="ret").report
    rn = evaluate(result.model, corpus, settings, mode="rn").report
    ret.write(variant_dir / "metrics_ret.txt")
    rn.write(variant_dir / "metrics_rn.txt")
    return AblationRow(
        variant=variant.name,
        parameters=result.model.parameter_count(),
        map_ret=ret.map,
        map_rn=rn.map,
        prec_at=dict(rn.prec_at),
        acc_at=dict(rn.acc_at),
    )


def run_ablation(
    plan: AblationPlan,
    corpus: Corpus,
    base: Settings,
    out_dir: Path,
    parallel: int = 0,
) -> list[AblationRow]:
    """Train and evaluate every variant; a failing variant is reported and the rest continue."""

    out_dir = Path(out_dir)
    rows: list[AblationRow] = []
    if parallel > 1:
        base_text = dump_config(base)
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            futures = [
                (v.name, pool.submit(_run_variant, v.name, dict(v.overrides), base_text, str(corpus.root), str(out_dir)))
                for v in plan.variants
            ]
            for name, future in futures:
                try:
                    rows.append(future.result())
                except Exception as exc:  # noqa: BLE001
                    _LOGGER.warning("Variant %s failed: %s", name, exc)
                    rows.append(AblationRow(variant=name, status=f"failed: {exc}"))
    else:
        for variant in plan.variants:
            try:
                rows.append(run_variant(variant, base, corpus, out_dir))
            except Exception as exc:  # noqa: BLE001
                _LOGGER.warning("Variant %s failed: %s", variant.name, exc)
                rows.append(AblationRow(variant=variant.name, status=f"failed: {exc}"))
    write_table(out_dir / "ablation.tsv", rows, base.eval.ks)
    return rows


def format_table(rows: Sequence[AblationRow], ks: Sequence[int]) -> str:
    columns = ["variant", "parameters", "map_ret", "map_rn"]
    columns += [f"prec@{k}" for k in ks] + [f"acc@{k}" for k in ks] + ["status"]
    lines = [TABLE_HEADER, "\t".join(columns)]
    for row in rows:
        cells = [row.variant, str(row.parameters), f"{row.map_ret:.4f}", f"{row.map_rn:.4f}"]
        cells += [f"{row.prec_at.get(k, 0.0):.4f}" for k in ks]
        cells += [f"{row.acc_at.get(k, 0.0):.4f}" for k in ks]
        cells.append(row.status)
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def write_table(path: Path, rows: Sequence[AblationRow], ks: Sequence[int]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_table(rows, ks), encoding="utf-8")
    _LOGGER.info("Ablation table written to %s", path)
    return path


__all__ = [
    "AblationPlan",
    "AblationRow",
    "COMPONENT_VARIANTS",
    "KEEP_RATE_VARIANTS",
    "Variant",
    "expected_parameter_delta",
    "format_table",
    "parameter_counts",
    "run_ablation",
    "run_variant",
    "write_table",
]
