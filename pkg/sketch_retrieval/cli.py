import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import Settings, load_config, load_dotenv

_LOGGER = logging.getLogger("sketch-retrieval.cli")

DEFAULT_CORPUS = Path("runs/corpus")
DEFAULT_CHECKPOINT = Path("runs/model.ckpt")
LOG_LEVEL_ENV = "SKETCH_RETRIEVAL_LOG_LEVEL"


def _configure_logging(level: Optional[str]) -> None:
    name = (level or os.getenv(LOG_LEVEL_ENV, "") or "INFO").strip().upper()
    if not isinstance(logging.getLevelName(name), int):
        print(f"[sketch-retrieval] Unknown log level '{name}', falling back to INFO.", file=sys.stderr)
        name = "INFO"
    logging.basicConfig(level=name, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _parse_pairs(items: Sequence[str]) -> dict[str, str]:
    pairs = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"--set expects key=value, got {item!r}")
        pairs[key.strip()] = value.strip()
    return pairs


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sketch-retrieval",
        description="Zero-shot sketch-based image retrieval with token selection and a relation network.",
    )
    parser.add_argument("--config", type=Path, help="key = value config file (or SKETCH_RETRIEVAL_CONFIG)")
    parser.add_argument("--seed", type=int, help="Override the global seed")
    parser.add_argument("--checkpoint", type=Path, default=DEFAULT_CHECKPOINT, help="Model checkpoint path")
    parser.add_argument("--log-level", help=f"Logging level (or {LOG_LEVEL_ENV}); default INFO")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="Override one config key"
    )
    commands = parser.add_subparsers(dest="command", metavar="command", required=True)

    gen = commands.add_parser("gen-data", help="Render the procedural sketch/photo corpus")
    gen.add_argument("--out", type=Path, default=DEFAULT_CORPUS)
    gen.add_argument("--categories", type=int, help="Number of shape categories")
    gen.add_argument("--pairs", type=int, help="Sketch/photo pairs per category")
    gen.add_argument("--image-size", type=int, help="Square image side in pixels")
    gen.add_argument("--workers", type=int, default=1)
    gen.add_argument("--first-category", type=int, help="Id of the first category (shifts the shape families)")
    gen.add_argument("--test-only", action="store_true", help="Mark every category unseen (cross-corpus target)")

    train = commands.add_parser("train", help="Train on the corpus training split")
    train.add_argument("--data", type=Path, default=DEFAULT_CORPUS)
    train.add_argument("--epochs", type=int)

    evaluate = commands.add_parser("eval", help="Zero-shot retrieval on the test split")
    evaluate.add_argument("--data", type=Path, default=DEFAULT_CORPUS)
    evaluate.add_argument("--mode", choices=("ret", "rn"))
    evaluate.add_argument("--k", type=int, nargs="+", help="Cutoffs for Prec@K and acc@K")
    evaluate.add_argument("--map-cutoff", type=int, help="Truncate mAP at this rank (0 = full)")
    evaluate.add_argument("--generalized", action="store_true", help="Add training-category photos to the gallery")
    evaluate.add_argument("--workers", type=int)
    evaluate.add_argument("--out", type=Path, default=Path("runs/eval"))

    cross = commands.add_parser("cross-eval", help="Retrieval on every category of a second, disjoint corpus")
    cross.add_argument("--data", type=Path, required=True, help="Target corpus directory or manifest")
    cross.add_argument("--mode", choices=("ret", "rn"))
    cross.add_argument("--workers", type=int)
    cross.add_argument("--out", type=Path, default=Path("runs/cross_eval"))

    attn = commands.add_parser("attn-map", help="Retrieval-token self-attention map of one image")
    attn.add_argument("--image", type=Path, required=True)
    attn.add_argument("--modality", choices=("sketch", "photo"), default="sketch")
    attn.add_argument("--layer", type=int, help="1-based encoder layer (default last)")
    attn.add_argument("--head", type=int, help="0-based head (default mean over heads)")
    attn.add_argument("--out", type=Path, default=Path("runs/attn.pgm"))

    corr = commands.add_parser("correspond", help="Top-k photo patches for each sketch patch")
    corr.add_argument("--sketch", type=Path, required=True)
    corr.add_argument("--photo", type=Path, required=True)
    corr.add_argument("--top-k", type=int)
    corr.add_argument("--out", type=Path, default=Path("runs/correspondences.tsv"))
    corr.add_argument("--kernel-out", type=Path, help="Also write the kernel matrix")

    synth = commands.add_parser("synth", help="Rebuild a sketch from gallery photo patches")
    synth.add_argument("--data", type=Path, default=DEFAULT_CORPUS)
    synth.add_argument("--sketch", type=Path, required=True)
    synth.add_argument("--mode", choices=("retrieved", "gallery"), default="retrieved")
    synth.add_argument("--k", type=int, default=1)
    synth.add_argument("--generalized", action="store_true")
    synth.add_argument("--out", type=Path, default=Path("runs/synth.ppm"))

    influence = commands.add_parser("influence", help="Token pair whose removal drops the relation score most")
    influence.add_argument("--sketch", type=Path, required=True)
    influence.add_argument("--photo", type=Path, required=True)
    influence.add_argument("--granularity", choices=("entry", "token"))

    ablate = commands.add_parser("ablate", help="Train and evaluate the component ablation variants")
    ablate.add_argument("--data", type=Path, default=DEFAULT_CORPUS)
    ablate.add_argument("--out", type=Path, default=Path("runs/ablation"))
    ablate.add_argument("--variants", nargs="+", help="Subset of variant names")
    ablate.add_argument("--no-keep-rates", action="store_true", help="Skip the keep-rate rows")
    ablate.add_argument("--parallel", type=int, default=0, help="Worker processes (0 = sequential)")
    return parser


def _command_overrides(args: argparse.Namespace) -> dict[str, str]:
    pairs: dict[str, str] = {}
    if args.seed is not None:
        pairs["seed"] = str(args.seed)
    if args.command == "gen-data":
        for key, value in (
            ("data.n_categories", args.categories),
            ("data.pairs_per_category", args.pairs),
            ("tokenizer.image_size", args.image_size),
            ("data.first_category", args.first_category),
        ):
            if value is not None:
                pairs[key] = str(value)
        if args.test_only:
            pairs["data.test_only"] = "true"
    elif args.command == "train" and args.epochs is not None:
        pairs["train.epochs"] = str(args.epochs)
    elif args.command == "eval":
        if args.mode:
            pairs["eval.mode"] = args.mode
        if args.k:
            pairs["eval.ks"] = ",".join(str(k) for k in args.k)
        if args.map_cutoff is not None:
            pairs["eval.map_cutoff"] = str(args.map_cutoff)
        if args.generalized:
            pairs["eval.generalized"] = "true"
        if args.workers is not None:
            pairs["eval.workers"] = str(args.workers)
    elif args.command == "cross-eval":
        if args.mode:
            pairs["eval.mode"] = args.mode
        if args.workers is not None:
            pairs["eval.workers"] = str(args.workers)
    elif args.command == "correspond" and args.top_k is not None:
        pairs["eval.correspondence_top_k"] = str(args.top_k)
    elif args.command == "synth" and args.generalized:
        pairs["eval.generalized"] = "true"
    elif args.command == "influence" and args.granularity:
        pairs["eval.influence_granularity"] = args.granularity
    pairs.update(_parse_pairs(args.overrides))
    return pairs


def _load_sample(path: Path, modality: str):
    from .data import ImageSample, read_image

    return ImageSample(read_image(path), modality, sample_id=str(path))


def _cmd_gen_data(args: argparse.Namespace, settings: Settings) -> int:
    from .data import generate_corpus

    corpus = generate_corpus(
        args.out,
        settings.data.n_categories,
        settings.data.pairs_per_category,
        settings.tokenizer.image_size,
        settings.seed,
        settings.data.train_fraction,
        workers=args.workers,
        first_category=settings.data.first_category,
        test_only=settings.data.test_only,
    )
    splits = corpus.splits
    print(
        f"Wrote {len(corpus.records)} images to {corpus.root} "
        f"({len(splits['train'])} train / {len(splits['test'])} test categories)"
    )
    return 0


def _cmd_train(args: argparse.Namespace, settings: Settings) -> int:
    from .data import load_corpus
    from .training import train

    result = train(load_corpus(args.data), settings, checkpoint=args.checkpoint)
    last = result.trace[-1] if result.trace else None
    if last is not None:
        print(f"epoch {last.epoch}: triplet {last.triplet:.4f} relation {last.relation:.4f} total {last.total:.4f}")
    print(f"Checkpoint written to {result.checkpoint}")
    return 0


def _cmd_eval(args: argparse.Namespace, settings: Settings) -> int:
    from .data import load_corpus
    from .evaluation import evaluate, write_rankings
    from .model.network import load_model

    corpus = load_corpus(args.data)
    model = load_model(args.checkpoint, settings)
    result = evaluate(model, corpus, settings)
    mode = result.report.mode
    report_path = result.report.write(args.out / f"metrics_{mode}.txt")
    write_rankings(args.out / f"rankings_{mode}.tsv", result.rankings)
    print(result.report.to_text(), end="")
    print(f"Report written to {report_path}")
    return 0


def _cmd_cross_eval(args: argparse.Namespace, settings: Settings) -> int:
    from .data import load_corpus
    from .evaluation import cross_corpus_evaluate, write_rankings
    from .model.network import load_model

    target = load_corpus(args.data)
    model = load_model(args.checkpoint, settings)
    result = cross_corpus_evaluate(model, target, settings)
    mode = result.report.mode
    report_path = result.report.write(args.out / f"metrics_cross_{mode}.txt")
    write_rankings(args.out / f"rankings_cross_{mode}.tsv", result.rankings)
    print(result.report.to_text(), end="")
    print(f"Report written to {report_path}")
    return 0


def _cmd_attn_map(args: argparse.Namespace, settings: Settings) -> int:
    from .explain import self_attention_map, write_attention_map
    from .model.network import load_model

    model = load_model(args.checkpoint, settings)
    amap = self_attention_map(model, _load_sample(args.image, args.modality), args.layer, args.head)
    path, alive_path = write_attention_map(args.out, amap, model.settings.tokenizer.patch_side)
    print(f"Attention map written to {path} (alive mask {alive_path})")
    return 0


def _cmd_correspond(args: argparse.Namespace, settings: Settings) -> int:
    from .explain import correspondences, pair_kernel, write_correspondences
    from .model.network import load_model
    from .model.relation import write_kernel_matrix

    model = load_model(args.checkpoint, settings)
    kernel = pair_kernel(model, _load_sample(args.sketch, "sketch"), _load_sample(args.photo, "photo"))
    result = correspondences(kernel, settings.eval.correspondence_top_k, str(args.photo))
    write_correspondences(args.out, result)
    if args.kernel_out:
        write_kernel_matrix(args.kernel_out, kernel)
    print(f"Correspondences for {len(result.matches)} sketch patches written to {args.out}")
    return 0


def _cmd_synth(args: argparse.Namespace, settings: Settings) -> int:
    from .data import load_corpus
    from .data.imageio import write_image
    from .evaluation import query_and_gallery
    from .explain import patch_replace_synthesis, write_provenance
    from .model.network import load_model

    corpus = load_corpus(args.data)
    model = load_model(args.checkpoint, settings)
    _, gallery_records = query_and_gallery(corpus, settings.eval.generalized)
    result = patch_replace_synthesis(
        model, _load_sample(args.sketch, "sketch"), corpus.load_many(gallery_records), args.mode, args.k
    )
    write_image(args.out, result.pixels)
    provenance = write_provenance(args.out.with_name(args.out.stem + ".provenance.tsv"), result)
    print(f"Synthesized image written to {args.out} (provenance {provenance})")
    return 0


def _cmd_influence(args: argparse.Namespace, settings: Settings) -> int:
    from .explain import most_influential_pair
    from .model.network import load_model

    model = load_model(args.checkpoint, settings)
    result = most_influential_pair(
        model,
        _load_sample(args.sketch, "sketch"),
        _load_sample(args.photo, "photo"),
        settings.eval.influence_granularity,
    )
    print(
        f"sketch patch {result.sketch_patch}, photo patch {result.photo_patch}: "
        f"score {result.base_score:.6f} drops by {result.drop:.6f} ({result.granularity})"
    )
    return 0


def _cmd_ablate(args: argparse.Namespace, settings: Settings) -> int:
    from .ablation import AblationPlan, format_table, run_ablation
    from .data import load_corpus

    plan = AblationPlan.default(include_keep_rates=not args.no_keep_rates)
    if args.variants:
        plan = plan.select(args.variants)
    rows = run_ablation(plan, load_corpus(args.data), settings, args.out, parallel=args.parallel)
    print(format_table(rows, settings.eval.ks), end="")
    return 0 if all(row.status == "ok" for row in rows) else 1


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "cross-eval": _cmd_cross_eval,
    "attn-map": _cmd_attn_map,
    "correspond": _cmd_correspond,
    "synth": _cmd_synth,
    "influence": _cmd_influence,
    "ablate": _cmd_ablate,
}


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse `argv`, run one subcommand and return its exit status."""

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2

    load_dotenv()
    _configure_logging(args.log_level)
    try:
        settings = load_config(args.config, _command_overrides(args))
        from .model.network import apply_precision

        apply_precision(settings)
        return _COMMANDS[args.command](args, settings)
    except Exception as exc:  # noqa: BLE001
        _LOGGER.debug("Command %s failed", args.command, exc_info=True)
        print(f"[sketch-retrieval] error: {exc}", file=sys.stderr)
        return 1


def run_cli() -> None:
    sys.exit(cli_main(sys.argv[1:]))


__all__ = ["build_parser", "cli_main", "run_cli"]
