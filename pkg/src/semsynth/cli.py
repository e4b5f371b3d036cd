"""Command-line frontend for the synthetic-wafer-image pipeline.

Exit codes: 0 success, 1 runtime failure, 2 config parse failure,
3 precondition failure. Progress goes to stderr; artifacts go to an
output directory named <command>-<timestamp>-<seed> under the configured
output root (or to --out-dir verbatim).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from .annotate import ExportItem, SplitSpec, export_dataset
from .config import ExperimentConfig
from .errors import ConfigError, PreconditionError, SemsynthError
from . import pipeline
from .images import load_image
from .labels import ClassVocabulary
from .patchset import read_annotations

log = logging.getLogger("semsynth")

CONFIG_ENV_VAR = "SEMSYNTH_CONFIG"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semsynth")
    parser.add_argument("--config", default=os.environ.get(CONFIG_ENV_VAR))
    parser.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value (flags win over the file)")
    parser.add_argument("--out-dir", default=None, help="exact output directory")
    parser.add_argument("--dry-run", action="store_true",
                        help="validate config, print the plan, write nothing")
    parser.add_argument("--workers", type=int, default=1)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("fixture-gen")
    p = sub.add_parser("patchset-build")
    p.add_argument("--corpus", required=True)
    p = sub.add_parser("train")
    p.add_argument("--patches", required=True)
    p = sub.add_parser("sample")
    p.add_argument("--model", required=True)
    p.add_argument("--class-name", required=True)
    p.add_argument("--context", required=True)
    p.add_argument("--count", type=int, default=1)
    p = sub.add_parser("archetype")
    p.add_argument("--model", required=True)
    p.add_argument("--context", required=True)
    p.add_argument("--count", type=int, default=1)
    p = sub.add_parser("inject")
    p.add_argument("--model", required=True)
    p.add_argument("--archetype", required=True)
    p.add_argument("--context", required=True)
    p = sub.add_parser("transfer")
    p.add_argument("--model", required=True)
    p.add_argument("--archetype", required=True)
    p.add_argument("--archetype-context", required=True)
    p.add_argument("--class-name", required=True)
    p.add_argument("--class-context", required=True)
    p.add_argument("--count", type=int, default=1)
    p = sub.add_parser("pseudo-label")
    p.add_argument("--images", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--preds", default=None, help="external predictions directory")
    p = sub.add_parser("export")
    p.add_argument("--real", default=None, help="directory with images/ and labels/")
    p.add_argument("--synthetic", default=None)
    p.add_argument("--mixing", required=True,
                   choices=["real-only", "synthetic-only", "combined"])
    p = sub.add_parser("metrology")
    p.add_argument("--image", required=True)
    p.add_argument("--ref", default=None)
    p = sub.add_parser("evaluate")
    p.add_argument("--preds", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--vocab", required=True)
    sub.add_parser("e2e-demo")
    return parser


def _output_dir(args, cfg: ExperimentConfig) -> Path:
    if args.out_dir:
        return Path(args.out_dir)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    seed = cfg.get("run", "seed")
    return Path(cfg.get("run", "output_root")) / f"{args.command}-{stamp}-{seed}"


def _collect_items(root: Path, source: str) -> list[ExportItem]:
    vocab = ClassVocabulary.load(root / "vocab.txt")
    items = []
    for img_path in sorted((root / "images").glob("*.png")):
        ann_path = root / "labels" / f"{img_path.stem}.txt"
        anns = tuple(read_annotations(ann_path, vocab)) if ann_path.exists() else ()
        items.append(
            ExportItem(
                image_id=img_path.stem,
                image=load_image(img_path),
                annotations=anns,
                source=source,
            )
        )
    return items


def run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    for override in args.set:
        target, _, value = override.partition("=")
        section, _, key = target.partition(".")
        if not value or not key:
            raise ConfigError(f"bad --set {override!r}, expected SECTION.KEY=VALUE")
        cfg.set(section, key, value)

    out_dir = _output_dir(args, cfg)
    log.info("command: %s", args.command)
    log.info("resolved config:\n%s", cfg.describe())
    log.info("seed: %s", cfg.get("run", "seed"))
    if args.dry_run:
        print(f"plan: {args.command} -> {out_dir}")
        print(cfg.describe(), end="")
        return 0
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved-config.txt").write_text(cfg.describe())

    if args.command == "fixture-gen":
        pipeline.stage_fixture_gen(cfg, out_dir)
    elif args.command == "patchset-build":
        pipeline.stage_patchset_build(cfg, Path(args.corpus), out_dir)
    elif args.command == "train":
        pipeline.stage_train(cfg, Path(args.patches), out_dir)
    elif args.command == "sample":
        _cmd_sample(cfg, args, out_dir)
    elif args.command == "archetype":
        vocab = ClassVocabulary.load(Path(args.model).parent / "vocab.txt")
        pipeline.stage_archetype(
            cfg, Path(args.model), vocab, args.context, out_dir, count=args.count
        )
    elif args.command == "inject":
        vocab = ClassVocabulary.load(Path(args.model).parent / "vocab.txt")
        pipeline.stage_inject(
            cfg, Path(args.model), vocab, Path(args.archetype), args.context, out_dir
        )
    elif args.command == "transfer":
        _cmd_transfer(cfg, args, out_dir)
    elif args.command == "pseudo-label":
        vocab = ClassVocabulary.load(args.vocab)
        pipeline.stage_pseudo_label(
            cfg, Path(args.images), vocab, out_dir,
            preds_dir=Path(args.preds) if args.preds else None,
        )
    elif args.command == "export":
        items = []
        if args.real:
            items += _collect_items(Path(args.real), "real")
        if args.synthetic:
            items += _collect_items(Path(args.synthetic), "synthetic")
        if not items:
            raise PreconditionError("empty dataset")
        split = cfg.get("eval", "split")
        export_dataset(
            items,
            SplitSpec(train=split[0], val=split[1], test=split[2],
                      rng_seed=cfg.get("run", "seed")),
            args.mixing,
            out_dir,
        )
    elif args.command == "metrology":
        pipeline.stage_metrology(
            Path(args.image), out_dir, Path(args.ref) if args.ref else None
        )
    elif args.command == "evaluate":
        vocab = ClassVocabulary.load(args.vocab)
        result = pipeline.stage_evaluate(
            cfg, Path(args.preds), Path(args.truth), vocab, out_dir
        )
        print(result.to_text(), end="")
    elif args.command == "e2e-demo":
        _cmd_e2e_demo(cfg, out_dir)
    return 0


def _cmd_sample(cfg, args, out_dir: Path) -> None:
    from .images import save_image
    from .model import Denoiser
    from . import diffusion

    vocab = ClassVocabulary.load(Path(args.model).parent / "vocab.txt")
    model = Denoiser.load(Path(args.model))
    sched = pipeline.schedule_from_config(cfg)
    label = vocab.by_name(args.class_name, args.context)
    seed = cfg.get("run", "seed")
    images = diffusion.sample_batch(model, [label] * args.count, sched, seed)
    for i in range(args.count):
        save_image(out_dir / f"sample-{args.class_name}-{i:03d}.png", images[i])


def _cmd_transfer(cfg, args, out_dir: Path) -> None:
    from .images import save_image, load_image
    from .patchset import write_annotations
    from . import synthesis

    vocab = ClassVocabulary.load(Path(args.model).parent / "vocab.txt")
    reg = pipeline.registry_from_checkpoint(Path(args.model), vocab)
    sched = pipeline.schedule_from_config(cfg)
    archetype = load_image(args.archetype)
    label = vocab.by_name(args.class_name, args.class_context)
    seed = cfg.get("run", "seed")
    plan = synthesis.plan_placements(archetype, [(label, args.count)], seed)
    result = synthesis.transfer_defect(
        reg, archetype, args.archetype_context, label, plan, sched, seed
    )
    save_image(out_dir / "transfer.png", result.image)
    write_annotations(out_dir / "transfer.txt", result.annotations)
    (out_dir / "transfer.provenance.txt").write_text(repr(result.provenance) + "\n")


def _cmd_e2e_demo(cfg: ExperimentConfig, out_dir: Path) -> None:
    """Fixture corpus -> patches -> short training -> archetype -> inject ->
    pseudo-label -> export -> evaluate, printing a summary per stage."""
    corpus = pipeline.stage_fixture_gen(cfg, out_dir / "corpus")
    print(f"fixture-gen: {corpus}")
    patches = pipeline.stage_patchset_build(cfg, corpus, out_dir / "patches")
    print(f"patchset-build: {(patches / 'counts.txt').read_text().strip()}")
    ckpt = pipeline.stage_train(cfg, patches, out_dir / "train")
    print(f"train: {ckpt}")
    vocab = ClassVocabulary.load(out_dir / "train" / "vocab.txt")
    context = cfg.get("fixture", "contexts")[0]
    archetypes = pipeline.stage_archetype(
        cfg, ckpt, vocab, context, out_dir / "archetypes"
    )
    print(f"archetype: {archetypes[0]}")
    synth = pipeline.stage_inject(
        cfg, ckpt, vocab, archetypes[0], context, out_dir / "synthetic"
    )
    print(f"inject: {synth}")
    pseudo = pipeline.stage_pseudo_label(
        cfg, out_dir / "synthetic" / "images", vocab, out_dir / "pseudo"
    )
    print(f"pseudo-label: {(pseudo / 'audit.txt').read_text().strip()}")
    real_items = _collect_items(corpus, "real")
    synth_items = _collect_items(out_dir / "synthetic", "synthetic")
    split = cfg.get("eval", "split")
    split_spec = SplitSpec(
        train=split[0], val=split[1], test=split[2], rng_seed=cfg.get("run", "seed")
    )
    for mixing, pool in (
        ("real-only", real_items),
        ("synthetic-only", synth_items),
        ("combined", real_items + synth_items),
    ):
        manifest = export_dataset(pool, split_spec, mixing, out_dir / f"export-{mixing}")
        print(f"export {mixing}: {manifest}")
    pipeline.stage_pseudo_label(cfg, corpus / "images", vocab, out_dir / "test-preds")
    result = pipeline.stage_evaluate(
        cfg,
        out_dir / "test-preds" / "preds",
        corpus / "labels",
        vocab,
        out_dir / "eval",
    )
    print(result.to_text(), end="")
    print("e2e-demo: ok")


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except ConfigError as e:
        print(f"error: config: {e}", file=sys.stderr)
        return 2
    except PreconditionError as e:
        print(f"error: precondition: {e}", file=sys.stderr)
        return 3
    except SemsynthError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failures map to exit 1
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
