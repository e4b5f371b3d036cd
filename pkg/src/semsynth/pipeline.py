"""Directory-level pipeline stages shared by the CLI and the end-to-end
demo: each stage reads/writes the documented file formats, so external
tools (real detectors, real datasets) can replace any producer.

Layout conventions inside a stage output directory:
  images/<id>.png       8-bit grayscale images
  labels/<id>.txt       "class_id cx cy w h" annotation lines
  preds/<id>.txt        "class_id cx cy w h confidence" prediction lines
  vocab.txt             "id name context" class vocabulary
"""

from __future__ import annotations

import logging
import zlib
from pathlib import Path

import numpy as np

from . import annotate, diffusion, fixture, metrology, patchset, synthesis
from .config import ExperimentConfig
from .errors import PreconditionError
from .images import load_image, save_image
from .labels import ClassVocabulary
from .model import Denoiser, DenoiserConfig
from .schedule import NoiseSchedule, build_schedule

log = logging.getLogger(__name__)


def schedule_from_config(cfg: ExperimentConfig) -> NoiseSchedule:
    return build_schedule(
        cfg.get("schedule", "kind"),
        cfg.get("schedule", "t"),
        s=cfg.get("schedule", "s"),
        beta_clip=cfg.get("schedule", "beta_clip"),
    )


def stage_fixture_gen(cfg: ExperimentConfig, out_dir: Path) -> Path:
    """Generate seeded fixture corpora with planted defects."""
    contexts = cfg.get("fixture", "contexts")
    canvas = cfg.get("fixture", "canvas")
    n_images = cfg.get("fixture", "images_per_context")
    defects = cfg.get("fixture", "defects_per_image")
    noise = cfg.get("fixture", "noise_sigma")
    seed = cfg.get("run", "seed")

    vocab = fixture.fixture_vocabulary(contexts)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)
    (out_dir / "truth").mkdir(parents=True, exist_ok=True)
    vocab.save(out_dir / "vocab.txt")

    for ctx in contexts:
        for i in range(n_images):
            ctx_key = zlib.crc32(ctx.encode())
            img_seed = int(np.random.SeedSequence([seed, ctx_key, i]).generate_state(1)[0])
            spec = fixture.context_spec(
                ctx, size=(canvas, canvas), noise_sigma=noise, rng_seed=img_seed
            )
            image_id = f"{ctx}-{i:03d}"
            annotated, truth = fixture.generate(spec, context=ctx, source_id=image_id)
            if defects:
                annotated = fixture.plant_defects(annotated, defects, img_seed + 1, vocab)
            save_image(out_dir / "images" / f"{image_id}.png", annotated.image)
            patchset.write_annotations(
                out_dir / "labels" / f"{image_id}.txt", annotated.annotations
            )
            (out_dir / "truth" / f"{image_id}.txt").write_text(truth.to_text())
    return out_dir


def load_corpus(corpus_dir: Path) -> tuple[list[patchset.AnnotatedImage], ClassVocabulary]:
    vocab = ClassVocabulary.load(corpus_dir / "vocab.txt")
    corpus = []
    for img_path in sorted((corpus_dir / "images").glob("*.png")):
        image_id = img_path.stem
        context = image_id.rsplit("-", 1)[0]
        ann_path = corpus_dir / "labels" / f"{image_id}.txt"
        annotations = (
            patchset.read_annotations(ann_path, vocab) if ann_path.exists() else []
        )
        corpus.append(
            patchset.AnnotatedImage(
                image=load_image(img_path),
                annotations=annotations,
                context=context,
                source_id=image_id,
            )
        )
    if not corpus:
        raise PreconditionError(f"no images found under {corpus_dir}")
    return corpus, vocab


def stage_patchset_build(cfg: ExperimentConfig, corpus_dir: Path, out_dir: Path) -> Path:
    corpus, vocab = load_corpus(corpus_dir)
    policy = patchset.PatchPolicy(
        containment_min=cfg.get("patchset", "containment_min"),
        background_per_image=cfg.get("patchset", "background_per_image"),
        defect_patches_per_annotation=cfg.get("patchset", "defect_patches_per_annotation"),
        rng_seed=cfg.get("run", "seed"),
        size_ladder=tuple(cfg.get("patchset", "size_ladder")),
    )
    dataset = patchset.build_dataset(
        corpus,
        cfg.get("patchset", "patch_size"),
        policy,
        vocab=vocab,
        allow_multi_context=True,
    )
    if len(dataset) == 0:
        raise PreconditionError("patch extraction produced an empty dataset")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "patches").mkdir(exist_ok=True)
    for i, record in enumerate(dataset.records):
        save_image(out_dir / "patches" / f"{i:05d}.png", record.image)
    (out_dir / "manifest.txt").write_text(dataset.manifest())
    (out_dir / "counts.txt").write_text(dataset.count_report() + "\n")
    vocab.save(out_dir / "vocab.txt")
    log.info("patch dataset: %s", dataset.count_report())
    return out_dir


def load_patch_dataset(patch_dir: Path) -> tuple[patchset.PatchDataset, ClassVocabulary]:
    vocab = ClassVocabulary.load(patch_dir / "vocab.txt")
    lines = (patch_dir / "manifest.txt").read_text().splitlines()
    records = []
    patch_size = None
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        source_id, x, y, size, class_name = line.split()
        patch_size = int(size)
        context = source_id.rsplit("-", 1)[0]
        records.append(
            patchset.PatchRecord(
                image=load_image(patch_dir / "patches" / f"{i:05d}.png"),
                label=vocab.by_name(class_name, context),
                origin=(source_id, int(x), int(y)),
            )
        )
    if patch_size is None:
        raise PreconditionError(f"empty patch manifest in {patch_dir}")
    return patchset.PatchDataset(records=records, patch_size=patch_size), vocab


def stage_train(cfg: ExperimentConfig, patch_dir: Path, out_dir: Path) -> Path:
    dataset, vocab = load_patch_dataset(patch_dir)
    if len(dataset) == 0:
        raise PreconditionError("empty dataset")
    size = cfg.get("model", "image_size")
    if dataset.patch_size != size:
        raise PreconditionError(
            f"patch size {dataset.patch_size} != configured model size {size}"
        )
    model = Denoiser.create(
        DenoiserConfig.for_size(
            size, len(vocab), time_embedding_dim=cfg.get("model", "time_embedding_dim")
        ),
        rng_seed=cfg.get("run", "seed"),
    )
    sched = schedule_from_config(cfg)
    model.schedule_params = {
        "kind": sched.kind, "T": sched.T, "s": sched.s, "beta_clip": sched.beta_clip
    }
    opts = diffusion.TrainOptions(
        learning_rate=cfg.get("train", "learning_rate"),
        batch_size=cfg.get("train", "batch_size"),
        max_steps=cfg.get("train", "max_steps"),
        checkpoint_every=cfg.get("train", "checkpoint_every"),
        class_balance=cfg.get("train", "class_balance"),
        rng_seed=cfg.get("run", "seed"),
        checkpoint_dir=str(out_dir / "checkpoints"),
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    model, history = diffusion.train(model, dataset, sched, opts)
    model.save(out_dir / "model.ckpt")
    diffusion.save_loss_history(out_dir / "loss.csv", history)
    vocab.save(out_dir / "vocab.txt")
    return out_dir / "model.ckpt"


def registry_from_checkpoint(ckpt: Path, vocab: ClassVocabulary) -> synthesis.ModelRegistry:
    model = Denoiser.load(ckpt)
    size = model.config.image_size
    return synthesis.ModelRegistry(
        models={size: model},
        routing={c.id: size for c in vocab},
        vocab=vocab,
    )


def stage_archetype(
    cfg: ExperimentConfig, ckpt: Path, vocab: ClassVocabulary, context: str, out_dir: Path,
    count: int = 1,
) -> list[Path]:
    reg = registry_from_checkpoint(ckpt, vocab)
    sched = schedule_from_config(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        spec = synthesis.ArchetypeSpec(
            target_height=cfg.get("archetype", "target_height"),
            target_width=cfg.get("archetype", "target_width"),
            tile_size=cfg.get("archetype", "tile_size"),
            overlap=cfg.get("archetype", "overlap"),
            context=context,
            rng_seed=cfg.get("run", "seed") + i,
        )
        canvas = synthesis.generate_archetype(reg, spec, sched)
        path = out_dir / f"archetype-{context}-{i:03d}.png"
        save_image(path, canvas)
        paths.append(path)
    return paths


def stage_inject(
    cfg: ExperimentConfig,
    ckpt: Path,
    vocab: ClassVocabulary,
    archetype_path: Path,
    context: str,
    out_dir: Path,
) -> Path:
    reg = registry_from_checkpoint(ckpt, vocab)
    sched = schedule_from_config(cfg)
    archetype = load_image(archetype_path)
    seed = cfg.get("run", "seed")
    requests = [
        (vocab.by_name(name, context), count)
        for name, count in cfg.get("inject", "requests")
    ]
    plan = synthesis.plan_placements(archetype, requests, seed)
    result = synthesis.inject_defects(reg, archetype, plan, sched, seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    image_id = f"{context}-synth-{archetype_path.stem}"
    (out_dir / "images").mkdir(exist_ok=True)
    (out_dir / "labels").mkdir(exist_ok=True)
    save_image(out_dir / "images" / f"{image_id}.png", result.image)
    patchset.write_annotations(out_dir / "labels" / f"{image_id}.txt", result.annotations)
    (out_dir / f"{image_id}.provenance.txt").write_text(repr(result.provenance) + "\n")
    vocab.save(out_dir / "vocab.txt")
    return out_dir / "images" / f"{image_id}.png"


def stage_pseudo_label(
    cfg: ExperimentConfig,
    images_dir: Path,
    vocab: ClassVocabulary,
    out_dir: Path,
    preds_dir: Path | None = None,
) -> Path:
    """Predictions come from an external detector directory when given,
    otherwise from the built-in fixture oracle detector."""
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "preds").mkdir(exist_ok=True)
    if preds_dir is None:
        contexts = vocab.contexts()
        for img_path in sorted(images_dir.glob("*.png")):
            img = load_image(img_path)
            ctx = next((c for c in contexts if img_path.stem.startswith(c)), None)
            ctx = ctx or fixture.classify_context(img, contexts)
            dets = fixture.oracle_detect(img, ctx, vocab)
            lines = [
                f"{d.label.id} {d.bbox[0]:.6f} {d.bbox[1]:.6f} {d.bbox[2]:.6f} "
                f"{d.bbox[3]:.6f} {d.confidence:.4f}"
                for d in dets
            ]
            (out_dir / "preds" / f"{img_path.stem}.txt").write_text(
                "\n".join(lines) + ("\n" if lines else "")
            )
        preds_dir = out_dir / "preds"
    dets = annotate.ingest_predictions(preds_dir, vocab)
    labels, audit = annotate.pseudo_label(dets, cfg.get("eval", "conf_min"))
    (out_dir / "labels").mkdir(exist_ok=True)
    for image_id, anns in labels.items():
        patchset.write_annotations(out_dir / "labels" / f"{image_id}.txt", anns)
    (out_dir / "audit.txt").write_text(audit.to_text())
    return out_dir


def stage_metrology(
    image_path: Path, out_dir: Path, ref_path: Path | None = None
) -> Path:
    img = load_image(image_path)
    report = metrology.measure(img)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.txt").write_text(report.to_text())
    profile = metrology.line_scan(img)
    (out_dir / "profile.txt").write_text(
        "\n".join(f"{i} {v:.6f}" for i, v in enumerate(profile.values)) + "\n"
    )
    if ref_path is not None:
        ref = metrology.measure(load_image(ref_path))
        delta = metrology.compare(report, ref)
        (out_dir / "compare.txt").write_text(delta.to_text())
    return out_dir / "report.txt"


def stage_evaluate(
    cfg: ExperimentConfig,
    preds_dir: Path,
    truth_dir: Path,
    vocab: ClassVocabulary,
    out_dir: Path,
) -> annotate.EvalResult:
    dets = annotate.ingest_predictions(preds_dir, vocab)
    truth = {}
    for f in sorted(truth_dir.glob("*.txt")):
        truth[f.stem] = patchset.read_annotations(f, vocab)
    result = annotate.evaluate(dets, truth, cfg.get("eval", "iou_min"))
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "eval.txt").write_text(result.to_text())
    (out_dir / "eval.csv").write_text(result.to_csv())
    return result
