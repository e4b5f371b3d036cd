#!/usr/bin/env python3
"""End-to-end desk-scale experiment: generate a seeded fixture corpus,
extract class-conditioned 32x32 patches, train the conditional denoiser,
then draw class-conditional samples and score them with the built-in
oracle classifier.

Example:
    python3 scripts/train_desk_model.py --out runs/desk --steps 3000 \
        --images-per-context 16 --samples-per-class 16
"""

from __future__ import annotations

import argparse
import collections
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from semsynth import diffusion, fixture, pipeline
from semsynth.config import ExperimentConfig


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/desk"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=3000)
    ap.add_argument("--images-per-context", type=int, default=16)
    ap.add_argument("--canvas", type=int, default=256)
    ap.add_argument("--samples-per-class", type=int, default=16)
    ap.add_argument("--timesteps", type=int, default=1000)
    args = ap.parse_args()

    cfg = ExperimentConfig.defaults()
    cfg.values["run"]["seed"] = args.seed
    cfg.values["run"]["output_root"] = str(args.out)
    cfg.values["fixture"]["images_per_context"] = args.images_per_context
    cfg.values["fixture"]["canvas"] = args.canvas
    cfg.values["train"]["max_steps"] = args.steps
    cfg.values["schedule"]["t"] = args.timesteps

    t0 = time.time()
    corpus_dir = pipeline.stage_fixture_gen(cfg, args.out / "corpus")
    print(f"[{time.time() - t0:7.1f}s] corpus -> {corpus_dir}")

    patch_dir = pipeline.stage_patchset_build(cfg, corpus_dir, args.out / "patches")
    print(f"[{time.time() - t0:7.1f}s] patches -> {patch_dir}")
    print((patch_dir / "counts.txt").read_text().strip())

    ckpt = pipeline.stage_train(cfg, patch_dir, args.out / "train")
    print(f"[{time.time() - t0:7.1f}s] model -> {ckpt}")

    from semsynth.labels import ClassVocabulary
    from semsynth.model import Denoiser

    vocab = ClassVocabulary.load(args.out / "train" / "vocab.txt")
    model = Denoiser.load(ckpt)
    sched = pipeline.schedule_from_config(cfg)

    per_class = collections.Counter()
    totals = collections.Counter()
    for label in vocab:
        want = label.name if not label.is_background else "background"
        images = diffusion.sample_batch(
            model, [label] * args.samples_per_class, sched, args.seed + 9000 + label.id
        )
        for i in range(args.samples_per_class):
            got = fixture.oracle_classify(images[i], vocab)
            totals[f"{label.context}/{want}"] += 1
            if got.name == want:
                per_class[f"{label.context}/{want}"] += 1
    hits = sum(per_class.values())
    n = sum(totals.values())
    print(f"[{time.time() - t0:7.1f}s] oracle accuracy {hits}/{n} = {hits / n:.3f}")
    for key in sorted(totals):
        print(f"  {key}: {per_class[key]}/{totals[key]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
