#!/usr/bin/env python3
"""Produce a labeled synthetic inspection set from a trained checkpoint:
batch-generate patterned archetype canvases, inject masked defects into
each, and write images/, labels/, and provenance files ready for export.

Example:
    python3 scripts/build_synthetic_dataset.py --model runs/desk/train/model.ckpt \
        --context ls-p16 --count 10 --out runs/desk/synthetic
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from semsynth import patchset, pipeline, synthesis
from semsynth.config import ExperimentConfig
from semsynth.images import save_image
from semsynth.labels import ClassVocabulary


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", type=Path, required=True)
    ap.add_argument("--context", default="ls-p16")
    ap.add_argument("--count", type=int, default=10)
    ap.add_argument("--out", type=Path, default=Path("runs/synthetic"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--size", type=int, default=104, help="archetype height and width")
    ap.add_argument("--tile", type=int, default=32)
    ap.add_argument("--overlap", type=int, default=8)
    ap.add_argument("--timesteps", type=int, default=1000)
    ap.add_argument(
        "--requests", default="bridge-like:2 gap-like:1",
        help="space-separated class:count defect requests per image",
    )
    args = ap.parse_args()

    cfg = ExperimentConfig.defaults()
    cfg.values["schedule"]["t"] = args.timesteps

    vocab = ClassVocabulary.load(args.model.parent / "vocab.txt")
    reg = pipeline.registry_from_checkpoint(args.model, vocab)
    sched = pipeline.schedule_from_config(cfg)

    requests = []
    for item in args.requests.split():
        name, _, count = item.partition(":")
        requests.append((vocab.by_name(name, args.context), int(count)))

    specs = [
        synthesis.ArchetypeSpec(
            target_height=args.size,
            target_width=args.size,
            tile_size=args.tile,
            overlap=args.overlap,
            context=args.context,
            rng_seed=args.seed + i,
        )
        for i in range(args.count)
    ]
    t0 = time.time()
    canvases = synthesis.generate_archetype_batch(reg, specs, sched)
    print(f"[{time.time() - t0:7.1f}s] {len(canvases)} archetypes generated")

    (args.out / "images").mkdir(parents=True, exist_ok=True)
    (args.out / "labels").mkdir(parents=True, exist_ok=True)
    vocab.save(args.out / "vocab.txt")
    for i, canvas in enumerate(canvases):
        plan = synthesis.plan_placements(canvas, requests, args.seed + 300 + i)
        result = synthesis.inject_defects(reg, canvas, plan, sched, args.seed + 400 + i)
        image_id = f"{args.context}-synth-{i:03d}"
        save_image(args.out / "images" / f"{image_id}.png", result.image)
        patchset.write_annotations(
            args.out / "labels" / f"{image_id}.txt", result.annotations
        )
        (args.out / f"{image_id}.provenance.txt").write_text(
            repr(result.provenance) + "\n"
        )
        print(f"  {image_id}: {len(result.annotations)} defects")
    print(f"[{time.time() - t0:7.1f}s] dataset -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
