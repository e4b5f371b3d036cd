"""Shared test fixtures: tiny untrained denoisers for mechanics tests and
a small two-context fixture corpus."""

from __future__ import annotations

import numpy as np
import pytest

from semsynth import fixture, patchset
from semsynth.labels import ClassLabel, ClassVocabulary
from semsynth.model import Denoiser, DenoiserConfig
from semsynth.schedule import build_schedule

CONTEXTS = ["ls-p16", "ls-p8"]

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def tiny_denoiser(image_size: int = 8, num_classes: int = 3, rng_seed: int = 0) -> Denoiser:
    cfg = DenoiserConfig(
        image_size=image_size,
        num_classes=num_classes,
        base_channels=8,
        channel_multipliers=(1, 2),
        res_blocks_per_level=1,
        time_embedding_dim=16,
        attention_resolutions=(),
    )
    return Denoiser.create(cfg, rng_seed=rng_seed)


@pytest.fixture(scope="session")
def short_schedule():
    return build_schedule("cosine", 20)


@pytest.fixture(scope="session")
def vocab2() -> ClassVocabulary:
    return fixture.fixture_vocabulary(CONTEXTS)


@pytest.fixture(scope="session")
def corpus(vocab2) -> list[patchset.AnnotatedImage]:
    """Six planted fixture images, three per context."""
    images = []
    for ctx in CONTEXTS:
        for i in range(3):
            spec = fixture.context_spec(ctx, rng_seed=0)
            img, _ = fixture.generate(spec, ctx, f"{ctx}-{i}")
            images.append(
                fixture.plant_defects(
                    img, [("bridge-like", 2), ("gap-like", 2)], 1000 + i, vocab2
                )
            )
    return images


def make_label(cid: int, name: str = "x", context: str = "c") -> ClassLabel:
    if cid == 0:
        return ClassLabel(0, "background", context, is_background=True)
    return ClassLabel(cid, name, context)


def checker(size: int = 8) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    return ((yy + xx) % 2).astype(np.float64) * 2 - 1
