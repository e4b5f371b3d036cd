"""Class-labeled patch datasets extracted from annotated full-size images.

Annotation files use the normalized text format "class_id cx cy w h", one
line per defect, one file per image. Dataset manifests carry one line per
patch record: "source_id x_offset y_offset size class_name".
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, PreconditionError
from .labels import ClassLabel, ClassVocabulary

log = logging.getLogger(__name__)

DEFAULT_SIZE_LADDER = (128, 256, 512)
ROUTE_THRESHOLD = 0.9   # annotations larger than this fraction of a patch go up a size


@dataclass(frozen=True)
class DefectAnnotation:
    label: ClassLabel
    bbox: tuple[float, float, float, float]  # normalized (cx, cy, w, h)

    def __post_init__(self):
        cx, cy, w, h = self.bbox
        if w <= 0 or h <= 0:
            raise PreconditionError(f"bbox dims must be positive, got {self.bbox}")
        if not (0 <= cx <= 1 and 0 <= cy <= 1 and w <= 1 and h <= 1):
            raise PreconditionError(f"bbox outside [0,1]: {self.bbox}")

    def to_pixels(self, height: int, width: int) -> tuple[float, float, float, float]:
        """(x1, y1, x2, y2) in pixel coordinates."""
        cx, cy, w, h = self.bbox
        return (
            (cx - w / 2) * width,
            (cy - h / 2) * height,
            (cx + w / 2) * width,
            (cy + h / 2) * height,
        )


@dataclass
class AnnotatedImage:
    image: np.ndarray
    annotations: list[DefectAnnotation]
    context: str
    source_id: str

    def __post_init__(self):
        for a in self.annotations:
            if a.label.context != self.context:
                raise PreconditionError(
                    f"annotation context {a.label.context!r} != image context {self.context!r}"
                )


@dataclass(frozen=True)
class PatchRecord:
    image: np.ndarray
    label: ClassLabel
    origin: tuple[str, int, int]  # (source_id, x_offset, y_offset)


@dataclass
class PatchDataset:
    records: list[PatchRecord]
    patch_size: int
    class_counts: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.class_counts:
            counts: dict[str, int] = {}
            for r in self.records:
                counts[r.label.name] = counts.get(r.label.name, 0) + 1
            self.class_counts = counts

    def __len__(self) -> int:
        return len(self.records)

    def count_report(self) -> str:
        """Per-class instance counts, e.g. 'gap: 1046, linecollapse: 550'."""
        return ", ".join(f"{k}: {v}" for k, v in sorted(self.class_counts.items()))

    def manifest(self) -> str:
        lines = [
            f"{r.origin[0]} {r.origin[1]} {r.origin[2]} {self.patch_size} {r.label.name}"
            for r in self.records
        ]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class PatchPolicy:
    containment_min: float = 1.0
    background_per_image: int = 4
    defect_patches_per_annotation: int = 1
    rng_seed: int = 0
    size_ladder: tuple[int, ...] = DEFAULT_SIZE_LADDER
    route_threshold: float = ROUTE_THRESHOLD
    max_attempts: int = 200


def routed_size(ann: DefectAnnotation, height: int, width: int, policy: PatchPolicy) -> int:
    """Smallest ladder size that fits the annotation below the routing threshold."""
    _, _, w, h = ann.bbox
    max_dim = max(w * width, h * height)
    for size in sorted(policy.size_ladder):
        if max_dim <= policy.route_threshold * size:
            return size
    raise PreconditionError(
        f"annotation of extent {max_dim:.0f}px exceeds largest patch size "
        f"{max(policy.size_ladder)}"
    )


def _boxes_px(img: AnnotatedImage) -> list[tuple[float, float, float, float]]:
    h, w = img.image.shape
    return [a.to_pixels(h, w) for a in img.annotations]


def _intersection(box, x0, y0, size) -> float:
    x1, y1, x2, y2 = box
    ix = max(0.0, min(x2, x0 + size) - max(x1, x0))
    iy = max(0.0, min(y2, y0 + size) - max(y1, y0))
    return ix * iy


def extract_patches(
    img: AnnotatedImage,
    patch_size: int,
    policy: PatchPolicy,
    vocab: ClassVocabulary | None = None,
) -> list[PatchRecord]:
    """Jittered defect patches per annotation routed to this size, plus
    uniformly sampled background windows with zero bbox overlap."""
    height, width = img.image.shape
    if patch_size > min(height, width):
        raise PreconditionError(
            f"patch size {patch_size} exceeds image dims {img.image.shape}"
        )
    rng = np.random.default_rng(policy.rng_seed)
    boxes = _boxes_px(img)
    records: list[PatchRecord] = []

    for ann, box in zip(img.annotations, boxes):
        if routed_size(ann, height, width, policy) != patch_size:
            continue
        x1, y1, x2, y2 = box
        area = (x2 - x1) * (y2 - y1)
        # window origin range for full containment, clamped to the canvas
        lo_x, hi_x = max(0.0, x2 - patch_size), min(width - patch_size, x1)
        lo_y, hi_y = max(0.0, y2 - patch_size), min(height - patch_size, y1)
        placed = 0
        # several jittered windows per annotation act as translation
        # augmentation; distinct origins only
        seen_origins: set[tuple[int, int]] = set()
        for _ in range(policy.max_attempts):
            if placed >= policy.defect_patches_per_annotation:
                break
            if policy.containment_min >= 1.0:
                if lo_x > hi_x or lo_y > hi_y:
                    break
                x0 = int(rng.integers(int(np.ceil(lo_x)), int(np.floor(hi_x)) + 1))
                y0 = int(rng.integers(int(np.ceil(lo_y)), int(np.floor(hi_y)) + 1))
            else:
                x0 = int(rng.integers(0, width - patch_size + 1))
                y0 = int(rng.integers(0, height - patch_size + 1))
                if _intersection(box, x0, y0, patch_size) < policy.containment_min * area:
                    continue
            if (x0, y0) in seen_origins:
                continue
            # reject windows that also contain a different class
            mixed = any(
                other_ann.label.id != ann.label.id
                and _intersection(other_box, x0, y0, patch_size) > 0
                for other_ann, other_box in zip(img.annotations, boxes)
                if other_box is not box
            )
            if mixed:
                continue
            records.append(
                PatchRecord(
                    image=img.image[y0 : y0 + patch_size, x0 : x0 + patch_size].copy(),
                    label=ann.label,
                    origin=(img.source_id, x0, y0),
                )
            )
            seen_origins.add((x0, y0))
            placed += 1
        if not placed:
            log.warning(
                "skipping annotation %s in %s: no window satisfies containment",
                ann.bbox,
                img.source_id,
            )

    n_bg = 0
    attempts = 0
    while n_bg < policy.background_per_image and attempts < policy.max_attempts * 10:
        attempts += 1
        x0 = int(rng.integers(0, width - patch_size + 1))
        y0 = int(rng.integers(0, height - patch_size + 1))
        if any(_intersection(b, x0, y0, patch_size) > 0 for b in boxes):
            continue
        records.append(
            PatchRecord(
                image=img.image[y0 : y0 + patch_size, x0 : x0 + patch_size].copy(),
                label=_background_label(img, vocab),
                origin=(img.source_id, x0, y0),
            )
        )
        n_bg += 1
    if n_bg < policy.background_per_image:
        log.warning(
            "only %d/%d background windows placed for %s",
            n_bg,
            policy.background_per_image,
            img.source_id,
        )
    return records


def _background_label(img: AnnotatedImage, vocab: ClassVocabulary | None) -> ClassLabel:
    if vocab is not None:
        return vocab.background_for(img.context)
    # background label id 0 by convention when no vocabulary is supplied
    return ClassLabel(0, "background", img.context, is_background=True)


def build_dataset(
    corpus: list[AnnotatedImage],
    patch_size: int,
    policy: PatchPolicy,
    *,
    vocab: ClassVocabulary | None = None,
    allow_multi_context: bool = False,
) -> PatchDataset:
    """Concatenated per-image extraction with a class-count report."""
    if not corpus:
        raise PreconditionError("empty corpus")
    contexts = {img.context for img in corpus}
    if len(contexts) > 1 and not allow_multi_context:
        raise PreconditionError(
            f"corpus mixes contexts {sorted(contexts)}; pass allow_multi_context=True"
        )
    records: list[PatchRecord] = []
    for i, img in enumerate(corpus):
        per_image = PatchPolicy(
            containment_min=policy.containment_min,
            background_per_image=policy.background_per_image,
            defect_patches_per_annotation=policy.defect_patches_per_annotation,
            rng_seed=int(np.random.SeedSequence([policy.rng_seed, i]).generate_state(1)[0]),
            size_ladder=policy.size_ladder,
            route_threshold=policy.route_threshold,
            max_attempts=policy.max_attempts,
        )
        records.extend(extract_patches(img, patch_size, per_image, vocab=vocab))
    dataset = PatchDataset(records=records, patch_size=patch_size)
    log.info("patch dataset built: %s", dataset.count_report())
    return dataset


def vocabulary_for(corpus: list[AnnotatedImage]) -> ClassVocabulary:
    """Stable union vocabulary over a (possibly multi-context) corpus,
    including one background class per context."""
    seen: dict[tuple[str, str], ClassLabel] = {}
    for img in corpus:
        for a in img.annotations:
            seen.setdefault((a.label.name, a.label.context), a.label)
    classes: list[ClassLabel] = []
    contexts = []
    for img in corpus:
        if img.context not in contexts:
            contexts.append(img.context)
    next_id = 0
    for ctx in contexts:
        classes.append(ClassLabel(next_id, "background", ctx, is_background=True))
        next_id += 1
    for (name, ctx) in sorted(seen):
        if name == "background":
            continue
        classes.append(ClassLabel(next_id, name, ctx))
        next_id += 1
    return ClassVocabulary(classes)


def read_annotations(
    path: str | Path, vocab: ClassVocabulary
) -> list[DefectAnnotation]:
    """Parse a normalized 'class_id cx cy w h' annotation file."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ParseError(f"{path}:{lineno}: expected 'class_id cx cy w h'")
        try:
            cid = int(parts[0])
            vals = tuple(float(p) for p in parts[1:])
        except ValueError:
            raise ParseError(f"{path}:{lineno}: malformed number") from None
        try:
            label = vocab.by_id(cid)
        except KeyError:
            raise ParseError(f"{path}:{lineno}: unknown class id {cid}") from None
        try:
            out.append(DefectAnnotation(label=label, bbox=vals))
        except PreconditionError as e:
            raise ParseError(f"{path}:{lineno}: {e}") from None
    return out


def write_annotations(path: str | Path, annotations: list[DefectAnnotation]) -> None:
    lines = [
        f"{a.label.id} {a.bbox[0]:.6f} {a.bbox[1]:.6f} {a.bbox[2]:.6f} {a.bbox[3]:.6f}"
        for a in annotations
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
