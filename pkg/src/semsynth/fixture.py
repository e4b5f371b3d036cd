"""Procedural SEM-like pattern generator with known ground truth.

Serves as the test oracle for the whole pipeline: seeded line-space /
contact-hole rendering with controllable CD, pitch, LER, LWR, blur and
noise; defect planting with exact bounding boxes; and a rule-based
residual detector/classifier used to audit generated images.

Intensity domain is [-1, 1] (dark background -1, bright features +1);
"contrast" means the full dark-to-bright range of 2.0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .annotate import Detection
from .errors import PreconditionError
from .labels import ClassLabel, ClassVocabulary
from .metrology import MetrologyReport
from .patchset import AnnotatedImage, DefectAnnotation

EDGE_CORRELATION_LENGTH = 10.0  # rows; low-pass scale of the roughness process

LINE_SPACE_DEFECTS = ("bridge-like", "gap-like", "collapse-like")
CONTACT_HOLE_DEFECTS = ("missing-hole-like",)

# built-in process contexts; two line-space pitches exercise defect transfer
CONTEXTS: dict[str, dict] = {
    "ls-p16": dict(kind="line-space", pitch=16.0, cd=7.0, ler_sigma=1.0, lwr_sigma=0.8),
    "ls-p8": dict(kind="line-space", pitch=8.0, cd=3.2, ler_sigma=0.5, lwr_sigma=0.4),
    "ch-p16": dict(kind="contact-hole", pitch=16.0, cd=8.0, ler_sigma=0.5, lwr_sigma=0.4),
}


@dataclass(frozen=True)
class PatternSpec:
    kind: str                   # "line-space" or "contact-hole"
    pitch: float
    cd: float
    ler_sigma: float = 0.0
    lwr_sigma: float = 0.0
    noise_sigma: float = 0.0    # fraction of contrast
    blur_sigma: float = 0.8     # pixels
    size: tuple[int, int] = (256, 256)
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("line-space", "contact-hole"):
            raise PreconditionError(f"unknown pattern kind {self.kind!r}")
        if not self.cd < self.pitch:
            raise PreconditionError(f"cd {self.cd} must be < pitch {self.pitch}")
        if min(self.ler_sigma, self.lwr_sigma, self.noise_sigma, self.blur_sigma) < 0:
            raise PreconditionError("sigmas must be non-negative")
        if self.ler_sigma ** 2 < self.lwr_sigma ** 2 / 4:
            raise PreconditionError("need ler_sigma >= lwr_sigma / 2")


def context_spec(context: str, size=(256, 256), noise_sigma=0.04, rng_seed=0) -> PatternSpec:
    if context not in CONTEXTS:
        raise PreconditionError(f"unknown fixture context {context!r}")
    return PatternSpec(size=size, noise_sigma=noise_sigma, rng_seed=rng_seed, **CONTEXTS[context])


def fixture_vocabulary(contexts: list[str], defect_kinds: tuple[str, ...] | None = None) -> ClassVocabulary:
    """Background class per context plus that context's defect kinds."""
    classes: list[ClassLabel] = []
    next_id = 0
    for ctx in contexts:
        classes.append(ClassLabel(next_id, "background", ctx, is_background=True))
        next_id += 1
    for ctx in contexts:
        kinds = defect_kinds or (
            LINE_SPACE_DEFECTS if context_spec(ctx).kind == "line-space" else CONTACT_HOLE_DEFECTS
        )
        for kind in kinds:
            classes.append(ClassLabel(next_id, kind, ctx))
            next_id += 1
    return ClassVocabulary(classes)


def _smooth_process(n: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Low-passed Gaussian process with exact sample std sigma."""
    if sigma == 0:
        return np.zeros(n)
    white = rng.standard_normal(n)
    if n == 1:  # exact-std normalization is undefined for a single draw
        return white * sigma
    smooth = ndimage.gaussian_filter1d(white, EDGE_CORRELATION_LENGTH / 2.0, mode="wrap")
    smooth -= smooth.mean()
    std = smooth.std()
    if std == 0:
        return np.zeros(n)
    return smooth / std * sigma


def _orthogonalize(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Remove b's component from a, preserving a's sample std."""
    if a.std() == 0 or b.std() == 0:
        return a
    target = a.std()
    a = a - (a @ b) / (b @ b) * b
    return a / a.std() * target if a.std() > 0 else a


def _render_line_space(spec: PatternSpec, rng: np.random.Generator) -> np.ndarray:
    """Anti-aliased coverage image in [0, 1], lines bright."""
    h, w = spec.size
    n_lines = int(math.floor(w / spec.pitch))
    cov = np.zeros((h, w))
    cols = np.arange(w)
    for j in range(n_lines + 1):
        center = spec.pitch / 2.0 + j * spec.pitch
        if center - spec.pitch / 2 > w:
            break
        width_dev = _smooth_process(h, spec.lwr_sigma, rng)
        sigma_c = math.sqrt(max(spec.ler_sigma ** 2 - spec.lwr_sigma ** 2 / 4.0, 0.0))
        center_dev = _orthogonalize(_smooth_process(h, sigma_c, rng), width_dev)
        left = center + center_dev - (spec.cd + width_dev) / 2.0
        right = center + center_dev + (spec.cd + width_dev) / 2.0
        # per-pixel coverage of [left, right] within [x-0.5, x+0.5]
        lo = np.maximum(cols[None, :] - 0.5, left[:, None])
        hi = np.minimum(cols[None, :] + 0.5, right[:, None])
        cov += np.clip(hi - lo, 0.0, 1.0)
    return np.clip(cov, 0.0, 1.0)


def _render_contact_hole(spec: PatternSpec, rng: np.random.Generator) -> np.ndarray:
    """Bright resist with a square grid of dark holes."""
    h, w = spec.size
    cov = np.ones((h, w))
    yy, xx = np.mgrid[0:h, 0:w]
    r = spec.cd / 2.0
    ny = int(math.floor(h / spec.pitch))
    nx = int(math.floor(w / spec.pitch))
    for iy in range(ny + 1):
        for ix in range(nx + 1):
            cy = spec.pitch / 2 + iy * spec.pitch
            cx = spec.pitch / 2 + ix * spec.pitch
            jx = _smooth_process(1, spec.ler_sigma, rng)[0] if spec.ler_sigma else 0.0
            jy = _smooth_process(1, spec.ler_sigma, rng)[0] if spec.ler_sigma else 0.0
            dist = np.hypot(yy - (cy + jy), xx - (cx + jx))
            cov = np.minimum(cov, np.clip(dist - r + 0.5, 0.0, 1.0))
    return cov


def generate(
    spec: PatternSpec,
    context: str = "ls-p16",
    source_id: str = "fixture-0",
) -> tuple[AnnotatedImage, MetrologyReport]:
    """Render a defect-free pattern plus its ground-truth metrology."""
    rng = np.random.default_rng(spec.rng_seed)
    if spec.kind == "line-space":
        cov = _render_line_space(spec, rng)
    else:
        cov = _render_contact_hole(spec, rng)
    if spec.blur_sigma > 0:
        cov = ndimage.gaussian_filter(cov, spec.blur_sigma, mode="nearest")
    img = cov * 2.0 - 1.0
    if spec.noise_sigma > 0:
        img = img + rng.normal(0.0, spec.noise_sigma * 2.0, size=img.shape)
    img = np.clip(img, -1.0, 1.0)

    n_interior = max(int(math.floor(spec.size[1] / spec.pitch)) - 1, 1)
    truth = MetrologyReport(
        cd_mean=spec.cd,
        cd=[spec.cd] * n_interior,
        pitch=spec.pitch if n_interior >= 2 else None,
        ler_sigma=spec.ler_sigma,
        lwr_sigma=spec.lwr_sigma,
        n_lines=n_interior,
    )
    return AnnotatedImage(image=img, annotations=[], context=context, source_id=source_id), truth


def _paint(img: np.ndarray, rect: tuple[int, int, int, int], value: float, blur: float) -> np.ndarray:
    """Composite a blurred rectangle of the given value; returns new image."""
    y1, x1, y2, x2 = rect
    m = np.zeros_like(img)
    m[y1:y2, x1:x2] = 1.0
    if blur > 0:
        m = ndimage.gaussian_filter(m, blur, mode="nearest")
        m = m / m.max() if m.max() > 0 else m
    return img * (1.0 - m) + value * m


def _changed_bbox(before: np.ndarray, after: np.ndarray, tol: float = 1e-3):
    diff = np.abs(after - before) > tol
    if not diff.any():
        return None
    ys, xs = np.nonzero(diff)
    return int(ys.min()), int(xs.min()), int(ys.max()) + 1, int(xs.max()) + 1


def plant_defects(
    img: AnnotatedImage,
    defects: list[tuple[str, int]],
    rng_seed: int,
    vocab: ClassVocabulary | None = None,
) -> AnnotatedImage:
    """Draw defect geometry into a fixture image, recording exact boxes."""
    spec = context_spec(img.context)
    vocab = vocab or fixture_vocabulary([img.context])
    rng = np.random.default_rng(rng_seed)
    h, w = img.image.shape
    out = img.image.copy()
    annotations = list(img.annotations)
    occupied = [a.to_pixels(h, w) for a in annotations]

    n_lines = int(math.floor(w / spec.pitch))
    for kind, count in defects:
        label = vocab.by_name(kind, img.context)
        for _ in range(count):
            placed = False
            for _attempt in range(200):
                before = out
                if spec.kind == "line-space":
                    result = _draw_line_space_defect(before, spec, kind, n_lines, rng)
                else:
                    result = _draw_contact_hole_defect(before, spec, kind, rng)
                if result is None:
                    continue
                candidate, rect = result
                bbox_px = _changed_bbox(before, candidate)
                if bbox_px is None:
                    continue
                y1, x1, y2, x2 = bbox_px
                if any(
                    max(0, min(x2, ox2) - max(x1, ox1)) > 0
                    and max(0, min(y2, oy2) - max(y1, oy1)) > 0
                    for ox1, oy1, ox2, oy2 in occupied
                ):
                    continue
                out = candidate
                cx = (x1 + x2) / 2.0 / w
                cy = (y1 + y2) / 2.0 / h
                annotations.append(
                    DefectAnnotation(
                        label=label,
                        bbox=(cx, cy, (x2 - x1) / w, (y2 - y1) / h),
                    )
                )
                occupied.append((x1, y1, x2, y2))
                placed = True
                break
            if not placed:
                raise PreconditionError(
                    f"could not place {kind} defect without overlap after retries"
                )
    noisy = out
    if spec.noise_sigma > 0:
        # re-noise only where geometry changed so defects match local texture
        changed = np.abs(out - img.image) > 1e-3
        noisy = out + changed * rng.normal(0.0, spec.noise_sigma * 2.0, size=out.shape)
        noisy = np.clip(noisy, -1.0, 1.0)
    return AnnotatedImage(
        image=noisy, annotations=annotations, context=img.context, source_id=img.source_id
    )


def _line_centers(spec: PatternSpec, n_lines: int) -> list[float]:
    return [spec.pitch / 2.0 + j * spec.pitch for j in range(n_lines)]


def _draw_line_space_defect(img, spec: PatternSpec, kind: str, n_lines: int, rng):
    h, w = img.shape
    centers = _line_centers(spec, n_lines)
    if kind == "bridge-like":
        j = int(rng.integers(0, n_lines - 1))
        ext = int(rng.integers(5, 10))
        y1 = int(rng.integers(2, h - ext - 2))
        x1 = int(round(centers[j] + spec.cd / 2 - 1))
        x2 = int(round(centers[j + 1] - spec.cd / 2 + 1))
        return _paint(img, (y1, x1, y1 + ext, x2), 1.0, spec.blur_sigma), (y1, x1, y1 + ext, x2)
    if kind == "gap-like":
        j = int(rng.integers(0, n_lines))
        ext = int(rng.integers(5, 10))
        y1 = int(rng.integers(2, h - ext - 2))
        x1 = int(round(centers[j] - spec.cd / 2 - 1))
        x2 = int(round(centers[j] + spec.cd / 2 + 1))
        return _paint(img, (y1, x1, y1 + ext, x2), -1.0, spec.blur_sigma), (y1, x1, y1 + ext, x2)
    if kind == "collapse-like":
        j = int(rng.integers(0, n_lines - 1))
        ext = int(rng.integers(10, 17))
        y1 = int(rng.integers(2, h - ext - 2))
        x1 = int(round(centers[j] - spec.cd / 2 - 1))
        x2 = int(round(centers[j] + spec.cd / 2 + 1))
        # line leans into the neighboring space: erase it, fill the gap
        out = _paint(img, (y1, x1, y1 + ext, x2), -1.0, spec.blur_sigma)
        gx1 = int(round(centers[j] + spec.cd / 2))
        gx2 = int(round(centers[j + 1] - spec.cd / 2))
        out = _paint(out, (y1, gx1, y1 + ext, gx2), 1.0, spec.blur_sigma)
        return out, (y1, x1, y1 + ext, gx2)
    raise PreconditionError(f"defect kind {kind!r} not valid for line-space")


def _draw_contact_hole_defect(img, spec: PatternSpec, kind: str, rng):
    if kind != "missing-hole-like":
        raise PreconditionError(f"defect kind {kind!r} not valid for contact-hole")
    h, w = img.shape
    ny = int(math.floor(h / spec.pitch))
    nx = int(math.floor(w / spec.pitch))
    iy = int(rng.integers(0, ny))
    ix = int(rng.integers(0, nx))
    cy = spec.pitch / 2 + iy * spec.pitch
    cx = spec.pitch / 2 + ix * spec.pitch
    r = int(math.ceil(spec.cd / 2)) + 1
    rect = (int(cy) - r, int(cx) - r, int(cy) + r, int(cx) + r)
    return _paint(img, rect, 1.0, spec.blur_sigma), rect


# ---------------------------------------------------------------------------
# rule-based oracle detector / classifier


def _residuals(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Smoothed deviation from the per-column median profile, plus an
    edge-suppressed copy (roughness bands live where the periodic profile
    has steep gradient)."""
    profile = np.median(img, axis=0)
    res = ndimage.gaussian_filter(img - profile[None, :], 1.5, mode="nearest")
    grad = np.abs(np.gradient(ndimage.gaussian_filter1d(profile, 1.0)))
    weighted = res / (1.0 + 6.0 * grad[None, :])
    return res, weighted


def _refine_box(res, weighted, box, lo: float, max_grow: int = 14):
    """Grow a detection core outward while the residual stays above `lo`
    (rows use the edge-suppressed residual to avoid crawling along lines),
    then pad one pixel for blur tails."""
    h, w = res.shape
    y1, x1, y2, x2 = box
    a, aw = np.abs(res), np.abs(weighted)
    for _ in range(max_grow):
        grew = False
        if x1 > 0 and a[y1:y2, x1 - 1].mean() > lo:
            x1 -= 1
            grew = True
        if x2 < w and a[y1:y2, x2 : x2 + 1].mean() > lo:
            x2 += 1
            grew = True
        if y1 > 0 and aw[y1 - 1, x1:x2].mean() > lo:
            y1 -= 1
            grew = True
        if y2 < h and aw[y2 : y2 + 1, x1:x2].mean() > lo:
            y2 += 1
            grew = True
        if not grew:
            break
    return (max(y1 - 1, 0), max(x1 - 1, 0), min(y2 + 1, h), min(x2 + 1, w))


def oracle_detect(
    img: np.ndarray,
    context: str,
    vocab: ClassVocabulary | None = None,
    *,
    threshold: float = 0.5,
    grow_threshold: float = 0.26,
    min_area: int | None = None,
) -> list[Detection]:
    """Detect planted-defect-style anomalies against the periodic pattern.

    Morphology scales with the context pitch so fine-pitch defects (only a
    few pixels across) survive the opening. Confidence is the normalized
    peak deviation. A constant or pattern-free image yields no detections.
    """
    spec = context_spec(context)
    vocab = vocab or fixture_vocabulary([context])
    h, w = img.shape
    profile = np.median(img, axis=0)
    if profile.max() - profile.min() < 0.4:
        return []
    if min_area is None:
        min_area = max(5, int(round(12 * (spec.pitch / 16.0) ** 2)))
    res, weighted = _residuals(img)
    mask = np.abs(weighted) > threshold
    if spec.pitch >= 12:
        mask = ndimage.binary_opening(mask, structure=np.ones((3, 3)))
    labeled, _ = ndimage.label(mask)
    boxes: list[tuple[int, int, int, int]] = []
    for sl in ndimage.find_objects(labeled):
        if sl is None:
            continue
        if (labeled[sl] > 0).sum() < min_area:
            continue
        boxes.append(
            _refine_box(res, weighted, (sl[0].start, sl[1].start, sl[0].stop, sl[1].stop),
                        grow_threshold)
        )
    boxes = _merge_boxes(boxes, gap=2)

    detections = []
    for (y1, x1, y2, x2) in boxes:
        sub = res[y1:y2, x1:x2]
        pos = float(sub[sub > 0].sum()) if (sub > 0).any() else 0.0
        neg = float(-sub[sub < 0].sum()) if (sub < 0).any() else 0.0
        peak = float(np.abs(sub).max())
        if spec.kind == "line-space":
            if pos > 2.5 * neg:
                kind = "bridge-like"
            elif neg > 2.5 * pos:
                kind = "gap-like"
            else:
                kind = "collapse-like"
        else:
            kind = "missing-hole-like"
        try:
            label = vocab.by_name(kind, context)
        except KeyError:
            continue
        conf = float(np.clip(peak / 2.5, 0.05, 0.99))
        detections.append(
            Detection(
                label=label,
                bbox=((x1 + x2) / 2 / w, (y1 + y2) / 2 / h, (x2 - x1) / w, (y2 - y1) / h),
                confidence=conf,
            )
        )
    return detections


def _merge_boxes(boxes, gap: int):
    """Union boxes that touch within `gap` pixels until a fixed point."""
    boxes = list(boxes)
    changed = True
    while changed:
        changed = False
        out = []
        while boxes:
            y1, x1, y2, x2 = boxes.pop()
            i = 0
            while i < len(boxes):
                by1, bx1, by2, bx2 = boxes[i]
                if (
                    min(y2, by2) + gap >= max(y1, by1)
                    and min(x2, bx2) + gap >= max(x1, bx1)
                ):
                    y1, x1 = min(y1, by1), min(x1, bx1)
                    y2, x2 = max(y2, by2), max(x2, bx2)
                    boxes.pop(i)
                    changed = True
                else:
                    i += 1
            out.append((y1, x1, y2, x2))
        boxes = out
    return boxes


def classify_context(img: np.ndarray, contexts: list[str]) -> str:
    """Pick the context whose pitch best matches the dominant period."""
    profile = img.mean(axis=0) - img.mean()
    power = np.abs(np.fft.rfft(profile)) ** 2
    w = len(profile)
    best, best_score = contexts[0], -1.0
    for ctx in contexts:
        pitch = context_spec(ctx).pitch
        k = w / pitch
        k0 = int(round(k))
        score = power[max(k0 - 1, 1) : k0 + 2].sum() if k0 + 1 < len(power) else 0.0
        if score > best_score:
            best, best_score = ctx, score
    return best


def oracle_classify(patch: np.ndarray, vocab: ClassVocabulary) -> ClassLabel:
    """Assign a (context, class) label to a square patch.

    Context comes from the dominant spatial frequency; the class from the
    strongest residual blob (none above threshold means background).
    """
    contexts = vocab.contexts()
    ctx = classify_context(patch, contexts)
    dets = oracle_detect(patch, ctx, vocab, threshold=0.3)
    if not dets:
        return vocab.background_for(ctx)
    best = max(dets, key=lambda d: d.confidence)
    if best.confidence < 0.3:  # weak blobs on small patches are roughness
        return vocab.background_for(ctx)
    return best.label
