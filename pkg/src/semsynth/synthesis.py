"""Full-size synthetic image assembly: raster-scan patch stitching for
defect-free archetypes, placement planning, and defect injection by
mask-guided inpainting (including cross-context transfer).

Tiling uses raster order with L-shaped known masks: each new tile keeps
the overlap strips it shares with already-generated neighbors and
generates the rest. Last row/column tiles shift inward so tiles never
exceed the canvas.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .diffusion import inpaint, sample
from .errors import PreconditionError
from .labels import ClassLabel, ClassVocabulary
from .model import Denoiser
from .patchset import DefectAnnotation
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)

# per-class inpainting mask dims (h, w); fallback used for unknown classes
DEFAULT_MASK_TABLE: dict[str, tuple[int, int]] = {
    "bridge-like": (9, 13),
    "gap-like": (9, 9),
    "collapse-like": (16, 14),
    "missing-hole-like": (12, 12),
}
FALLBACK_MASK_DIMS = (12, 12)

PLACEMENT_AREA_BUDGET = 0.25
PLACEMENT_RETRIES = 200


@dataclass
class ModelRegistry:
    models: dict[int, Denoiser]                 # patch_size -> model
    routing: dict[int, int]                     # class id -> patch_size
    vocab: ClassVocabulary

    def route(self, c: ClassLabel) -> tuple[int, Denoiser]:
        size = self.routing.get(c.id)
        if size is None or size not in self.models:
            raise PreconditionError(f"class {c.name!r} (id {c.id}) not routable")
        return size, self.models[size]

    def model_versions(self) -> dict[int, str]:
        return {size: m.checkpoint_hash() for size, m in self.models.items()}


@dataclass(frozen=True)
class ArchetypeSpec:
    target_height: int
    target_width: int
    tile_size: int
    overlap: int
    context: str
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 < self.overlap < self.tile_size:
            raise PreconditionError(
                f"need 0 < overlap < tile_size, got {self.overlap}/{self.tile_size}"
            )
        if min(self.target_height, self.target_width) < self.tile_size:
            raise PreconditionError("target dims must be >= tile_size")


@dataclass(frozen=True)
class DefectPlacement:
    label: ClassLabel
    site: tuple[int, int]          # (x, y) top-left of the mask rectangle
    mask_shape: tuple[int, int]    # (h, w)


@dataclass
class SyntheticImage:
    image: np.ndarray
    annotations: list[DefectAnnotation]
    provenance: dict = field(default_factory=dict)


def tile_origins(target: int, tile: int, overlap: int) -> list[int]:
    """Raster origins with the last tile shifted inward to fit exactly."""
    stride = tile - overlap
    origins = [0]
    while origins[-1] + tile < target:
        origins.append(min(origins[-1] + stride, target - tile))
    return origins


def generate_archetype(
    reg: ModelRegistry,
    spec: ArchetypeSpec,
    s: NoiseSchedule,
    use_ema: bool = True,
) -> np.ndarray:
    """Stitch a defect-free full-size image from conditioned tiles."""
    bg = reg.vocab.background_for(spec.context)
    size, model = reg.route(bg)
    if size != spec.tile_size:
        raise PreconditionError(
            f"background for {spec.context!r} routed to size {size}, spec wants {spec.tile_size}"
        )
    canvas = np.zeros((spec.target_height, spec.target_width))
    generated = np.zeros_like(canvas, dtype=bool)
    ys = tile_origins(spec.target_height, spec.tile_size, spec.overlap)
    xs = tile_origins(spec.target_width, spec.tile_size, spec.overlap)
    seeds = _tile_seeds(spec.rng_seed, len(ys) * len(xs))

    k = 0
    for y0 in ys:
        for x0 in xs:
            window = (slice(y0, y0 + spec.tile_size), slice(x0, x0 + spec.tile_size))
            if k == 0:
                tile = sample(model, bg, s, seeds[0], use_ema=use_ema)
            else:
                mask = generated[window].astype(np.float64)
                tile = inpaint(model, canvas[window], mask, bg, s, seeds[k], use_ema=use_ema)
            canvas[window] = tile
            generated[window] = True
            k += 1
    return canvas


def generate_archetype_batch(
    reg: ModelRegistry,
    specs: list[ArchetypeSpec],
    s: NoiseSchedule,
    use_ema: bool = True,
) -> list[np.ndarray]:
    """Stitch several archetypes of identical geometry and context in
    lockstep, batching each tile's denoising across archetypes.

    Per-archetype noise streams match generate_archetype; outputs differ
    from sequential runs only by batched-kernel rounding.
    """
    from .diffusion import inpaint_batch

    if not specs:
        return []
    first = specs[0]
    for spec in specs[1:]:
        if (
            spec.target_height != first.target_height
            or spec.target_width != first.target_width
            or spec.tile_size != first.tile_size
            or spec.overlap != first.overlap
            or spec.context != first.context
        ):
            raise PreconditionError("batched archetypes must share geometry and context")
    bg = reg.vocab.background_for(first.context)
    size, model = reg.route(bg)
    if size != first.tile_size:
        raise PreconditionError(
            f"background for {first.context!r} routed to size {size}, spec wants {first.tile_size}"
        )
    ys = tile_origins(first.target_height, first.tile_size, first.overlap)
    xs = tile_origins(first.target_width, first.tile_size, first.overlap)
    n_tiles = len(ys) * len(xs)
    seeds = [_tile_seeds(spec.rng_seed, n_tiles) for spec in specs]
    canvases = [np.zeros((first.target_height, first.target_width)) for _ in specs]
    generated = np.zeros_like(canvases[0], dtype=bool)

    k = 0
    for y0 in ys:
        for x0 in xs:
            window = (slice(y0, y0 + first.tile_size), slice(x0, x0 + first.tile_size))
            # tile 0 has an all-zero mask, which reproduces plain sampling
            mask = generated[window].astype(np.float64)
            jobs = [
                (canvases[i][window], mask, bg, seeds[i][k]) for i in range(len(specs))
            ]
            tiles = inpaint_batch(model, jobs, s, use_ema=use_ema)
            for i, tile in enumerate(tiles):
                canvases[i][window] = tile
            generated[window] = True
            k += 1
    return canvases


def _tile_seeds(rng_seed: int, n: int) -> list[int]:
    # tile 0 reuses the spec seed so a 1x1 tiling equals plain sampling
    extra = np.random.SeedSequence(rng_seed).generate_state(max(n - 1, 1))
    return [rng_seed] + [int(v) for v in extra[: n - 1]]


def seam_statistics(
    img: np.ndarray, target_width: int, tile: int, overlap: int
) -> tuple[float, float]:
    """Mean |horizontal gradient| over seam columns vs all other columns.

    Seam columns are where freshly generated content starts right of each
    vertical tile boundary."""
    xs = tile_origins(target_width, tile, overlap)
    seams = set()
    prev_extent = xs[0] + tile
    for x0 in xs[1:]:
        # fresh content of this tile column starts where coverage ended
        seams.add(prev_extent)
        prev_extent = x0 + tile
    grad = np.abs(np.diff(img, axis=1))
    seam_cols = [c - 1 for c in seams if 1 <= c <= grad.shape[1]]
    interior = [c for c in range(grad.shape[1]) if c not in seam_cols]
    if not seam_cols:
        raise PreconditionError("no seam columns for this geometry")
    return float(grad[:, seam_cols].mean()), float(grad[:, interior].mean())


def plan_placements(
    archetype: np.ndarray,
    requests: list[tuple[ClassLabel, int]],
    rng_seed: int,
    mask_table: dict[str, tuple[int, int]] | None = None,
    border_margin: int = 8,
) -> list[DefectPlacement]:
    """Uniform non-overlapping defect sites with a border margin."""
    mask_table = mask_table or DEFAULT_MASK_TABLE
    h, w = archetype.shape
    total_area = sum(
        np.prod(mask_table.get(c.name, FALLBACK_MASK_DIMS)) * count
        for c, count in requests
    )
    if total_area > PLACEMENT_AREA_BUDGET * h * w:
        raise PreconditionError(
            f"requested mask area {total_area} exceeds {PLACEMENT_AREA_BUDGET:.0%} of image"
        )
    rng = np.random.default_rng(rng_seed)
    placements: list[DefectPlacement] = []
    for c, count in requests:
        mh, mw = mask_table.get(c.name, FALLBACK_MASK_DIMS)
        for i in range(count):
            placed = False
            for _ in range(PLACEMENT_RETRIES):
                x = int(rng.integers(border_margin, w - mw - border_margin + 1))
                y = int(rng.integers(border_margin, h - mh - border_margin + 1))
                if any(
                    x < p.site[0] + p.mask_shape[1]
                    and p.site[0] < x + mw
                    and y < p.site[1] + p.mask_shape[0]
                    and p.site[1] < y + mh
                    for p in placements
                ):
                    continue
                placements.append(DefectPlacement(label=c, site=(x, y), mask_shape=(mh, mw)))
                placed = True
                break
            if not placed:
                raise PreconditionError(
                    f"could not place request ({c.name}, #{i + 1}) without overlap"
                )
    return placements


def inject_defects(
    reg: ModelRegistry,
    archetype: np.ndarray,
    plan: list[DefectPlacement],
    s: NoiseSchedule,
    rng_seed: int,
    use_ema: bool = True,
) -> SyntheticImage:
    """Inpaint each planned defect into a routed window centered on its
    site; pixels outside all mask rectangles stay bit-exact."""
    h, w = archetype.shape
    out = archetype.copy()
    annotations: list[DefectAnnotation] = []
    seeds = np.random.SeedSequence(rng_seed).generate_state(max(len(plan), 1))
    for placement, seed in zip(plan, seeds):
        size, model = reg.route(placement.label)
        x, y = placement.site
        mh, mw = placement.mask_shape
        if x + mw > w or y + mh > h:
            raise PreconditionError(f"mask at {placement.site} exceeds canvas")
        # routed window centered on the mask, clamped to the canvas
        cx, cy = x + mw // 2, y + mh // 2
        wx = int(np.clip(cx - size // 2, 0, w - size))
        wy = int(np.clip(cy - size // 2, 0, h - size))
        window = (slice(wy, wy + size), slice(wx, wx + size))
        mask = np.ones((size, size))
        mask[y - wy : y - wy + mh, x - wx : x - wx + mw] = 0.0
        patched = inpaint(
            model, out[window], mask, placement.label, s, int(seed), use_ema=use_ema
        )
        out[y : y + mh, x : x + mw] = patched[y - wy : y - wy + mh, x - wx : x - wx + mw]
        annotations.append(
            DefectAnnotation(
                label=placement.label,
                bbox=((x + mw / 2) / w, (y + mh / 2) / h, mw / w, mh / h),
            )
        )
    return SyntheticImage(
        image=out,
        annotations=annotations,
        provenance={
            "rng_seed": rng_seed,
            "placement_seeds": [int(v) for v in seeds[: len(plan)]],
            "plan": [
                (p.label.id, p.site, p.mask_shape) for p in plan
            ],
            "model_versions": reg.model_versions(),
        },
    )


def transfer_defect(
    reg: ModelRegistry,
    archetype: np.ndarray,
    archetype_context: str,
    defect_class: ClassLabel,
    plan: list[DefectPlacement],
    s: NoiseSchedule,
    rng_seed: int,
    use_ema: bool = True,
) -> SyntheticImage:
    """Inject a defect class from one process context into an archetype of
    another; mechanics are identical to plain injection."""
    if defect_class not in list(reg.vocab):
        raise PreconditionError(
            f"class ({defect_class.name!r}, {defect_class.context!r}) not in model vocabulary"
        )
    plan = [
        DefectPlacement(label=defect_class, site=p.site, mask_shape=p.mask_shape)
        for p in plan
    ]
    result = inject_defects(reg, archetype, plan, s, rng_seed, use_ema=use_ema)
    result.provenance["defect_context"] = defect_class.context
    result.provenance["archetype_context"] = archetype_context
    return result
