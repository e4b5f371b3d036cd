import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import tiny_denoiser
from semsynth import diffusion, synthesis
from semsynth.errors import PreconditionError
from semsynth.labels import ClassLabel, ClassVocabulary

VOCAB = ClassVocabulary(
    [
        ClassLabel(0, "background", "c", is_background=True),
        ClassLabel(1, "gap-like", "c"),
        ClassLabel(2, "bridge-like", "other"),
    ]
)


def registry(num_classes=3, size=8):
    m = tiny_denoiser(image_size=size, num_classes=num_classes)
    return synthesis.ModelRegistry(
        models={size: m}, routing={c.id: size for c in VOCAB}, vocab=VOCAB
    )


def test_tile_origins_exact_cover():
    assert synthesis.tile_origins(104, 32, 8) == [0, 24, 48, 72]
    assert synthesis.tile_origins(32, 32, 8) == [0]
    assert synthesis.tile_origins(40, 32, 8) == [0, 8]


@settings(max_examples=40, deadline=None)
@given(
    target=st.integers(16, 300),
    tile=st.integers(8, 64),
    overlap=st.integers(1, 63),
)
def test_tile_origins_properties(target, tile, overlap):
    if overlap >= tile or target < tile:
        return
    origins = synthesis.tile_origins(target, tile, overlap)
    assert origins[0] == 0
    assert origins[-1] + tile == target or (len(origins) == 1 and tile <= target)
    assert all(b > a for a, b in zip(origins, origins[1:]))
    assert all(b - a <= tile - overlap for a, b in zip(origins, origins[1:]))
    # full coverage
    covered = np.zeros(target, dtype=bool)
    for o in origins:
        covered[o : o + tile] = True
    assert covered.all()


def test_archetype_spec_validation():
    with pytest.raises(PreconditionError):
        synthesis.ArchetypeSpec(64, 64, 32, 0, "c")
    with pytest.raises(PreconditionError):
        synthesis.ArchetypeSpec(64, 64, 32, 32, "c")
    with pytest.raises(PreconditionError):
        synthesis.ArchetypeSpec(16, 64, 32, 8, "c")


def test_single_tile_archetype_equals_sampling(short_schedule):
    reg = registry()
    spec = synthesis.ArchetypeSpec(8, 8, 8, 4, "c", rng_seed=11)
    img = synthesis.generate_archetype(reg, spec, short_schedule)
    bg = VOCAB.background_for("c")
    plain = diffusion.sample(reg.models[8], bg, short_schedule, 11)
    assert np.array_equal(img, plain)


def test_archetype_deterministic(short_schedule):
    reg = registry()
    spec = synthesis.ArchetypeSpec(14, 14, 8, 4, "c", rng_seed=3)
    a = synthesis.generate_archetype(reg, spec, short_schedule)
    b = synthesis.generate_archetype(reg, spec, short_schedule)
    assert np.array_equal(a, b)
    assert a.shape == (14, 14)


def test_archetype_batch_close_to_sequential(short_schedule):
    reg = registry()
    specs = [
        synthesis.ArchetypeSpec(14, 14, 8, 4, "c", rng_seed=3),
        synthesis.ArchetypeSpec(14, 14, 8, 4, "c", rng_seed=4),
    ]
    batched = synthesis.generate_archetype_batch(reg, specs, short_schedule)
    for spec, got in zip(specs, batched):
        want = synthesis.generate_archetype(reg, spec, short_schedule)
        assert np.allclose(got, want, atol=1e-4)
    assert synthesis.generate_archetype_batch(reg, [], short_schedule) == []


def test_archetype_batch_rejects_mixed_geometry(short_schedule):
    reg = registry()
    specs = [
        synthesis.ArchetypeSpec(14, 14, 8, 4, "c"),
        synthesis.ArchetypeSpec(16, 14, 8, 4, "c"),
    ]
    with pytest.raises(PreconditionError):
        synthesis.generate_archetype_batch(reg, specs, short_schedule)


def test_registry_routing_error():
    reg = registry()
    reg.routing.pop(1)
    with pytest.raises(PreconditionError):
        reg.route(VOCAB.by_id(1))


def test_seam_statistics_flags_discontinuity():
    # with origins [0, 8] and tile 32, fresh content of the second tile
    # starts at column 32; place the step there
    img = np.zeros((40, 40))
    img[:, 32:] = 1.0
    xs = synthesis.tile_origins(40, 32, 24)
    assert xs == [0, 8]
    seam, interior = synthesis.seam_statistics(img, 40, 32, 24)
    assert seam > 10 * max(interior, 1e-9)


def test_seam_statistics_smooth_image():
    img = np.tile(np.linspace(0, 1, 40), (40, 1))
    seam, interior = synthesis.seam_statistics(img, 40, 32, 24)
    assert seam <= 2 * interior + 1e-9


def test_seam_statistics_requires_seam():
    with pytest.raises(PreconditionError):
        synthesis.seam_statistics(np.zeros((8, 8)), 8, 8, 4)


def test_plan_placements_properties():
    arch = np.zeros((64, 64))
    reqs = [(VOCAB.by_id(1), 3)]
    plan = synthesis.plan_placements(arch, reqs, 0)
    assert len(plan) == 3
    for p in plan:
        x, y = p.site
        mh, mw = p.mask_shape
        assert 8 <= x and x + mw <= 64 - 8
        assert 8 <= y and y + mh <= 64 - 8
    for i, p in enumerate(plan):
        for q in plan[i + 1 :]:
            disjoint = (
                p.site[0] + p.mask_shape[1] <= q.site[0]
                or q.site[0] + q.mask_shape[1] <= p.site[0]
                or p.site[1] + p.mask_shape[0] <= q.site[1]
                or q.site[1] + q.mask_shape[0] <= p.site[1]
            )
            assert disjoint
    assert synthesis.plan_placements(arch, reqs, 0) == plan


def test_plan_placements_area_budget():
    arch = np.zeros((32, 32))
    with pytest.raises(PreconditionError):
        synthesis.plan_placements(arch, [(VOCAB.by_id(1), 50)], 0)


def test_inject_defects_outside_masks_untouched(short_schedule):
    reg = registry()
    rng = np.random.default_rng(0)
    arch = rng.uniform(-1, 1, (24, 24))
    plan = [
        synthesis.DefectPlacement(label=VOCAB.by_id(1), site=(4, 5), mask_shape=(3, 4)),
        synthesis.DefectPlacement(label=VOCAB.by_id(1), site=(15, 12), mask_shape=(4, 3)),
    ]
    result = synthesis.inject_defects(reg, arch, plan, short_schedule, 2)
    touched = np.zeros((24, 24), dtype=bool)
    for p in plan:
        x, y = p.site
        mh, mw = p.mask_shape
        touched[y : y + mh, x : x + mw] = True
    assert np.array_equal(result.image[~touched], arch[~touched])
    assert len(result.annotations) == 2
    h, w = arch.shape
    for ann, p in zip(result.annotations, plan):
        x, y = p.site
        mh, mw = p.mask_shape
        assert ann.bbox == ((x + mw / 2) / w, (y + mh / 2) / h, mw / w, mh / h)
    for key in ("rng_seed", "placement_seeds", "plan", "model_versions"):
        assert key in result.provenance


def test_inject_deterministic(short_schedule):
    reg = registry()
    arch = np.zeros((24, 24))
    plan = [synthesis.DefectPlacement(label=VOCAB.by_id(1), site=(8, 8), mask_shape=(4, 4))]
    a = synthesis.inject_defects(reg, arch, plan, short_schedule, 5)
    b = synthesis.inject_defects(reg, arch, plan, short_schedule, 5)
    assert np.array_equal(a.image, b.image)


def test_transfer_defect_cross_context(short_schedule):
    reg = registry()
    arch = np.zeros((24, 24))
    foreign = VOCAB.by_id(2)  # bridge-like from the other context
    plan = [synthesis.DefectPlacement(label=foreign, site=(8, 8), mask_shape=(4, 4))]
    result = synthesis.transfer_defect(reg, arch, "c", foreign, plan, short_schedule, 0)
    assert result.provenance["defect_context"] == "other"
    assert result.provenance["archetype_context"] == "c"
    assert result.annotations[0].label is foreign


def test_transfer_defect_unknown_class(short_schedule):
    reg = registry()
    stranger = ClassLabel(7, "missing-hole-like", "elsewhere")
    with pytest.raises(PreconditionError):
        synthesis.transfer_defect(reg, np.zeros((24, 24)), "c", stranger, [],
                                  short_schedule, 0)
