import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_label
from semsynth import patchset
from semsynth.errors import ParseError, PreconditionError
from semsynth.labels import ClassLabel, ClassVocabulary


def ann(cid, cx, cy, w, h, name="gap-like", context="c"):
    return patchset.DefectAnnotation(label=make_label(cid, name, context), bbox=(cx, cy, w, h))


def image_with(anns, size=128, context="c"):
    rng = np.random.default_rng(0)
    return patchset.AnnotatedImage(
        image=rng.uniform(-1, 1, (size, size)),
        annotations=anns,
        context=context,
        source_id="img-0",
    )


def test_bbox_validation():
    with pytest.raises(PreconditionError):
        ann(1, 0.5, 0.5, 0.0, 0.1)
    with pytest.raises(PreconditionError):
        ann(1, 1.5, 0.5, 0.1, 0.1)


def test_to_pixels():
    a = ann(1, 0.5, 0.25, 0.25, 0.125)
    assert a.to_pixels(64, 128) == (48.0, 12.0, 80.0, 20.0)


def test_routed_size_ladder():
    policy = patchset.PatchPolicy(size_ladder=(128, 256, 512))
    small = ann(1, 0.5, 0.5, 100 / 512, 50 / 512)
    large = ann(1, 0.5, 0.5, 120 / 512, 50 / 512)
    assert patchset.routed_size(small, 512, 512, policy) == 128
    assert patchset.routed_size(large, 512, 512, policy) == 256
    too_big = ann(1, 0.5, 0.5, 470 / 512, 50 / 512)
    with pytest.raises(PreconditionError):
        patchset.routed_size(too_big, 512, 512, policy)


def test_extract_containment_and_background():
    img = image_with([ann(1, 0.3, 0.3, 0.1, 0.1), ann(1, 0.75, 0.75, 0.1, 0.1)])
    policy = patchset.PatchPolicy(size_ladder=(32,), background_per_image=3)
    records = patchset.extract_patches(img, 32, policy)
    defects = [r for r in records if not r.label.is_background]
    bgs = [r for r in records if r.label.is_background]
    assert len(defects) == 2 and len(bgs) == 3
    boxes = [a.to_pixels(128, 128) for a in img.annotations]
    for r in defects:
        _, x0, y0 = r.origin
        assert any(
            x0 <= x1 and x2 <= x0 + 32 and y0 <= y1 and y2 <= y0 + 32
            for x1, y1, x2, y2 in boxes
        )
    for r in bgs:
        _, x0, y0 = r.origin
        for x1, y1, x2, y2 in boxes:
            assert x2 <= x0 or x0 + 32 <= x1 or y2 <= y0 or y0 + 32 <= y1


def test_extract_rejects_mixed_class_windows():
    # overlapping boxes of different classes: no window can fully contain
    # one without touching the other, so both are skipped
    img = image_with(
        [
            ann(1, 0.43, 0.5, 0.1, 0.1, name="gap-like"),
            ann(2, 0.50, 0.5, 0.1, 0.1, name="bridge-like"),
        ]
    )
    policy = patchset.PatchPolicy(size_ladder=(32,), background_per_image=0)
    records = patchset.extract_patches(img, 32, policy)
    assert records == []


def test_multiple_patches_per_annotation():
    img = image_with([ann(1, 0.5, 0.5, 0.1, 0.1)])
    policy = patchset.PatchPolicy(
        size_ladder=(32,), background_per_image=0, defect_patches_per_annotation=4
    )
    records = patchset.extract_patches(img, 32, policy)
    assert len(records) == 4
    assert len({r.origin for r in records}) == 4
    box = img.annotations[0].to_pixels(128, 128)
    for r in records:
        _, x0, y0 = r.origin
        assert x0 <= box[0] and box[2] <= x0 + 32
        assert y0 <= box[1] and box[3] <= y0 + 32


def test_patch_pixels_match_source():
    img = image_with([ann(1, 0.3, 0.3, 0.1, 0.1)])
    policy = patchset.PatchPolicy(size_ladder=(32,), background_per_image=1)
    for r in patchset.extract_patches(img, 32, policy):
        _, x0, y0 = r.origin
        assert np.array_equal(r.image, img.image[y0 : y0 + 32, x0 : x0 + 32])


def test_build_dataset_deterministic():
    imgs = [image_with([ann(1, 0.3, 0.3, 0.1, 0.1)])]
    policy = patchset.PatchPolicy(size_ladder=(32,), background_per_image=2, rng_seed=3)
    a = patchset.build_dataset(imgs, 32, policy)
    b = patchset.build_dataset(imgs, 32, policy)
    assert [r.origin for r in a.records] == [r.origin for r in b.records]


def test_build_dataset_context_guard():
    imgs = [image_with([], context="a"), image_with([], context="b")]
    policy = patchset.PatchPolicy(size_ladder=(32,))
    with pytest.raises(PreconditionError):
        patchset.build_dataset(imgs, 32, policy)
    ds = patchset.build_dataset(imgs, 32, policy, allow_multi_context=True)
    assert len(ds) == 8
    with pytest.raises(PreconditionError):
        patchset.build_dataset([], 32, policy)


def test_count_report_format():
    ds = patchset.PatchDataset(
        records=[], patch_size=32, class_counts={"gap": 1046, "linecollapse": 550}
    )
    assert ds.count_report() == "gap: 1046, linecollapse: 550"


def test_manifest_format():
    rec = patchset.PatchRecord(
        image=np.zeros((32, 32)), label=make_label(1, "gap-like"), origin=("src", 5, 9)
    )
    ds = patchset.PatchDataset(records=[rec], patch_size=32)
    assert ds.manifest() == "src 5 9 32 gap-like\n"


def test_vocabulary_for_corpus():
    imgs = [
        image_with([ann(1, 0.3, 0.3, 0.1, 0.1, name="gap-like", context="a")], context="a"),
        image_with([ann(2, 0.3, 0.3, 0.1, 0.1, name="bridge-like", context="b")], context="b"),
    ]
    vocab = patchset.vocabulary_for(imgs)
    assert vocab.background_for("a").id == 0
    assert vocab.background_for("b").id == 1
    assert {(c.name, c.context) for c in vocab} == {
        ("background", "a"), ("background", "b"),
        ("gap-like", "a"), ("bridge-like", "b"),
    }


def test_annotation_file_roundtrip(tmp_path):
    vocab = ClassVocabulary(
        [ClassLabel(0, "background", "c", is_background=True), make_label(1, "gap-like")]
    )
    anns = [ann(1, 0.5, 0.25, 0.125, 0.0625)]
    patchset.write_annotations(tmp_path / "a.txt", anns)
    loaded = patchset.read_annotations(tmp_path / "a.txt", vocab)
    assert loaded == anns


def test_annotation_parse_errors(tmp_path):
    vocab = ClassVocabulary([make_label(1, "gap-like")])
    cases = {
        "short.txt": "1 0.5 0.5 0.1\n",
        "nan.txt": "1 x 0.5 0.1 0.1\n",
        "unknown.txt": "9 0.5 0.5 0.1 0.1\n",
        "range.txt": "1 0.5 0.5 0.0 0.1\n",
    }
    for name, content in cases.items():
        (tmp_path / name).write_text(content)
        with pytest.raises(ParseError):
            patchset.read_annotations(tmp_path / name, vocab)


@settings(max_examples=25, deadline=None)
@given(
    cx=st.floats(0.15, 0.85),
    cy=st.floats(0.15, 0.85),
    seed=st.integers(0, 1000),
)
def test_containment_property(cx, cy, seed):
    img = image_with([ann(1, cx, cy, 0.1, 0.1)])
    policy = patchset.PatchPolicy(size_ladder=(32,), background_per_image=0, rng_seed=seed)
    records = patchset.extract_patches(img, 32, policy)
    x1, y1, x2, y2 = img.annotations[0].to_pixels(128, 128)
    for r in records:
        _, x0, y0 = r.origin
        assert x0 <= x1 and x2 <= x0 + 32
        assert y0 <= y1 and y2 <= y0 + 32
