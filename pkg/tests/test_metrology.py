import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semsynth import fixture, metrology
from semsynth.errors import PreconditionError


def ideal_image(pitch=64.0, cd=28.0, size=(128, 256), noise=0.0, ler=0.0, lwr=0.0, seed=0):
    spec = fixture.PatternSpec(
        kind="line-space", pitch=pitch, cd=cd, ler_sigma=ler, lwr_sigma=lwr,
        noise_sigma=noise, size=size, rng_seed=seed,
    )
    img, truth = fixture.generate(spec, "ls-p16", "m")
    return img.image, truth


def test_ideal_pattern_exact():
    img, _ = ideal_image()
    rep = metrology.measure(img)
    assert abs(rep.cd_mean - 28.0) < 0.1
    assert abs(rep.pitch - 64.0) < 0.05
    assert rep.ler_sigma < 0.05
    assert rep.n_lines >= 2


def test_matches_fixture_truth():
    img, truth = ideal_image(ler=1.5, lwr=1.0, noise=0.05, seed=3)
    rep = metrology.measure(img)
    delta = metrology.compare(rep, truth)
    assert delta.fields["cd_mean"].ok
    assert delta.fields["pitch"].ok


def test_affine_invariance():
    img, _ = ideal_image(ler=1.0, lwr=0.8, noise=0.03, seed=1)
    a = metrology.measure(img)
    b = metrology.measure(0.37 * img + 5.0)
    assert np.allclose(a.cd, b.cd, atol=1e-9)
    assert abs(a.pitch - b.pitch) < 1e-9
    assert abs(a.ler_sigma - b.ler_sigma) < 1e-9


def test_translation_leaves_cd_pitch():
    img, _ = ideal_image(size=(128, 320))
    a = metrology.measure(img[:, :256])
    b = metrology.measure(img[:, 32:288])
    assert abs(a.cd_mean - b.cd_mean) < 0.05
    assert abs(a.pitch - b.pitch) < 0.05


def test_orientation_transpose():
    img, _ = ideal_image()
    a = metrology.measure(img)
    b = metrology.measure(img.T, orientation="horizontal")
    assert a.cd == b.cd
    assert a.pitch == b.pitch


def test_single_line_pitch_absent():
    img, _ = ideal_image(pitch=200.0, cd=40.0, size=(64, 200))
    rep = metrology.measure(img)
    assert rep.n_lines == 1
    assert rep.pitch is None


def test_line_scan():
    img = np.tile(np.linspace(0, 1, 8), (4, 1))
    p = metrology.line_scan(img)
    assert p.length == 8
    assert np.allclose(p.values, np.linspace(0, 1, 8))
    q = metrology.line_scan(img, axis="row-averaged")
    assert q.length == 4
    with pytest.raises(PreconditionError):
        metrology.line_scan(img, axis="diagonal")


def test_constant_image_rejected():
    with pytest.raises(PreconditionError):
        metrology.measure(np.zeros((16, 16)))


def test_compare_worked_example():
    # 30 vs 28 nm style delta: relative uses the smaller magnitude, 2/28
    a = metrology.MetrologyReport(30.0, [30.0], None, 0.1, 0.1, 1)
    b = metrology.MetrologyReport(28.0, [28.0], None, 0.1, 0.1, 1)
    d = metrology.compare(a, b)
    assert abs(d.fields["cd_mean"].relative - 2.0 / 28.0) < 1e-12
    assert d.fields["pitch"].absolute is None


def test_compare_antisymmetric():
    a = metrology.MetrologyReport(30.0, [30.0], 64.0, 0.2, 0.1, 2)
    b = metrology.MetrologyReport(28.0, [28.0], 60.0, 0.3, 0.2, 2)
    ab = metrology.compare(a, b)
    ba = metrology.compare(b, a)
    for name in ("cd_mean", "pitch", "ler_sigma"):
        assert abs(ab.fields[name].relative + ba.fields[name].relative) < 1e-12


def test_compare_tolerance_gate():
    a = metrology.MetrologyReport(30.0, [30.0], 64.0, 0.1, 0.1, 2)
    b = metrology.MetrologyReport(28.0, [28.0], 64.0, 0.1, 0.1, 2)
    assert not metrology.compare(a, b, {"cd_mean": 0.05}).ok
    assert metrology.compare(a, b, {"cd_mean": 0.10}).ok


@settings(max_examples=10, deadline=None)
@given(
    pitch=st.floats(40.0, 80.0),
    duty=st.floats(0.3, 0.6),
    seed=st.integers(0, 100),
)
def test_noiseless_recovery_property(pitch, duty, seed):
    cd = pitch * duty
    img, _ = ideal_image(pitch=pitch, cd=cd, seed=seed)
    rep = metrology.measure(img)
    assert abs(rep.cd_mean - cd) / cd < 0.02
    assert abs(rep.pitch - pitch) / pitch < 0.02
