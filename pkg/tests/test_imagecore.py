import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dru.imagecore import (
    LAYOUTS, DimensionError, LumaImage, SceneSpec, load_image, reassemble, render_scene,
    resize, save_png, split_quartiles, synth_corpus, to_luma, write_corpus,
)


def luma_images(min_side=2, max_side=12):
    shapes = st.tuples(st.integers(min_side, max_side), st.integers(min_side, max_side))
    return shapes.flatmap(
        lambda s: arrays(np.float64, s, elements=st.floats(0, 255, allow_nan=False))
    ).map(LumaImage)


@pytest.mark.parametrize("rgb, expected", [((255, 255, 255), 255.0), ((0, 0, 0), 0.0), ((100, 100, 100), 100.0)])
def test_to_luma_reference_pixels(rgb, expected):
    img = to_luma(np.array([[rgb]], dtype=float))
    assert img.data[0, 0] == pytest.approx(expected, abs=1e-12)


def test_to_luma_bt601_weights():
    img = to_luma(np.array([[[255, 0, 0], [0, 255, 0], [0, 0, 255]]], dtype=float))
    np.testing.assert_allclose(img.data[0], [0.299 * 255, 0.587 * 255, 0.114 * 255])


def test_to_luma_rejects_zero_size():
    with pytest.raises(DimensionError):
        to_luma(np.zeros((0, 4, 3)))


def test_luma_image_validates_range():
    with pytest.raises(ValueError):
        LumaImage(np.full((2, 2), 256.0))
    with pytest.raises(ValueError):
        LumaImage(np.full((2, 2), np.nan))
    img = LumaImage(np.zeros((3, 2)))
    assert (img.width, img.height) == (2, 3)
    assert img.data.size == img.width * img.height


def test_split_4x4_offsets():
    qs = split_quartiles(LumaImage(np.arange(16, dtype=float).reshape(4, 4)))
    assert qs.offsets == ((0, 0), (2, 0), (0, 2), (2, 2))
    assert all((p.width, p.height) == (2, 2) for p in qs.patches)


def test_split_5x4_floor():
    qs = split_quartiles(LumaImage(np.zeros((4, 5))))
    assert sorted({p.width for p in qs.patches}) == [2, 3]
    assert sum(p.width * p.height for p in qs.patches) == 20


def test_split_uniform_means():
    qs = split_quartiles(LumaImage.uniform(77, 100))
    assert qs.means() == [77.0] * 4


def test_split_rejects_one_pixel_dimension():
    with pytest.raises(DimensionError):
        split_quartiles(LumaImage(np.zeros((1, 5))))


@given(luma_images())
def test_split_reassemble_roundtrip(img):
    qs = split_quartiles(img)
    np.testing.assert_array_equal(reassemble(qs).data, img.data)
    for a, b in zip(qs.patches, qs.patches[1:]):
        assert abs(a.width - b.width) <= 1 and abs(a.height - b.height) <= 1


@given(luma_images(), st.floats(0, 100))
def test_brightening_map_raises_patch_means(img, c):
    f = np.clip(img.data + c, 0, 255)  # monotone with f(v) >= v
    for p, q in zip(split_quartiles(img).patches, split_quartiles(LumaImage(f)).patches):
        assert q.mean() >= p.mean() - 1e-9


def test_render_extremes_seed7():
    dark = render_scene(SceneSpec(7, 0.0, "gradient-sky", (16, 16)))
    bright = render_scene(SceneSpec(7, 1.0, "gradient-sky", (16, 16)))
    assert dark.mean() < 30
    assert bright.mean() > 200


@pytest.mark.parametrize("layout", LAYOUTS)
def test_render_extremes_all_layouts(layout):
    for seed in range(20):
        assert render_scene(SceneSpec(seed, 0.0, layout)).mean() < 30
        assert render_scene(SceneSpec(seed, 1.0, layout)).mean() > 200


def test_render_is_deterministic():
    spec = SceneSpec(11, 0.4, "shapes", (20, 12))
    a, b = render_scene(spec), render_scene(spec)
    assert a.tobytes() == b.tobytes()
    assert (a.width, a.height) == (20, 12)


@settings(max_examples=60)
@given(st.integers(0, 10_000), st.floats(0, 1), st.floats(0, 1), st.sampled_from(LAYOUTS))
def test_render_monotone_in_illumination(seed, a, b, layout):
    lo, hi = sorted((a, b))
    assert render_scene(SceneSpec(seed, lo, layout)).mean() <= render_scene(SceneSpec(seed, hi, layout)).mean()


def test_scene_spec_validation():
    with pytest.raises(ValueError):
        SceneSpec(0, 1.5)
    with pytest.raises(ValueError):
        SceneSpec(0, 0.5, "stripes")


def test_png_roundtrip_and_corpus(tmp_path):
    img = render_scene(SceneSpec(3, 0.6))
    save_png(img, tmp_path / "a.png")
    back = load_image(tmp_path / "a.png")
    np.testing.assert_allclose(back.data, np.rint(img.data), atol=1e-9)

    corpus = synth_corpus(5, seed=2)
    truth = write_corpus(corpus, tmp_path / "c")
    lines = truth.read_text().splitlines()
    assert len(lines) == 5 and '"illumination"' in lines[0]
    assert sorted(p.name for p in (tmp_path / "c").glob("*.png")) == [f"{i}.png" for i in corpus.ids]


def test_synth_corpus_reproducible():
    a, b = synth_corpus(8, seed=4), synth_corpus(8, seed=4)
    assert [x.tobytes() for x in a.images] == [x.tobytes() for x in b.images]
    c = synth_corpus(3, seed=0, levels=[0.1, 0.5, 0.9])
    np.testing.assert_array_equal(c.illumination, [0.1, 0.5, 0.9])


def test_resize_box_keeps_mean():
    img = render_scene(SceneSpec(1, 0.5, size=(32, 32)))
    small = resize(img, 16, 16)
    assert (small.width, small.height) == (16, 16)
    assert small.mean() == pytest.approx(img.mean(), abs=0.5)
