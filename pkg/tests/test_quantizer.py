import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dru.gradcheck import central_difference, relative_error
from dru.imagecore import LumaImage, SceneSpec, render_scene, synth_corpus
from dru.quantizer import (
    N_FEATURES, DivergenceError, Recipe, RpPair, SoftmaxQuantizer, TrainingError,
    cross_entropy, extract_features, quantify_rp, refine_uncertain, softmax, train,
)


def test_feature_layout_uniform_images():
    f0 = extract_features(LumaImage.uniform(0, 8))
    assert f0.shape == (N_FEATURES,)
    assert f0[0] == 1.0 and f0[1:16].sum() == 0.0 and f0[20] == 0.0

    f255 = extract_features(LumaImage.uniform(255, 8))
    assert f255[15] == 1.0 and f255[20] == 1.0

    f100 = extract_features(LumaImage.uniform(100, 8))
    np.testing.assert_allclose(f100[16:20], 100 / 255)


def test_feature_invariants_on_scenes():
    for img in synth_corpus(30, seed=8).images:
        f = extract_features(img)
        assert abs(f[:16].sum() - 1.0) <= 1e-9
        assert np.all(np.isfinite(f)) and f.min() >= 0 and f.max() <= 1


@pytest.mark.parametrize("logits, expected", [((0.0, 0.0), (0.5, 0.5)), ((math.log(3), 0.0), (0.75, 0.25))])
def test_rp_from_logits(logits, expected):
    rp = RpPair.from_logits(np.array(logits))
    assert (rp.rp_d, rp.rp_b) == pytest.approx(expected, abs=1e-12)


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-100, 100))
def test_softmax_simplex_and_shift(a, b, c):
    p = softmax(np.array([a, b]))
    assert p.min() >= 0 and abs(p.sum() - 1) <= 1e-12
    np.testing.assert_allclose(softmax(np.array([a + c, b + c])), p, atol=1e-9)


def _separable(seed, n):
    dark = synth_corpus(n, seed=seed, illumination=(0.0, 0.15)).images
    bright = synth_corpus(n, seed=seed + 1, illumination=(0.93, 1.0)).images
    fd = np.array([extract_features(i) for i in dark])
    fb = np.array([extract_features(i) for i in bright])
    return fd, fb


def test_separable_features_full_accuracy():
    fd, fb = _separable(100, 150)
    assert fd[:, 20].max() < 0.2 and fb[:, 20].min() > 0.8
    q = train(fd[:100], fb[:100], Recipe(epochs=80, lr=1e-3, momentum=0.9, batch=64, seed=1))
    pred_d = q.predict(fd[100:])
    pred_b = q.predict(fb[100:])
    assert np.all(pred_d == 0) and np.all(pred_b == 1)


def test_identical_classes_give_even_rp():
    fd, _ = _separable(7, 60)
    q = train(fd, fd, Recipe(seed=3))
    for f in fd[:10]:
        assert abs(quantify_rp(q, f).rp_d - 0.5) < 0.1
    acc = np.mean(q.predict(np.vstack([fd, fd])) == np.r_[np.zeros(60), np.ones(60)])
    assert abs(acc - 0.5) <= 0.1 + 1e-12


def test_first_update_matches_hand_step_and_lowers_loss():
    xd = extract_features(render_scene(SceneSpec(1, 0.1)))
    xb = extract_features(render_scene(SceneSpec(2, 0.9)))
    lr = 0.5
    q = train([xd], [xb], Recipe(epochs=1, lr=lr, momentum=0.9, batch=64, seed=0))
    # zero weights: p = (0.5, 0.5) for both samples
    g_row0 = 0.5 * (-0.5 * xd + 0.5 * xb)
    expected_w = -lr * np.vstack([g_row0, -g_row0])
    np.testing.assert_allclose(q.weights, expected_w, atol=1e-15)
    np.testing.assert_allclose(q.bias, [0.0, 0.0], atol=1e-15)
    x = np.vstack([xd, xb])
    y = np.array([0, 1])
    before = cross_entropy(np.zeros((2, N_FEATURES)), np.zeros(2), x, y)[0]
    assert before == pytest.approx(math.log(2))
    assert q.loss_trace[0] < before


def test_cross_entropy_gradient_fd(rng):
    x = rng.uniform(0, 1, size=(12, N_FEATURES))
    y = rng.integers(0, 2, size=12)
    for _ in range(20):
        w = rng.normal(0, 2, size=(2, N_FEATURES))
        b = rng.normal(0, 1, size=2)
        _, gw, gb = cross_entropy(w, b, x, y)
        nw = central_difference(lambda ww: cross_entropy(ww, b, x, y)[0], w)
        nb = central_difference(lambda bb: cross_entropy(w, bb, x, y)[0], b)
        assert relative_error(gw, nw) < 1e-4
        assert relative_error(gb, nb) < 1e-4


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_errors():
    fd, _ = _separable(3, 5)
    with pytest.raises(TrainingError):
        train(fd, [])
    with pytest.raises(DivergenceError) as info:
        train(fd * 1e300, fd[::-1] * 1e300, Recipe(epochs=3, lr=1e10))
    assert info.value.epoch == 1


def test_training_is_deterministic():
    fd, fb = _separable(11, 40)
    a = train(fd, fb, Recipe(epochs=5, seed=9))
    b = train(fd, fb, Recipe(epochs=5, seed=9))
    assert a.weights.tobytes() == b.weights.tobytes() and a.bias.tobytes() == b.bias.tobytes()


def test_serialization_roundtrip(tmp_path, trained_quantizer):
    path = tmp_path / "q.json"
    trained_quantizer.save(path)
    back = SoftmaxQuantizer.load(path)
    feats = np.array([extract_features(i) for i in synth_corpus(20, seed=1).images])
    assert back.predict_proba(feats).tobytes() == trained_quantizer.predict_proba(feats).tobytes()
    assert back.train_meta["epochs"] == 80


def test_trained_quantizer_dark_query(trained_quantizer):
    assert quantify_rp(trained_quantizer, LumaImage.uniform(10, 16)).rp_d > 0.95


def test_rp_monotone_in_illumination(trained_quantizer):
    levels = np.linspace(0, 1, 21)
    avg = [np.mean([quantify_rp(trained_quantizer, render_scene(SceneSpec(s, t, "shapes"))).rp_b
                    for s in range(50)]) for t in levels]
    ordered = np.mean(np.diff(avg) >= 0)
    assert ordered >= 0.95


def test_refine_empty_and_review():
    q = SoftmaxQuantizer.zeros()
    out = refine_uncertain(q, {})
    assert not out.dark and not out.bright and not out.review
    out = refine_uncertain(q, {"x": LumaImage.uniform(100, 4)}, 0.65)
    assert out.review == ["x"]
    with pytest.raises(ValueError):
        refine_uncertain(q, {}, 0.4)


def test_refine_matches_threshold_oracle(trained_quantizer):
    corpus = synth_corpus(100, seed=21, illumination=(0.25, 0.6))
    uncertain = dict(corpus.items())
    out = refine_uncertain(trained_quantizer, uncertain, 0.65)
    for id_, img in uncertain.items():
        p = softmax(trained_quantizer.weights @ extract_features(img) + trained_quantizer.bias)
        if p[0] >= 0.65:
            assert id_ in out.dark
        elif p[1] >= 0.65:
            assert id_ in out.bright
        else:
            assert id_ in out.review
    assert len(out.dark) + len(out.bright) + len(out.review) == 100
    assert out.review and (out.dark or out.bright)


@settings(max_examples=200)
@given(st.integers(0, 2**31 - 1))
def test_simplex_on_random_queries(seed):
    r = np.random.default_rng(seed)
    q = SoftmaxQuantizer(r.normal(0, 5, size=(2, N_FEATURES)), r.normal(0, 5, size=2))
    rp = quantify_rp(q, LumaImage(r.uniform(0, 255, size=(6, 6))))
    assert rp.rp_d >= 0 and rp.rp_b >= 0 and abs(rp.rp_d + rp.rp_b - 1) <= 1e-9
