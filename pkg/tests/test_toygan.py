import csv

import numpy as np
import pytest

from dru.gradcheck import central_difference, relative_error
from dru.imagecore import DimensionError, LumaImage, synth_corpus
from dru.toygan import (
    GanState, TinyNet, TrainConfig, TrainingDivergedError, enhance, enhance_stack, init_state,
    train_dru_gan, write_trace_csv,
)

SMALL = TrainConfig(steps=30, batch=4, hidden=6, patch=4, image_shape=(8, 8), rp_source="unweighted")


@pytest.fixture(scope="module")
def corpora():
    dark = synth_corpus(24, seed=1, illumination=(0.0, 0.15), size=(8, 8))
    bright = synth_corpus(24, seed=2, illumination=(0.7, 1.0), size=(8, 8))
    return dark, bright


def test_zero_generator_outputs_midgray():
    gen = TinyNet.zeros(64, 5, 64, output="sigmoid255", image_shape=(8, 8))
    out = enhance(gen, LumaImage.uniform(10, 8))
    assert out.data.shape == (8, 8)
    assert np.all(out.data == 127.5)


def test_enhance_rejects_wrong_shape():
    gen = TinyNet.zeros(64, 5, 64, output="sigmoid255", image_shape=(8, 8))
    with pytest.raises(DimensionError):
        enhance(gen, LumaImage.uniform(10, 16))


@pytest.mark.parametrize("output", ["linear", "sigmoid255"])
def test_tinynet_gradients_fd(rng, output):
    worst = 0.0
    for _ in range(20):
        net = TinyNet.init(7, 4, 3, rng, output=output, gain=2.0)
        x = rng.normal(size=(5, 7))
        dout = rng.normal(size=(5, 3))
        out, cache = net.forward(x)
        grads, dx = net.backward(cache, dout)
        base = net.flat()

        def f(v):
            net.set_flat(v)
            return float((net(x) * dout).sum())

        numeric = central_difference(f, base.copy())
        net.set_flat(base)
        analytic = np.concatenate([grads[k].ravel() for k in ("w1", "b1", "w2", "b2")])
        worst = max(worst, relative_error(analytic, numeric))
        worst = max(worst, relative_error(dx, central_difference(lambda z: float((net(z) * dout).sum()), x.copy())))
    assert worst < 1e-4


def test_fixed_unit_rp_is_bit_identical_to_unweighted(corpora):
    dark, bright = corpora
    base = train_dru_gan(dark.images, bright.images, cfg=SMALL)
    unit = train_dru_gan(dark.images, bright.images, cfg=TrainConfig(**{**SMALL.__dict__, "rp_source": "fixed"}))
    assert base.trace == unit.trace
    assert base.generator.flat().tobytes() == unit.generator.flat().tobytes()


def test_half_rp_quarter_generator_update(corpora):
    dark, bright = corpora
    kw = {**SMALL.__dict__, "steps": 1, "terms": ("l_g_global",), "rp_source": "fixed"}
    start = init_state(TrainConfig(**kw), np.random.default_rng(kw["seed"])).generator.flat()
    norms = {}
    for rp in [(1.0, 1.0), (0.5, 0.5)]:
        res = train_dru_gan(dark.images, bright.images, cfg=TrainConfig(**{**kw, "rp_fixed": rp}))
        norms[rp] = np.linalg.norm(res.generator.flat() - start)
    assert norms[1.0, 1.0] > 0
    assert abs(norms[0.5, 0.5] / norms[1.0, 1.0] - 0.25) < 1e-9


def test_training_is_seed_deterministic(corpora):
    dark, bright = corpora
    a = train_dru_gan(dark.images, bright.images, cfg=SMALL)
    b = train_dru_gan(dark.images, bright.images, cfg=SMALL)
    c = train_dru_gan(dark.images, bright.images, cfg=TrainConfig(**{**SMALL.__dict__, "seed": 7}))
    assert a.trace == b.trace
    assert a.trace != c.trace


def test_outputs_stay_in_range_and_trace_complete(corpora):
    dark, bright = corpora
    res = train_dru_gan(dark.images, bright.images, cfg=TrainConfig(**{**SMALL.__dict__, "lr": 0.2}))
    assert len(res.trace) == SMALL.steps
    assert all(set(r) == {"step", "l_d_global", "l_d_local", "l_g_global", "l_g_local",
                          "l_sfp_global", "l_sfp_local"} for r in res.trace)
    out = enhance_stack(res.generator, dark.images)
    assert out.min() >= 0 and out.max() <= 255


def test_oracle_label_rp(corpora):
    dark, bright = corpora
    cfg = TrainConfig(**{**SMALL.__dict__, "rp_source": "oracle-labels", "steps": 3})
    with pytest.raises(ValueError):
        train_dru_gan(dark.images, bright.images, cfg=cfg)
    res = train_dru_gan(dark.images, bright.images, cfg=cfg,
                        dark_illumination=dark.illumination, bright_illumination=bright.illumination)
    assert len(res.trace) == 3


def test_divergence_reports_step(corpora):
    dark, bright = corpora
    cfg = TrainConfig(**{**SMALL.__dict__, "lr": 1e200, "steps": 10})
    with np.errstate(all="ignore"), pytest.raises(TrainingDivergedError) as info:
        train_dru_gan(dark.images, bright.images, cfg=cfg)
    assert 1 <= info.value.step <= 10


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(patch=20)
    with pytest.raises(ValueError):
        TrainConfig(steps=0)
    with pytest.raises(ValueError):
        TrainConfig(rp_source="magic")
    with pytest.raises(ValueError):
        TrainConfig(terms=("l_bogus",))


def test_checkpoint_and_trace_roundtrip(tmp_path, corpora):
    dark, bright = corpora
    res = train_dru_gan(dark.images, bright.images, cfg=TrainConfig(**{**SMALL.__dict__, "steps": 5}))
    res.state.save(tmp_path / "ckpt.json")
    back = GanState.load(tmp_path / "ckpt.json")
    x = np.stack([im.data for im in dark.images])
    assert enhance_stack(back.generator, x).tobytes() == enhance_stack(res.generator, x).tobytes()
    write_trace_csv(res.trace, tmp_path / "trace.csv")
    with open(tmp_path / "trace.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5
    assert float(rows[2]["l_sfp_global"]) == res.trace[2]["l_sfp_global"]
