import jsonschema
import numpy as np
import pytest

from dru.ablation import AblationConfig, ablate, flip_labels, format_report, validate_report
from dru.toygan import TrainConfig

TINY_GAN = TrainConfig(steps=20, batch=4, hidden=6, patch=4, image_shape=(8, 8))


def test_flip_labels_swaps_fraction():
    rng = np.random.default_rng(0)
    dark = [f"d{i}" for i in range(10)]
    bright = [f"b{i}" for i in range(20)]
    nd, nb = flip_labels(dark, bright, 0.3, rng)
    assert sorted(nd + nb) == sorted(dark + bright)
    assert sum(i.startswith("b") for i in nd) == 6
    assert sum(i.startswith("d") for i in nb) == 3
    assert flip_labels(dark, bright, 0.0, rng) == (sorted(dark), sorted(bright))


def test_zero_noise_report_validates():
    report = ablate(AblationConfig(kind="noise", seeds=(0, 1), noise_rate=0.0, pool=120, gan=TINY_GAN))
    validate_report(report)
    assert set(report["degradation"]["noisy"]["median"]) == {"dru", "vanilla"}
    assert len(report["runs"]) == 2 * 2 * 2
    assert "degradation noisy vs original" in format_report(report)


def test_data_kind_rows_per_seed():
    report = ablate(AblationConfig(kind="data", seeds=(3, 4), pool=160, gan=TINY_GAN))
    assert report["settings"] == ["confident", "uncertain", "both"]
    for setting in ("confident", "both"):
        for method in ("dru", "vanilla"):
            assert len(report["summary"][setting][method]["per_seed"]) == 2
    assert set(report["degradation"]) == {"confident", "uncertain"}


def test_schema_rejects_malformed():
    report = ablate(AblationConfig(seeds=(0,), pool=120, gan=TINY_GAN))
    report["runs"][0]["gap"] = -1.0
    with pytest.raises(jsonschema.ValidationError):
        validate_report(report)


def test_config_validation():
    with pytest.raises(ValueError):
        AblationConfig(kind="other")
    with pytest.raises(ValueError):
        AblationConfig(noise_rate=1.5)
