import numpy as np
import pytest

from dru.ablation import ABLATION_RECIPE
from dru.imagecore import synth_corpus
from dru.qab import partition_corpus
from dru.quantizer import extract_features, train


@pytest.fixture(scope="session")
def confident_partition():
    corpus = synth_corpus(400, seed=3)
    return corpus, partition_corpus(corpus.items(), featurize=extract_features)


@pytest.fixture(scope="session")
def trained_quantizer(confident_partition):
    _, part = confident_partition
    feats = part.features
    return train([feats[i] for i in sorted(part.dark)], [feats[i] for i in sorted(part.bright)], ABLATION_RECIPE)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


SMALL = dict(h=8, w=8, hidden=3, patch=4, batch=3, sfp_factor=2)


def small_instance(seed=0):
    """Random nets and batches small enough for finite differences."""
    from dru.toygan import TinyNet

    r = np.random.default_rng(seed)
    h, w, hid, p, b = SMALL["h"], SMALL["w"], SMALL["hidden"], SMALL["patch"], SMALL["batch"]
    gen = TinyNet.init(h * w, hid, h * w, r, output="sigmoid255", image_shape=(h, w), gain=2.0)
    glob = TinyNet.init(h * w, hid, 1, r, gain=2.0)
    loc = TinyNet.init(p * p, hid, 1, r, gain=2.0)
    for net in (gen, glob, loc):
        net.set_flat(net.flat() + r.normal(0, 0.3, size=net.flat().shape))
    dark = r.uniform(0, 80, size=(b, h, w))
    bright = r.uniform(120, 255, size=(b, h, w))
    crops_d = r.integers(0, w - p + 1, size=(b, 2))
    crops_b = r.integers(0, w - p + 1, size=(b, 2))
    rp_d = r.uniform(0.2, 1.0, size=b)
    rp_b = r.uniform(0.2, 1.0, size=b)
    return {"generator": gen, "global_critic": glob, "local_critic": loc}, dict(
        dark=dark, bright=bright, dark_crops=crops_d, bright_crops=crops_b,
        rp_d=rp_d, rp_b=rp_b, patch=p, sfp_factor=SMALL["sfp_factor"])


_VERDICTS: list[tuple[str, bool, str]] = []


@pytest.fixture
def verdict(request):
    """Record one acceptance criterion's outcome; an unrecorded test counts as a failure."""
    seen = []

    def record(name: str, ok: bool, detail: str = ""):
        seen.append(name)
        _VERDICTS.append((name, bool(ok), detail))
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
        return ok

    yield record
    if not seen:
        _VERDICTS.append((request.node.name, False, "raised before reporting"))


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _VERDICTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
