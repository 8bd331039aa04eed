"""Softmax dark/bright classifier that doubles as the relativistic-probability network.

The same two-logit linear model plays both roles: trained on confident dark
and bright images it routes uncertain images, and its softmax output gives
each image its ``(rp_d, rp_b)`` pair.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .imagecore import LumaImage, split_quartiles

N_BINS = 16
N_FEATURES = N_BINS + 4 + 1
FEATURE_SPEC = {
    "name": "luma-hist16-quartiles-mean",
    "histogram_bins": N_BINS,
    "histogram_range": [0.0, 256.0],
    "quartile_means": 4,
    "global_mean": 1,
    "scale": 255.0,
    "dim": N_FEATURES,
}
DARK, BRIGHT = 0, 1


class TrainingError(RuntimeError):
    pass


class DivergenceError(TrainingError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite training loss {loss!r} at epoch {epoch}")
        self.epoch = epoch


def extract_features(img: LumaImage) -> np.ndarray:
    """Normalized 16-bin histogram, 4 quartile means and the global mean, all in [0, 1]."""
    data = img.data
    bins = np.minimum((data // 16.0).astype(np.int64), N_BINS - 1).ravel()
    hist = np.bincount(bins, minlength=N_BINS) / bins.size
    quart = [p.data.mean() / 255.0 for p in split_quartiles(img).patches]
    return np.concatenate([hist, quart, [data.mean() / 255.0]])


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class RpPair:
    rp_d: float
    rp_b: float

    @classmethod
    def from_logits(cls, logits) -> "RpPair":
        p = softmax(np.asarray(logits, dtype=np.float64))
        # Take rp_b as the complement so the pair sums to one exactly.
        return cls(float(p[DARK]), float(1.0 - p[DARK]))


@dataclass(frozen=True)
class Recipe:
    epochs: int = 80
    lr: float = 1e-3
    momentum: float = 0.9
    batch: int = 64
    seed: int = 1


def cross_entropy(weights: np.ndarray, bias: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy of a softmax linear model and its gradient.

    Returns ``(loss, grad_weights, grad_bias)``.
    """
    logits = x @ weights.T + bias
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    n = x.shape[0]
    loss = float(np.mean(log_norm - z[np.arange(n), y]))
    delta = softmax(logits)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    return loss, delta.T @ x, delta.sum(axis=0)


@dataclass
class SoftmaxQuantizer:
    weights: np.ndarray
    bias: np.ndarray
    feature_spec: dict = field(default_factory=lambda: dict(FEATURE_SPEC))
    train_meta: dict = field(default_factory=dict)
    loss_trace: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(2, N_FEATURES)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(2)
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("quantizer parameters must be finite")

    @classmethod
    def zeros(cls) -> "SoftmaxQuantizer":
        return cls(np.zeros((2, N_FEATURES)), np.zeros(2))

    def logits(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.weights.T + self.bias

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        return softmax(self.logits(features))

    def predict(self, features: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(features), axis=-1)

    def to_dict(self) -> dict:
        return {
            "feature_spec": self.feature_spec,
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "train_meta": self.train_meta,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SoftmaxQuantizer":
        spec = dict(d["feature_spec"])
        if spec.get("dim") != N_FEATURES or spec.get("name") != FEATURE_SPEC["name"]:
            raise ValueError(f"unsupported feature spec {spec}")
        return cls(np.array(d["weights"]), np.array(d["bias"]), spec, dict(d.get("train_meta", {})))

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "SoftmaxQuantizer":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def train(dark: Sequence[np.ndarray], bright: Sequence[np.ndarray], recipe: Recipe = Recipe()) -> SoftmaxQuantizer:
    """Fit the quantizer on confident dark (label 0) and bright (label 1) features.

    Mini-batch gradient descent with heavy-ball momentum from zero weights;
    each epoch visits a seeded permutation of the pooled samples.
    """
    dark = np.asarray(dark, dtype=np.float64).reshape(-1, N_FEATURES)
    bright = np.asarray(bright, dtype=np.float64).reshape(-1, N_FEATURES)
    if len(dark) == 0 or len(bright) == 0:
        raise TrainingError("both dark and bright training sets must be non-empty")
    x = np.vstack([dark, bright])
    y = np.concatenate([np.full(len(dark), DARK), np.full(len(bright), BRIGHT)])

    rng = np.random.default_rng(recipe.seed)
    w = np.zeros((2, N_FEATURES))
    b = np.zeros(2)
    vw = np.zeros_like(w)
    vb = np.zeros_like(b)
    trace = []
    for epoch in range(1, recipe.epochs + 1):
        order = rng.permutation(len(x))
        for start in range(0, len(x), recipe.batch):
            idx = order[start:start + recipe.batch]
            loss, gw, gb = cross_entropy(w, b, x[idx], y[idx])
            if not np.isfinite(loss):
                raise DivergenceError(epoch, loss)
            vw = recipe.momentum * vw + gw
            vb = recipe.momentum * vb + gb
            w = w - recipe.lr * vw
            b = b - recipe.lr * vb
        epoch_loss = cross_entropy(w, b, x, y)[0]
        if not np.isfinite(epoch_loss) or not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise DivergenceError(epoch, epoch_loss)
        trace.append(epoch_loss)

    meta = {
        "epochs": recipe.epochs, "lr": recipe.lr, "momentum": recipe.momentum,
        "batch": recipe.batch, "seed": recipe.seed,
        "n_dark": int(len(dark)), "n_bright": int(len(bright)),
    }
    return SoftmaxQuantizer(w, b, dict(FEATURE_SPEC), meta, trace)


def quantify_rp(q: SoftmaxQuantizer, img: LumaImage | np.ndarray) -> RpPair:
    """Softmax of the two logits as ``(rp_d, rp_b)``; accepts an image or its features."""
    feats = extract_features(img) if isinstance(img, LumaImage) else img
    return RpPair.from_logits(q.logits(feats))


@dataclass
class Refinement:
    dark: set[str] = field(default_factory=set)
    bright: set[str] = field(default_factory=set)
    review: list[str] = field(default_factory=list)
    rp: dict[str, RpPair] = field(default_factory=dict)


def refine_uncertain(
    q: SoftmaxQuantizer,
    uncertain: Mapping[str, LumaImage | np.ndarray],
    confidence_floor: float = 0.65,
) -> Refinement:
    """Route uncertain images to dark/bright when the quantizer is confident enough.

    Images below ``confidence_floor`` on both sides go to the review list,
    sorted by id.
    """
    if not 0.5 <= confidence_floor < 1.0:
        raise ValueError("confidence_floor must lie in [0.5, 1)")
    out = Refinement()
    for id_ in sorted(uncertain):
        rp = quantify_rp(q, uncertain[id_])
        out.rp[id_] = rp
        if rp.rp_d >= confidence_floor:
            out.dark.add(id_)
        elif rp.rp_b >= confidence_floor:
            out.bright.add(id_)
        else:
            out.review.append(id_)
    return out
