"""Desk-scale DRU-GAN: a tiny MLP generator and two critics on 16x16 luma scenes."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import druloss
from .druloss import D_TERMS, G_TERMS, TERMS
from .imagecore import DimensionError, LumaImage
from .quantizer import SoftmaxQuantizer, extract_features

logger = logging.getLogger(__name__)

RP_SOURCES = ("quantizer", "fixed", "oracle-labels", "unweighted")
PARAMS = ("w1", "b1", "w2", "b2")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class TrainingDivergedError(FloatingPointError):
    def __init__(self, step: int, detail: str):
        super().__init__(f"training diverged at step {step}: {detail}")
        self.step = step


@dataclass
class TinyNet:
    """Two-layer perceptron with a tanh hidden layer.

    ``output`` is ``"linear"`` for critics or ``"sigmoid255"`` for the
    generator, whose outputs are luma values in [0, 255].
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    output: str = "linear"
    image_shape: tuple[int, int] | None = None

    @classmethod
    def init(cls, n_in, n_hidden, n_out, rng, output="linear", image_shape=None, gain=1.0):
        w1 = rng.normal(0.0, gain / np.sqrt(n_in), size=(n_hidden, n_in))
        w2 = rng.normal(0.0, gain / np.sqrt(n_hidden), size=(n_out, n_hidden))
        return cls(w1, np.zeros(n_hidden), w2, np.zeros(n_out), output, image_shape)

    @classmethod
    def zeros(cls, n_in, n_hidden, n_out, output="linear", image_shape=None):
        return cls(np.zeros((n_hidden, n_in)), np.zeros(n_hidden),
                   np.zeros((n_out, n_hidden)), np.zeros(n_out), output, image_shape)

    @property
    def sizes(self) -> tuple[int, int, int]:
        return self.w1.shape[1], self.w1.shape[0], self.w2.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAMS}

    def forward(self, x: np.ndarray):
        h = np.tanh(x @ self.w1.T + self.b1)
        z = h @ self.w2.T + self.b2
        if self.output == "sigmoid255":
            s = _sigmoid(z)
            return 255.0 * s, (x, h, s)
        return z, (x, h, None)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, dout: np.ndarray):
        """Parameter gradients and input gradient for upstream gradient ``dout``."""
        x, h, s = cache
        dz = dout * (255.0 * s * (1.0 - s)) if s is not None else dout
        dh = dz @ self.w2
        dpre = dh * (1.0 - h * h)
        grads = {
            "w1": dpre.T @ x,
            "b1": dpre.sum(axis=0),
            "w2": dz.T @ h,
            "b2": dz.sum(axis=0),
        }
        return grads, dpre @ self.w1

    def copy(self) -> "TinyNet":
        return replace(self, **{k: v.copy() for k, v in self.params().items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, k).ravel() for k in PARAMS])

    def set_flat(self, vec: np.ndarray) -> None:
        i = 0
        for k in PARAMS:
            arr = getattr(self, k)
            setattr(self, k, np.asarray(vec[i:i + arr.size], dtype=np.float64).reshape(arr.shape))
            i += arr.size

    def to_dict(self) -> dict:
        return {
            "sizes": list(self.sizes),
            "output": self.output,
            "image_shape": list(self.image_shape) if self.image_shape else None,
            "params": {k: getattr(self, k).ravel().tolist() for k in PARAMS},
        }

    @classmethod
    def from_dict(cls, d) -> "TinyNet":
        n_in, n_hidden, n_out = d["sizes"]
        shapes = {"w1": (n_hidden, n_in), "b1": (n_hidden,), "w2": (n_out, n_hidden), "b2": (n_out,)}
        arrs = {k: np.asarray(d["params"][k], dtype=np.float64).reshape(shapes[k]) for k in PARAMS}
        shape = tuple(d["image_shape"]) if d.get("image_shape") else None
        return cls(output=d["output"], image_shape=shape, **arrs)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch: int = 16
    lr: float = 0.02
    momentum: float = 0.5
    seed: int = 42
    patch: int = 8
    hidden: int = 64
    rp_source: str = "quantizer"
    rp_fixed: tuple[float, float] = (1.0, 1.0)
    terms: tuple[str, ...] = TERMS
    image_shape: tuple[int, int] = (16, 16)

    def __post_init__(self):
        if self.steps < 1 or self.batch < 1:
            raise ValueError("steps and batch must be >= 1")
        h, w = self.image_shape
        if not 1 <= self.patch <= min(h, w):
            raise ValueError(f"patch {self.patch} does not fit a {w}x{h} image")
        if self.rp_source not in RP_SOURCES:
            raise ValueError(f"rp_source must be one of {RP_SOURCES}")
        unknown = set(self.terms) - set(TERMS)
        if unknown:
            raise ValueError(f"unknown loss terms {sorted(unknown)}")


@dataclass
class GanState:
    generator: TinyNet
    global_critic: TinyNet
    local_critic: TinyNet

    def nets(self) -> dict[str, TinyNet]:
        return {"generator": self.generator, "global_critic": self.global_critic,
                "local_critic": self.local_critic}

    def to_dict(self) -> dict:
        return {k: v.to_dict() for k, v in self.nets().items()}

    @classmethod
    def from_dict(cls, d) -> "GanState":
        return cls(*(TinyNet.from_dict(d[k]) for k in ("generator", "global_critic", "local_critic")))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "GanState":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def init_state(cfg: TrainConfig, rng: np.random.Generator) -> GanState:
    h, w = cfg.image_shape
    n = h * w
    return GanState(
        TinyNet.init(n, cfg.hidden, n, rng, output="sigmoid255", image_shape=(h, w)),
        TinyNet.init(n, cfg.hidden, 1, rng),
        TinyNet.init(cfg.patch * cfg.patch, cfg.hidden, 1, rng),
    )


class Momentum:
    """Heavy-ball SGD: ``v <- m v + g``; ``p <- p - lr v``."""

    def __init__(self, lr: float, momentum: float):
        self.lr, self.momentum = lr, momentum
        self.velocity: dict[tuple[str, str], np.ndarray] = {}

    def step(self, nets: dict[str, TinyNet], grads: dict[str, dict[str, np.ndarray]]):
        for net_name, g in grads.items():
            net = nets[net_name]
            for k, gk in g.items():
                key = (net_name, k)
                v = self.momentum * self.velocity[key] + gk if key in self.velocity else gk
                self.velocity[key] = v
                setattr(net, k, getattr(net, k) - self.lr * v)


@dataclass
class GanResult:
    state: GanState
    trace: list[dict[str, float]] = field(default_factory=list)
    config: TrainConfig | None = None

    @property
    def generator(self) -> TinyNet:
        return self.state.generator


def as_stack(images, shape=None) -> np.ndarray:
    """Stack LumaImages (or an array) into a float ``(N, H, W)`` array."""
    if isinstance(images, np.ndarray):
        arr = np.asarray(images, dtype=np.float64)
    else:
        arr = np.stack([im.data if isinstance(im, LumaImage) else np.asarray(im, dtype=np.float64)
                        for im in images]) if len(images) else np.empty((0,) + tuple(shape or (0, 0)))
    if arr.ndim != 3:
        raise DimensionError(f"expected a stack of 2-D images, got shape {arr.shape}")
    if shape is not None and arr.shape[1:] != tuple(shape):
        raise DimensionError(f"images must be {shape[1]}x{shape[0]}, got {arr.shape[2]}x{arr.shape[1]}")
    return arr


def resolve_rp(
    cfg: TrainConfig,
    dark: np.ndarray,
    bright: np.ndarray,
    quantizer: SoftmaxQuantizer | None = None,
    dark_illumination: Sequence[float] | None = None,
    bright_illumination: Sequence[float] | None = None,
):
    """Per-image ``(rp_d for dark images, rp_b for bright images)``, or ``(None, None)`` for unweighted."""
    if cfg.rp_source == "unweighted":
        return None, None
    if cfg.rp_source == "fixed":
        d, b = cfg.rp_fixed
        return np.full(len(dark), float(d)), np.full(len(bright), float(b))
    if cfg.rp_source == "oracle-labels":
        if dark_illumination is None or bright_illumination is None:
            raise ValueError("oracle-labels needs ground-truth illumination for both corpora")
        return 1.0 - np.asarray(dark_illumination, dtype=np.float64), np.asarray(bright_illumination, dtype=np.float64)
    if quantizer is None:
        raise ValueError("rp_source='quantizer' needs a fitted quantizer")
    rp_d = quantizer.predict_proba(np.array([extract_features(LumaImage(im)) for im in dark]))[:, 0]
    p_b = quantizer.predict_proba(np.array([extract_features(LumaImage(im)) for im in bright]))
    return rp_d, 1.0 - p_b[:, 0]


def train_dru_gan(
    dark,
    bright,
    quantizer: SoftmaxQuantizer | None = None,
    cfg: TrainConfig = TrainConfig(),
    dark_illumination=None,
    bright_illumination=None,
    rp=None,
) -> GanResult:
    """Alternate one critic step and one generator step per iteration.

    ``rp`` may pass precomputed ``(rp_d, rp_b)`` arrays, overriding
    ``cfg.rp_source``. Every step draws its mini-batch indices and crop
    positions from one seeded stream, so runs with the same seed consume
    identical randomness whatever the RP weighting.
    """
    dark = as_stack(dark, cfg.image_shape)
    bright = as_stack(bright, cfg.image_shape)
    if len(dark) == 0 or len(bright) == 0:
        raise ValueError("dark and bright corpora must be non-empty")
    if rp is None:
        rp_d, rp_b = resolve_rp(cfg, dark, bright, quantizer, dark_illumination, bright_illumination)
    else:
        rp_d, rp_b = (np.asarray(r, dtype=np.float64) for r in rp)

    rng = np.random.default_rng(cfg.seed)
    state = init_state(cfg, rng)
    nets = state.nets()
    opt_d = Momentum(cfg.lr, cfg.momentum)
    opt_g = Momentum(cfg.lr, cfg.momentum)
    d_terms = tuple(t for t in cfg.terms if t in D_TERMS)
    g_terms = tuple(t for t in cfg.terms if t in G_TERMS)
    h, w = cfg.image_shape
    trace = []

    for step in range(1, cfg.steps + 1):
        idx_d = rng.integers(0, len(dark), size=cfg.batch)
        idx_b = rng.integers(0, len(bright), size=cfg.batch)
        crops_d = np.stack([rng.integers(0, w - cfg.patch + 1, size=cfg.batch),
                            rng.integers(0, h - cfg.patch + 1, size=cfg.batch)], axis=1)
        crops_b = np.stack([rng.integers(0, w - cfg.patch + 1, size=cfg.batch),
                            rng.integers(0, h - cfg.patch + 1, size=cfg.batch)], axis=1)
        batch_kwargs = dict(
            dark=dark[idx_d], bright=bright[idx_b], dark_crops=crops_d, bright_crops=crops_b,
            rp_d=None if rp_d is None else rp_d[idx_d],
            rp_b=None if rp_b is None else rp_b[idx_b],
            patch=cfg.patch,
        )
        row = {"step": step, **{t: 0.0 for t in TERMS}}
        try:
            if d_terms:
                bd = druloss.total_objective(*nets.values(), terms=d_terms, groups=("discriminator",), **batch_kwargs)
                opt_d.step(nets, bd.grads["discriminator"])
                row.update({t: getattr(bd, t) for t in d_terms})
            if g_terms:
                bg = druloss.total_objective(*nets.values(), terms=g_terms, groups=("generator",), **batch_kwargs)
                opt_g.step(nets, bg.grads["generator"])
                row.update({t: getattr(bg, t) for t in g_terms})
        except FloatingPointError as exc:
            raise TrainingDivergedError(step, str(exc)) from exc
        for name, net in nets.items():
            if not np.all(np.isfinite(net.flat())):
                raise TrainingDivergedError(step, f"non-finite parameters in {name}")
        trace.append(row)

    return GanResult(state, trace, cfg)


def enhance(generator: TinyNet, img: LumaImage) -> LumaImage:
    n_in, _, n_out = generator.sizes
    shape = generator.image_shape
    if (shape is not None and (img.height, img.width) != tuple(shape)) or img.width * img.height != n_in:
        raise DimensionError(f"generator expects {shape or n_in} input, got {img.width}x{img.height}")
    out = generator(img.data.reshape(1, -1) / 255.0)
    return LumaImage(np.clip(out.reshape(img.height, img.width), 0.0, 255.0))


def enhance_stack(generator: TinyNet, images: np.ndarray) -> np.ndarray:
    images = as_stack(images)
    return generator(images.reshape(len(images), -1) / 255.0).reshape(images.shape)


def write_trace_csv(trace: list[dict[str, float]], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["step", *TERMS])
        writer.writeheader()
        for row in trace:
            writer.writerow({k: row[k] if k == "step" else repr(float(row[k])) for k in ["step", *TERMS]})
