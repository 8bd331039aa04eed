"""Luma rasters, quartile splitting and a deterministic synthetic scene generator."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

BT601 = np.array([0.299, 0.587, 0.114])
LAYOUTS = ("gradient-sky", "shapes", "banded")
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


class DimensionError(ValueError):
    """Raised when an image is too small or shapes disagree."""


@dataclass(frozen=True, eq=False)
class LumaImage:
    """Single-channel brightness raster.

    ``data`` has shape ``(height, width)`` and holds float64 values in
    ``[0, 255]``. The array is made read-only on construction.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(f"expected a non-empty 2-D raster, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 255.0:
            raise ValueError("luma values must be finite and lie in [0, 255]")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def mean(self) -> float:
        return float(self.data.mean())

    def crop(self, x: int, y: int, width: int, height: int) -> "LumaImage":
        if x < 0 or y < 0 or x + width > self.width or y + height > self.height:
            raise DimensionError("crop window exceeds image bounds")
        return LumaImage(self.data[y:y + height, x:x + width])

    def tobytes(self) -> bytes:
        return self.data.tobytes()

    @classmethod
    def uniform(cls, value: float, width: int, height: int | None = None) -> "LumaImage":
        return cls(np.full((height or width, width), float(value)))


@dataclass(frozen=True)
class QuartileSet:
    """The four quadrants of an image and their ``(x, y)`` origins.

    Order is top-left, top-right, bottom-left, bottom-right.
    """

    patches: tuple[LumaImage, LumaImage, LumaImage, LumaImage]
    offsets: tuple[tuple[int, int], ...]
    width: int
    height: int

    def means(self) -> list[float]:
        return [p.mean() for p in self.patches]


def to_luma(rgb) -> LumaImage:
    """BT.601 luma of an ``(H, W, 3)`` raster with channels in [0, 255]."""
    arr = np.asarray(rgb, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[..., None].repeat(3, axis=2)
    if arr.ndim != 3 or arr.shape[2] < 3:
        raise DimensionError(f"expected an (H, W, 3) raster, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DimensionError("zero-sized image")
    luma = arr[..., :3] @ BT601
    return LumaImage(np.clip(luma, 0.0, 255.0))


def split_quartiles(img: LumaImage) -> QuartileSet:
    """Split on a 2x2 grid at ``floor(width/2)``, ``floor(height/2)``."""
    if img.width < 2 or img.height < 2:
        raise DimensionError(f"cannot split a {img.width}x{img.height} image into quartiles")
    mx, my = img.width // 2, img.height // 2
    offsets = ((0, 0), (mx, 0), (0, my), (mx, my))
    d = img.data
    patches = (
        LumaImage(d[:my, :mx]),
        LumaImage(d[:my, mx:]),
        LumaImage(d[my:, :mx]),
        LumaImage(d[my:, mx:]),
    )
    return QuartileSet(patches, offsets, img.width, img.height)


def reassemble(qs: QuartileSet) -> LumaImage:
    out = np.empty((qs.height, qs.width))
    for patch, (x, y) in zip(qs.patches, qs.offsets):
        out[y:y + patch.height, x:x + patch.width] = patch.data
    return LumaImage(out)


# --- synthetic scenes -------------------------------------------------------

@dataclass(frozen=True)
class SceneSpec:
    seed: int
    illumination: float
    layout: str = "gradient-sky"
    size: tuple[int, int] = (16, 16)

    def __post_init__(self):
        if not 0.0 <= self.illumination <= 1.0:
            raise ValueError(f"illumination must lie in [0, 1], got {self.illumination}")
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown layout {self.layout!r}; choose from {LAYOUTS}")
        w, h = self.size
        if w < 2 or h < 2:
            raise DimensionError("scenes must be at least 2x2")


def _reflectance(spec: SceneSpec) -> np.ndarray:
    # Illumination-independent structure in [0, 1].
    rng = np.random.default_rng(spec.seed)
    w, h = spec.size
    yy, xx = np.mgrid[0:h, 0:w]
    u, v = xx / max(w - 1, 1), yy / max(h - 1, 1)

    if spec.layout == "gradient-sky":
        horizon = rng.uniform(0.45, 0.75)
        top, bottom = rng.uniform(0.65, 0.9), rng.uniform(0.45, 0.65)
        sky = top + (bottom - top) * v / horizon
        ground = rng.uniform(0.15, 0.4) + 0.1 * np.sin(2 * np.pi * (u * rng.uniform(1, 3) + rng.uniform()))
        r = np.where(v < horizon, sky, ground)
        sx, sy, sr = rng.uniform(0.1, 0.9), rng.uniform(0.05, 0.35), rng.uniform(0.06, 0.15)
        r = np.where((u - sx) ** 2 + (v - sy) ** 2 < sr ** 2, 1.0, r)
    elif spec.layout == "shapes":
        r = np.full((h, w), rng.uniform(0.3, 0.6))
        for _ in range(int(rng.integers(2, 6))):
            tone = rng.uniform(0.0, 1.0)
            cx, cy = rng.uniform(0, 1, size=2)
            if rng.uniform() < 0.5:
                rad = rng.uniform(0.1, 0.3)
                mask = (u - cx) ** 2 + (v - cy) ** 2 < rad ** 2
            else:
                hw, hh = rng.uniform(0.08, 0.3, size=2)
                mask = (np.abs(u - cx) < hw) & (np.abs(v - cy) < hh)
            r = np.where(mask, tone, r)
    else:
        n_bands = int(rng.integers(3, 7))
        tones = rng.uniform(0.1, 0.9, size=n_bands)
        coord = u if rng.uniform() < 0.5 else v
        r = tones[np.minimum((coord * n_bands).astype(int), n_bands - 1)]

    r = r + rng.normal(0.0, 0.04, size=(h, w))
    return np.clip(r, 0.0, 1.0)


def render_scene(spec: SceneSpec) -> LumaImage:
    """Render a scene whose brightness rises monotonically with illumination.

    Each pixel is ``base + contrast * (reflectance - 0.5)`` where both base and
    contrast grow with illumination, so every pixel (and therefore the mean) is
    non-decreasing in ``spec.illumination``.
    """
    r = _reflectance(spec)
    t = float(spec.illumination)
    base = 6.0 + 234.0 * t
    contrast = 20.0 + 60.0 * t
    return LumaImage(np.clip(base + contrast * (r - 0.5), 0.0, 255.0))


# --- file IO ----------------------------------------------------------------

def load_image(path: str | os.PathLike) -> LumaImage:
    with Image.open(path) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
    return to_luma(rgb)


def save_png(img: LumaImage, path: str | os.PathLike) -> None:
    arr = np.clip(np.rint(img.data), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def resize(img: LumaImage, width: int, height: int) -> LumaImage:
    """Area-average resample, keeping the mean close to the original."""
    if img.width == width and img.height == height:
        return img
    im = Image.fromarray(img.data.astype(np.float32), mode="F")
    out = np.asarray(im.resize((width, height), Image.Resampling.BOX), dtype=np.float64)
    return LumaImage(np.clip(out, 0.0, 255.0))


def iter_image_files(directory: str | os.PathLike) -> Iterator[Path]:
    for p in sorted(Path(directory).rglob("*")):
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES:
            yield p


@dataclass
class SyntheticCorpus:
    """In-memory synthetic scenes with their ground-truth illumination."""

    ids: list[str] = field(default_factory=list)
    specs: list[SceneSpec] = field(default_factory=list)
    images: list[LumaImage] = field(default_factory=list)

    def __len__(self):
        return len(self.ids)

    @property
    def illumination(self) -> np.ndarray:
        return np.array([s.illumination for s in self.specs])

    def items(self):
        return list(zip(self.ids, self.images))


def synth_corpus(
    n: int,
    seed: int = 0,
    illumination: tuple[float, float] = (0.0, 1.0),
    levels: Sequence[float] | None = None,
    size: tuple[int, int] = (16, 16),
    layouts: Sequence[str] = LAYOUTS,
    prefix: str = "scene",
) -> SyntheticCorpus:
    """Draw ``n`` scene specs from a seeded stream and render them.

    Illumination is sampled uniformly from the ``illumination`` range unless
    explicit per-image ``levels`` are given.
    """
    rng = np.random.default_rng(seed)
    drawn = rng.uniform(*illumination, size=n)
    if levels is not None:
        drawn = np.asarray(levels, dtype=np.float64)
        if drawn.shape != (n,):
            raise ValueError("explicit illumination levels must have length n")
    seeds = rng.integers(0, 2**31 - 1, size=n)
    picks = rng.integers(0, len(layouts), size=n)
    corpus = SyntheticCorpus()
    width = len(str(max(n - 1, 0)))
    for i in range(n):
        spec = SceneSpec(int(seeds[i]), float(drawn[i]), layouts[int(picks[i])], tuple(size))
        corpus.ids.append(f"{prefix}-{i:0{width}d}")
        corpus.specs.append(spec)
        corpus.images.append(render_scene(spec))
    return corpus


def write_corpus(corpus: SyntheticCorpus, directory: str | os.PathLike) -> Path:
    """Write PNGs plus ``truth.jsonl`` (path, seed, illumination); returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for id_, spec, img in zip(corpus.ids, corpus.specs, corpus.images):
        path = directory / f"{id_}.png"
        save_png(img, path)
        lines.append(json.dumps({
            "id": id_, "path": str(path), "seed": spec.seed,
            "illumination": spec.illumination, "layout": spec.layout,
        }, sort_keys=True))
    truth = directory / "truth.jsonl"
    truth.write_text("".join(line + "\n" for line in lines))
    return truth
