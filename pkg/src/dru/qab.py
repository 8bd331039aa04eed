"""Quartile average brightness (QAB) partition into dark, bright and uncertain sets."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Union

import numpy as np

from .imagecore import DimensionError, LumaImage, load_image, split_quartiles

logger = logging.getLogger(__name__)

DEFAULT_B_LOW = 50.0
DEFAULT_B_HIGH = 150.0


class Category(str, Enum):
    DARK = "dark"
    BRIGHT = "bright"
    UNCERTAIN = "uncertain"


@dataclass(frozen=True)
class QabThresholds:
    b_low: float = DEFAULT_B_LOW
    b_high: float = DEFAULT_B_HIGH

    def __post_init__(self):
        if not (0.0 <= self.b_low < self.b_high <= 255.0):
            raise ValueError(
                f"thresholds must satisfy 0 <= b_low < b_high <= 255, got {self.b_low}, {self.b_high}"
            )


@dataclass(frozen=True)
class QabVerdict:
    quartile_means: tuple[float, float, float, float]
    category: Category
    thresholds: QabThresholds


def mean_brightness(patch: LumaImage) -> float:
    """Arithmetic mean of all pixels of a patch."""
    data = np.asarray(patch.data if isinstance(patch, LumaImage) else patch, dtype=np.float64)
    if data.size == 0:
        raise DimensionError("empty patch")
    return float(data.sum() / data.size)


def categorize(means: Iterable[float], th: QabThresholds) -> Category:
    means = list(means)
    # Strict comparisons; a mean equal to a threshold is neither dark nor bright.
    if min(means) < th.b_low:
        return Category.DARK
    if min(means) > th.b_high:
        return Category.BRIGHT
    return Category.UNCERTAIN


def classify(img: LumaImage, th: QabThresholds = QabThresholds()) -> QabVerdict:
    """Dark if any quartile mean < b_low, bright if all exceed b_high, else uncertain."""
    means = tuple(mean_brightness(p) for p in split_quartiles(img).patches)
    return QabVerdict(means, categorize(means, th), th)


ImageSource = Union[LumaImage, str, os.PathLike, Callable[[], LumaImage]]


def _materialize(source: ImageSource) -> LumaImage:
    if isinstance(source, LumaImage):
        return source
    if callable(source):
        return source()
    return load_image(source)


@dataclass
class Partition:
    dark: set[str] = field(default_factory=set)
    bright: set[str] = field(default_factory=set)
    uncertain: set[str] = field(default_factory=set)
    verdicts: dict[str, QabVerdict] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)
    features: dict[str, np.ndarray] = field(default_factory=dict)

    def ids(self, category: Category | str) -> set[str]:
        return getattr(self, Category(category).value)

    def counts(self) -> dict[str, int]:
        return {c.value: len(self.ids(c)) for c in Category}


def partition_corpus(
    items: Iterable[tuple[str, ImageSource]],
    th: QabThresholds = QabThresholds(),
    featurize: Callable[[LumaImage], np.ndarray] | None = None,
) -> Partition:
    """Stream ``(id, image-or-path)`` pairs through :func:`classify`.

    Items that fail to load or classify are recorded in ``errors`` and skipped.
    When ``featurize`` is given its output is kept per id, so later stages do
    not need to reload images.
    """
    result = Partition()
    for id_, source in items:
        if id_ in result.verdicts or id_ in result.errors:
            raise ValueError(f"duplicate id {id_!r}")
        try:
            img = _materialize(source)
            verdict = classify(img, th)
            feats = featurize(img) if featurize is not None else None
        except (OSError, ValueError) as exc:
            logger.warning("skipping %s: %s", id_, exc)
            result.errors[id_] = f"{type(exc).__name__}: {exc}"
            continue
        result.verdicts[id_] = verdict
        result.ids(verdict.category).add(id_)
        if feats is not None:
            result.features[id_] = feats
    return result
