"""DRU-vs-Vanilla ablations on synthetic corpora: confident/uncertain data and label noise."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import jsonschema
import numpy as np

from .imagecore import synth_corpus
from .qab import QabThresholds, partition_corpus
from .quantizer import Recipe, extract_features, refine_uncertain, train
from .toygan import TrainConfig, as_stack, enhance_stack, train_dru_gan

logger = logging.getLogger(__name__)

KINDS = {"noise": ("original", "noisy"), "data": ("confident", "uncertain", "both")}
REFERENCE = {"noise": "original", "data": "both"}
METHODS = ("dru", "vanilla")

# Desk-scale quantizer recipe: the default one underfits a few hundred samples.
ABLATION_RECIPE = Recipe(epochs=80, lr=0.05, momentum=0.9, batch=64, seed=1)

REPORT_SCHEMA = {
    "type": "object",
    "required": ["kind", "settings", "seeds", "noise_rate", "runs", "summary", "degradation"],
    "properties": {
        "kind": {"enum": list(KINDS)},
        "settings": {"type": "array", "items": {"type": "string"}, "minItems": 2},
        "seeds": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        "noise_rate": {"type": "number", "minimum": 0, "maximum": 1},
        "runs": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["setting", "method", "seed", "gap", "enhanced_mean", "bright_mean",
                             "n_dark", "n_bright"],
                "properties": {
                    "setting": {"type": "string"},
                    "method": {"enum": list(METHODS)},
                    "seed": {"type": "integer"},
                    "gap": {"type": "number", "minimum": 0},
                    "enhanced_mean": {"type": "number"},
                    "bright_mean": {"type": "number"},
                    "n_dark": {"type": "integer", "minimum": 1},
                    "n_bright": {"type": "integer", "minimum": 1},
                },
            },
        },
        "summary": {"type": "object"},
        "degradation": {"type": "object"},
    },
}


@dataclass(frozen=True)
class AblationConfig:
    kind: str = "noise"
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    noise_rate: float = 0.3
    pool: int = 600
    gan: TrainConfig = TrainConfig()
    recipe: Recipe = ABLATION_RECIPE
    thresholds: QabThresholds = QabThresholds()
    confidence_floor: float = 0.65
    split_ratio: float = 0.8

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {sorted(KINDS)}")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ValueError("noise_rate must lie in [0, 1]")


def flip_labels(dark_ids: list[str], bright_ids: list[str], rate: float, rng: np.random.Generator):
    """Swap a ``rate`` fraction of each class into the other one."""
    k_d = int(round(rate * len(dark_ids)))
    k_b = int(round(rate * len(bright_ids)))
    to_bright = set(rng.choice(dark_ids, size=k_d, replace=False).tolist()) if k_d else set()
    to_dark = set(rng.choice(bright_ids, size=k_b, replace=False).tolist()) if k_b else set()
    noisy_dark = sorted((set(dark_ids) - to_bright) | to_dark)
    noisy_bright = sorted((set(bright_ids) - to_dark) | to_bright)
    return noisy_dark, noisy_bright


def build_settings(cfg: AblationConfig, seed: int):
    """Curate one seeded synthetic pool into training settings plus a held-out dark test set."""
    pool = synth_corpus(cfg.pool, seed=seed, illumination=(0.0, 1.0), size=cfg.gan.image_shape[::-1])
    images = dict(pool.items())
    part = partition_corpus(pool.items(), cfg.thresholds, featurize=extract_features)
    feats = part.features
    q = train([feats[i] for i in sorted(part.dark)], [feats[i] for i in sorted(part.bright)],
              replace(cfg.recipe, seed=seed))
    ref = refine_uncertain(q, {i: feats[i] for i in part.uncertain}, cfg.confidence_floor)

    rng = np.random.default_rng(seed)
    dark_all = sorted(part.dark | ref.dark)
    order = rng.permutation(len(dark_all))
    n_train = int(np.floor(cfg.split_ratio * len(dark_all) + 0.5))
    train_dark = {dark_all[i] for i in order[:n_train]}
    test_dark = sorted(dark_all[i] for i in order[n_train:])
    bright_all = sorted(part.bright | ref.bright)

    if cfg.kind == "noise":
        clean = (sorted(train_dark), bright_all)
        settings = {"original": clean, "noisy": flip_labels(*clean, cfg.noise_rate, rng)}
    else:
        settings = {
            "confident": (sorted(part.dark & train_dark), sorted(part.bright)),
            "uncertain": (sorted(ref.dark & train_dark), sorted(ref.bright)),
            "both": (sorted(train_dark), bright_all),
        }
    bright_mean = float(as_stack([images[i] for i in bright_all]).mean())
    return images, q, settings, test_dark, bright_mean


def ablate(cfg: AblationConfig = AblationConfig()) -> dict:
    """Train DRU (quantizer RP) and Vanilla (unweighted) per setting and seed.

    The score of each run is the brightness gap ``|mean(G(test dark)) -
    mean(clean bright corpus)|``; degradation is a setting's gap minus the gap
    of the reference setting for the same seed and method.
    """
    runs = []
    for seed in cfg.seeds:
        images, q, settings, test_dark, bright_mean = build_settings(cfg, seed)
        test = as_stack([images[i] for i in test_dark])
        for setting in KINDS[cfg.kind]:
            dark_ids, bright_ids = settings[setting]
            if not dark_ids or not bright_ids:
                raise ValueError(f"setting {setting!r} has an empty class for seed {seed}")
            dark = [images[i] for i in dark_ids]
            bright = [images[i] for i in bright_ids]
            for method in METHODS:
                gan_cfg = replace(cfg.gan, seed=seed, rp_source="quantizer" if method == "dru" else "unweighted")
                result = train_dru_gan(dark, bright, q, gan_cfg)
                enhanced_mean = float(enhance_stack(result.generator, test).mean())
                runs.append({
                    "setting": setting, "method": method, "seed": int(seed),
                    "gap": abs(enhanced_mean - bright_mean),
                    "enhanced_mean": enhanced_mean, "bright_mean": bright_mean,
                    "n_dark": len(dark_ids), "n_bright": len(bright_ids),
                })
                logger.info("ablate %s/%s seed=%d gap=%.2f", setting, method, seed, runs[-1]["gap"])
    report = summarize(cfg.kind, runs, cfg.seeds, cfg.noise_rate)
    validate_report(report)
    return report


def summarize(kind: str, runs: list[dict], seeds, noise_rate: float) -> dict:
    gaps = {(r["setting"], r["method"], r["seed"]): r["gap"] for r in runs}
    settings = list(KINDS[kind])
    ref = REFERENCE[kind]
    summary = {
        s: {m: {"median_gap": float(np.median([gaps[s, m, k] for k in seeds])),
                "mean_gap": float(np.mean([gaps[s, m, k] for k in seeds])),
                "per_seed": [gaps[s, m, k] for k in seeds]}
            for m in METHODS}
        for s in settings
    }
    degradation = {}
    for s in settings:
        if s == ref:
            continue
        per = {m: [gaps[s, m, k] - gaps[ref, m, k] for k in seeds] for m in METHODS}
        degradation[s] = {
            "per_seed": per,
            "median": {m: float(np.median(v)) for m, v in per.items()},
        }
    return {
        "kind": kind, "settings": settings, "seeds": [int(k) for k in seeds],
        "noise_rate": float(noise_rate), "reference": ref,
        "runs": runs, "summary": summary, "degradation": degradation,
    }


def validate_report(report: dict) -> None:
    jsonschema.validate(report, REPORT_SCHEMA)


def format_report(report: dict) -> str:
    lines = [f"ablation: {report['kind']} (reference setting: {report['reference']})"]
    lines.append(f"{'setting':<12}{'method':<10}{'median gap':>12}  per-seed")
    for s in report["settings"]:
        for m in METHODS:
            row = report["summary"][s][m]
            seeds = " ".join(f"{g:7.2f}" for g in row["per_seed"])
            lines.append(f"{s:<12}{m:<10}{row['median_gap']:>12.2f}  {seeds}")
    for s, d in report["degradation"].items():
        med = d["median"]
        lines.append(f"degradation {s} vs {report['reference']}: dru {med['dru']:+.2f}  vanilla {med['vanilla']:+.2f}")
    return "\n".join(lines)
