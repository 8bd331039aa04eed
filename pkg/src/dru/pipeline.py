"""Manifest IO and the three-stage curation pipeline (partition, refine, annotate/split)."""

from __future__ import annotations

import configparser
import json
import math
import os
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .imagecore import SyntheticCorpus, iter_image_files
from .qab import Category, QabThresholds, partition_corpus
from .quantizer import Recipe, SoftmaxQuantizer, extract_features, refine_uncertain, train

CATEGORIES = tuple(c.value for c in Category)
REFINED = ("dark", "bright", "review")
SPLITS = ("train", "test")
RP_TOL = 1e-9
RP_BINS = 10


class ManifestError(ValueError):
    """Malformed or inconsistent manifest content."""

    def __init__(self, message: str, line: int | None = None, ids: Sequence[str] = ()):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line
        self.ids = list(ids)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: Exception, records: list[dict]):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.records = records


# --- manifest IO ------------------------------------------------------------

def dumps_record(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, separators=(", ", ": "))


def parse_manifest(text: str) -> list[dict]:
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"invalid JSON ({exc.msg})", line=lineno) from None
        if not isinstance(rec, dict):
            raise ManifestError("record is not a JSON object", line=lineno)
        problem = _record_problem(rec)
        if problem:
            raise ManifestError(problem, line=lineno, ids=[str(rec.get("id"))])
        records.append(rec)
    return records


def _record_problem(rec: dict) -> str | None:
    for key in ("id", "path", "quartile_means", "category"):
        if key not in rec:
            return f"missing field {key!r}"
    if not isinstance(rec["id"], str):
        return "id must be a string"
    qm = rec["quartile_means"]
    if not (isinstance(qm, list) and len(qm) == 4 and all(isinstance(v, (int, float)) for v in qm)):
        return "quartile_means must be a list of 4 numbers"
    if rec["category"] not in CATEGORIES:
        return f"unknown category {rec['category']!r}"
    if ("rp_d" in rec) != ("rp_b" in rec):
        return "rp_d and rp_b must appear together"
    if "refined" in rec and rec["refined"] not in REFINED:
        return f"unknown refined label {rec['refined']!r}"
    if "split" in rec and rec["split"] not in SPLITS:
        return f"unknown split {rec['split']!r}"
    return None


def read_manifest(path: str | os.PathLike) -> list[dict]:
    return parse_manifest(Path(path).read_text())


def validate_manifest(records: Iterable[dict]) -> None:
    """Check id uniqueness and that every RP pair sums to one; raises listing offending ids."""
    seen, dupes, bad_rp = set(), [], []
    for rec in records:
        if rec["id"] in seen:
            dupes.append(rec["id"])
        seen.add(rec["id"])
        if "rp_d" in rec:
            rp_d, rp_b = rec["rp_d"], rec["rp_b"]
            if not (0.0 <= rp_d <= 1.0 and 0.0 <= rp_b <= 1.0 and abs(rp_d + rp_b - 1.0) <= RP_TOL):
                bad_rp.append(rec["id"])
    if dupes:
        raise ManifestError(f"duplicate ids: {', '.join(sorted(set(dupes)))}", ids=dupes)
    if bad_rp:
        raise ManifestError(f"rp_d + rp_b != 1 for ids: {', '.join(bad_rp)}", ids=bad_rp)


def write_manifest(records: Iterable[dict], path: str | os.PathLike) -> None:
    """Write sorted JSON-lines atomically (temp file in the target dir, then rename)."""
    records = sorted(records, key=lambda r: r["id"])
    validate_manifest(records)
    text = "".join(dumps_record(r) + "\n" for r in records)
    atomic_write(path, text)


def atomic_write(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --- configuration ----------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    thresholds: QabThresholds = QabThresholds()
    recipe: Recipe = Recipe()
    confidence_floor: float = 0.65
    split_ratio: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split ratio must lie in (0, 1)")
        if not 0.5 <= self.confidence_floor < 1.0:
            raise ValueError("confidence floor must lie in [0.5, 1)")


def read_config(path: str | os.PathLike) -> dict[str, str]:
    """Parse a plain ``key = value`` file (``#`` comments allowed)."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = lambda k: k.strip().lower().replace("-", "_")
    text = Path(path).read_text()
    try:
        parser.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ValueError(f"cannot parse config {path}: {exc}") from None
    return dict(parser["config"])


def pipeline_config(values: dict, seed: int | None = None) -> PipelineConfig:
    """Build a :class:`PipelineConfig` from string or typed key-value pairs."""
    v = {k: val for k, val in values.items() if val is not None}
    known = {"b_low", "b_high", "epochs", "lr", "momentum", "batch", "recipe_seed",
             "confidence_floor", "split_ratio", "seed"}
    unknown = set(v) - known
    if unknown:
        raise ValueError(f"unknown pipeline config keys: {', '.join(sorted(unknown))}")
    base_seed = int(seed if seed is not None else v.get("seed", 0))
    th = QabThresholds(float(v.get("b_low", QabThresholds.b_low)), float(v.get("b_high", QabThresholds.b_high)))
    recipe = Recipe(
        epochs=int(v.get("epochs", Recipe.epochs)),
        lr=float(v.get("lr", Recipe.lr)),
        momentum=float(v.get("momentum", Recipe.momentum)),
        batch=int(v.get("batch", Recipe.batch)),
        seed=int(v.get("recipe_seed", base_seed)),
    )
    return PipelineConfig(
        th, recipe,
        float(v.get("confidence_floor", PipelineConfig.confidence_floor)),
        float(v.get("split_ratio", PipelineConfig.split_ratio)),
        base_seed,
    )


# --- stages -----------------------------------------------------------------

def directory_items(directory: str | os.PathLike):
    """``(id, path)`` pairs for every PNG/JPEG under ``directory``; ids are relative stems."""
    root = Path(directory)
    out = []
    for p in iter_image_files(root):
        out.append((p.relative_to(root).with_suffix("").as_posix(), p))
    return out


def split_ids(ids: Iterable[str], ratio: float, seed: int) -> tuple[list[str], list[str]]:
    """Seeded train/test split; a pure function of the id set and the seed."""
    ids = sorted(set(ids))
    n_train = int(math.floor(ratio * len(ids) + 0.5))
    order = np.random.default_rng(seed).permutation(len(ids))
    train_ids = sorted(ids[i] for i in order[:n_train])
    test_ids = sorted(ids[i] for i in order[n_train:])
    return train_ids, test_ids


def partition_records(items, th: QabThresholds, featurize=None):
    part = partition_corpus(items, th, featurize=featurize)
    paths = {}
    records = []
    for id_, source in items:
        paths[id_] = source
    for id_ in sorted(part.verdicts):
        v = part.verdicts[id_]
        src = paths.get(id_)
        records.append({
            "id": id_,
            "path": str(src) if isinstance(src, (str, os.PathLike)) else f"memory:{id_}",
            "quartile_means": [float(m) for m in v.quartile_means],
            "category": v.category.value,
        })
    return records, part


def train_on_confident(features: dict[str, np.ndarray], records: list[dict], recipe: Recipe) -> SoftmaxQuantizer:
    dark = [features[r["id"]] for r in records if r["category"] == "dark"]
    bright = [features[r["id"]] for r in records if r["category"] == "bright"]
    return train(dark, bright, recipe)


def annotate_refined(records, q, features, floor):
    uncertain = {r["id"]: features[r["id"]] for r in records if r["category"] == "uncertain"}
    ref = refine_uncertain(q, uncertain, floor)
    for r in records:
        if r["category"] != "uncertain":
            r["refined"] = r["category"]
        elif r["id"] in ref.dark:
            r["refined"] = "dark"
        elif r["id"] in ref.bright:
            r["refined"] = "bright"
        else:
            r["refined"] = "review"
    return ref


def annotate_rp(records, q, features):
    for r in records:
        p = q.predict_proba(features[r["id"]])
        r["rp_d"] = float(p[0])
        r["rp_b"] = float(1.0 - p[0])


def annotate_split(records, ratio, seed):
    dark = [r["id"] for r in records if r.get("refined") == "dark"]
    train_ids, _ = split_ids(dark, ratio, seed)
    train_set = set(train_ids)
    for r in records:
        if r.get("refined") == "dark":
            r["split"] = "train" if r["id"] in train_set else "test"
        elif r.get("refined") == "bright":
            r["split"] = "train"


@dataclass
class PipelineResult:
    records: list[dict]
    summary: dict
    quantizer: SoftmaxQuantizer | None = None
    errors: dict[str, str] = field(default_factory=dict)


def pipeline_run(source, cfg: PipelineConfig = PipelineConfig()) -> PipelineResult:
    """Partition, train on confident sets, refine uncertain, annotate RP, split dark 80/20.

    ``source`` is an image directory, a :class:`SyntheticCorpus`, or a sequence
    of ``(id, image-or-path)`` pairs. On a stage failure :class:`PipelineError`
    carries the records built so far.
    """
    if isinstance(source, (str, os.PathLike)):
        items = directory_items(source)
    elif isinstance(source, SyntheticCorpus):
        items = source.items()
    else:
        items = list(source)

    stage = "partition"
    records: list[dict] = []
    try:
        records, part = partition_records(items, cfg.thresholds, featurize=extract_features)
        q = None
        if records:
            stage = "train-quantizer"
            q = train_on_confident(part.features, records, cfg.recipe)
            stage = "refine"
            annotate_refined(records, q, part.features, cfg.confidence_floor)
            stage = "quantify"
            annotate_rp(records, q, part.features)
            stage = "split"
            annotate_split(records, cfg.split_ratio, cfg.seed)
    except Exception as exc:
        raise PipelineError(stage, exc, records) from exc
    validate_manifest(records)
    summary = summarize(records)
    summary["errors"] = dict(sorted(part.errors.items()))
    return PipelineResult(records, summary, q, dict(part.errors))


# --- reporting --------------------------------------------------------------

def summarize(records: Sequence[dict]) -> dict:
    """Deterministic counts per category/refined label/split plus an rp_b histogram."""
    records = list(records)
    validate_manifest(records)
    cat = Counter(r["category"] for r in records)
    refined = Counter(r["refined"] for r in records if "refined" in r)
    splits = Counter(f"{r['refined']}/{r['split']}" for r in records if "split" in r)
    rp_b = [r["rp_b"] for r in records if "rp_b" in r]
    hist, _ = np.histogram(rp_b, bins=RP_BINS, range=(0.0, 1.0))
    return {
        "total": len(records),
        "categories": {c: cat.get(c, 0) for c in CATEGORIES},
        "refined": {c: refined.get(c, 0) for c in REFINED},
        "review": sorted(r["id"] for r in records if r.get("refined") == "review"),
        "splits": dict(sorted(splits.items())),
        "rp_b_histogram": {"edges": np.linspace(0, 1, RP_BINS + 1).round(2).tolist(),
                           "counts": hist.astype(int).tolist()},
        "with_rp": len(rp_b),
    }


def report(records: Sequence[dict]) -> str:
    s = summarize(records)
    lines = [f"records: {s['total']}"]
    lines.append("categories: " + ", ".join(f"{k}={v}" for k, v in s["categories"].items()))
    if any(s["refined"].values()):
        lines.append("refined: " + ", ".join(f"{k}={v}" for k, v in s["refined"].items()))
    lines.append(f"review list: {len(s['review'])}")
    if s["splits"]:
        lines.append("splits: " + ", ".join(f"{k}={v}" for k, v in s["splits"].items()))
    if s["with_rp"]:
        lines.append("rp_b histogram:")
        edges, counts = s["rp_b_histogram"]["edges"], s["rp_b_histogram"]["counts"]
        peak = max(counts) or 1
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            lines.append(f"  [{lo:.1f}, {hi:.1f}) {c:6d} {'#' * round(40 * c / peak)}")
    return "\n".join(lines)
