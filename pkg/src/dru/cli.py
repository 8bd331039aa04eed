"""Command-line entry point: ``dru <subcommand> [options]``.

Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import ablation, pipeline
from .imagecore import load_image, resize, save_png, synth_corpus, write_corpus
from .pipeline import (ManifestError, PipelineError, atomic_write, pipeline_config, read_config,
                       read_manifest, write_manifest)
from .quantizer import SoftmaxQuantizer, TrainingError, extract_features
from .toygan import (GanState, TrainConfig, TrainingDivergedError, as_stack, enhance, enhance_stack,
                     train_dru_gan, write_trace_csv)

log = logging.getLogger("dru")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class UsageError(ValueError):
    pass


def _settings(args) -> dict:
    """Config-file values overlaid by explicitly passed flags."""
    values = read_config(args.config) if args.config else {}
    values = {k: v for k, v in values.items() if not k.startswith("gan_")}
    for key in ("b_low", "b_high", "epochs", "lr", "momentum", "batch", "confidence_floor", "split_ratio"):
        val = getattr(args, key, None)
        if val is not None:
            values[key] = val
    return values


def _require_out(args) -> Path:
    if not args.out:
        raise UsageError("--out is required for this subcommand")
    return Path(args.out)


def _load_luma(path: str, shape=None):
    img = load_image(path)
    if shape is not None:
        img = resize(img, shape[1], shape[0])
    return img


# --- subcommands -------------------------------------------------------------

def cmd_synth(args) -> int:
    out = _require_out(args)
    corpus = synth_corpus(args.n, seed=args.seed or 0, illumination=(args.illum_low, args.illum_high),
                          size=(args.size, args.size), prefix=args.prefix)
    truth = write_corpus(corpus, out)
    print(f"wrote {len(corpus)} scenes to {out} (ground truth: {truth})")
    return EXIT_OK


def cmd_partition(args) -> int:
    values = _settings(args)
    cfg = pipeline_config(values)
    out = _require_out(args)
    records, part = pipeline.partition_records(pipeline.directory_items(args.input), cfg.thresholds)
    write_manifest(records, out)
    counts = part.counts()
    print(f"partitioned {len(records)} images: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    for id_, err in sorted(part.errors.items()):
        print(f"skipped {id_}: {err}", file=sys.stderr)
    return EXIT_OK


def _features_for(records):
    return {r["id"]: extract_features(load_image(r["path"])) for r in records}


def cmd_train_quantizer(args) -> int:
    values = _settings(args)
    cfg = pipeline_config(values, seed=args.seed)
    out = _require_out(args)
    records = read_manifest(args.manifest)
    confident = [r for r in records if r["category"] in ("dark", "bright")]
    feats = _features_for(confident)
    q = pipeline.train_on_confident(feats, confident, cfg.recipe)
    q.save(out)
    print(f"trained quantizer on {len(confident)} confident images; final loss {q.loss_trace[-1]:.6f}")
    return EXIT_OK


def cmd_quantify(args) -> int:
    out = _require_out(args)
    records = read_manifest(args.manifest)
    q = SoftmaxQuantizer.load(args.model)
    pipeline.annotate_rp(records, q, _features_for(records))
    write_manifest(records, out)
    print(f"annotated {len(records)} records with rp_d/rp_b")
    return EXIT_OK


def cmd_refine(args) -> int:
    values = _settings(args)
    cfg = pipeline_config(values)
    out = _require_out(args)
    records = read_manifest(args.manifest)
    q = SoftmaxQuantizer.load(args.model)
    uncertain = [r for r in records if r["category"] == "uncertain"]
    ref = pipeline.annotate_refined(records, q, _features_for(uncertain), cfg.confidence_floor)
    write_manifest(records, out)
    print(f"refined {len(uncertain)} uncertain images: dark+={len(ref.dark)} bright+={len(ref.bright)} "
          f"review={len(ref.review)}")
    if args.review_out:
        atomic_write(args.review_out, "".join(i + "\n" for i in ref.review))
    return EXIT_OK


def cmd_split(args) -> int:
    values = _settings(args)
    cfg = pipeline_config(values, seed=args.seed)
    out = _require_out(args)
    records = read_manifest(args.manifest)
    if not any("refined" in r for r in records):
        for r in records:
            if r["category"] != "uncertain":
                r["refined"] = r["category"]
    pipeline.annotate_split(records, cfg.split_ratio, cfg.seed)
    write_manifest(records, out)
    print(pipeline.report(records))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    values = _settings(args)
    cfg = pipeline_config(values, seed=args.seed)
    out = _require_out(args)
    if bool(args.input) == bool(args.synth):
        raise UsageError("give exactly one of --input DIR or --synth N")
    source = args.input
    if args.synth:
        synth_dir = Path(args.synth_dir or out.with_suffix("").as_posix() + "_images")
        write_corpus(synth_corpus(args.synth, seed=cfg.seed, size=(args.size, args.size)), synth_dir)
        source = synth_dir
    try:
        result = pipeline.pipeline_run(source, cfg)
    except PipelineError as exc:
        partial = out.with_name(out.name + ".partial")
        write_manifest(exc.records, partial)
        atomic_write(out.with_name(out.name + ".failed"),
                     json.dumps({"stage": exc.stage, "error": str(exc.__cause__)}, sort_keys=True) + "\n")
        print(f"pipeline failed in stage {exc.stage}: {exc.__cause__}; partial manifest at {partial}",
              file=sys.stderr)
        return EXIT_RUNTIME
    write_manifest(result.records, out)
    if result.quantizer is not None:
        result.quantizer.save(args.model_out or out.with_name(out.stem + ".quantizer.json"))
    summary_path = args.summary_out or out.with_name(out.stem + ".summary.json")
    atomic_write(summary_path, json.dumps(result.summary, indent=2, sort_keys=True) + "\n")
    print(pipeline.report(result.records))
    for id_, err in result.errors.items():
        print(f"skipped {id_}: {err}", file=sys.stderr)
    return EXIT_OK


def _gan_config(args, values) -> TrainConfig:
    kw = {}
    for key in ("steps", "batch", "lr", "momentum", "hidden"):
        val = getattr(args, f"gan_{key}", None)
        if val is None:
            val = values.get(f"gan_{key}")
        if val is not None:
            kw[key] = type(getattr(TrainConfig, key))(val)
    seed = args.seed if args.seed is not None else values.get("seed")
    if seed is not None:
        kw["seed"] = int(seed)
    if getattr(args, "rp_source", None):
        kw["rp_source"] = args.rp_source
    if getattr(args, "rp_fixed", None):
        kw["rp_fixed"] = tuple(float(x) for x in args.rp_fixed.split(","))
    return TrainConfig(**kw)


def cmd_train_gan(args) -> int:
    values = read_config(args.config) if args.config else {}
    cfg = _gan_config(args, values)
    out = _require_out(args)
    shape = cfg.image_shape
    rp = None
    quantizer = SoftmaxQuantizer.load(args.model) if args.model else None
    dark_illum = bright_illum = None
    test = None
    if args.synth:
        dark_c = synth_corpus(args.synth, seed=cfg.seed, illumination=(0.0, 0.15), prefix="dark")
        bright_c = synth_corpus(args.synth, seed=cfg.seed + 1, illumination=(0.7, 1.0), prefix="bright")
        test_c = synth_corpus(max(args.synth // 4, 1), seed=cfg.seed + 2, illumination=(0.0, 0.15), prefix="test")
        dark, bright, test = dark_c.images, bright_c.images, as_stack(test_c.images)
        dark_illum, bright_illum = dark_c.illumination, bright_c.illumination
        if cfg.rp_source == "quantizer" and quantizer is None:
            ref = synth_corpus(400, seed=cfg.seed + 3)
            result = pipeline.pipeline_run(ref, pipeline.PipelineConfig(recipe=ablation.ABLATION_RECIPE))
            quantizer = result.quantizer
    elif args.manifest:
        records = read_manifest(args.manifest)
        dark_r = [r for r in records if r.get("refined", r["category"]) == "dark" and r.get("split", "train") == "train"]
        bright_r = [r for r in records if r.get("refined", r["category"]) == "bright"]
        test_r = [r for r in records if r.get("refined") == "dark" and r.get("split") == "test"]
        dark = [_load_luma(r["path"], shape) for r in dark_r]
        bright = [_load_luma(r["path"], shape) for r in bright_r]
        test = as_stack([_load_luma(r["path"], shape) for r in test_r], shape) if test_r else None
        if cfg.rp_source == "quantizer" and quantizer is None:
            if not all("rp_d" in r for r in dark_r + bright_r):
                raise UsageError("manifest lacks rp columns; pass --model or run `quantify` first")
            rp = (np.array([r["rp_d"] for r in dark_r]), np.array([r["rp_b"] for r in bright_r]))
        if cfg.rp_source == "oracle-labels":
            if not args.truth:
                raise UsageError("--rp-source oracle-labels needs --truth truth.jsonl")
            truth = {json.loads(l)["id"]: json.loads(l)["illumination"]
                     for l in Path(args.truth).read_text().splitlines() if l.strip()}
            dark_illum = [truth[r["id"]] for r in dark_r]
            bright_illum = [truth[r["id"]] for r in bright_r]
    else:
        raise UsageError("give --manifest M or --synth N")

    result = train_dru_gan(dark, bright, quantizer, cfg, dark_illum, bright_illum, rp=rp)
    result.state.save(out)
    trace_path = args.trace or out.with_name(out.stem + ".trace.csv")
    write_trace_csv(result.trace, trace_path)
    print(f"trained {cfg.steps} steps; checkpoint {out}; trace {trace_path}")
    if test is not None and len(test):
        enh = enhance_stack(result.generator, test)
        print(f"held-out dark mean {test.mean():.2f} -> enhanced mean {enh.mean():.2f}")
    return EXIT_OK


def cmd_enhance(args) -> int:
    out = _require_out(args)
    state = GanState.load(args.checkpoint)
    gen = state.generator
    shape = gen.image_shape
    inputs = [Path(p) for p in args.images]
    if len(inputs) > 1 or out.is_dir() or not out.suffix:
        out.mkdir(parents=True, exist_ok=True)
        targets = [out / (p.stem + "_enhanced.png") for p in inputs]
    else:
        targets = [out]
    for src, dst in zip(inputs, targets):
        img = load_image(src)
        if args.resize and shape is not None:
            img = resize(img, shape[1], shape[0])
        enhanced = enhance(gen, img)
        save_png(enhanced, dst)
        print(f"{src}: mean {img.mean():.2f} -> {enhanced.mean():.2f} ({dst})")
    return EXIT_OK


def cmd_ablate(args) -> int:
    values = read_config(args.config) if args.config else {}
    gan = _gan_config(args, values)
    base = args.seed if args.seed is not None else 0
    cfg = ablation.AblationConfig(
        kind=args.kind, seeds=tuple(range(base, base + args.seeds)), noise_rate=args.noise_rate,
        pool=args.pool, gan=gan,
    )
    report = ablation.ablate(cfg)
    if args.out:
        atomic_write(args.out, json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(ablation.format_report(report))
    return EXIT_OK


def cmd_report(args) -> int:
    records = read_manifest(args.manifest)
    if args.json:
        print(json.dumps(pipeline.summarize(records), indent=2, sort_keys=True))
    else:
        print(pipeline.report(records))
    return EXIT_OK


# --- parser --------------------------------------------------------------------

def _global_flags(default):
    # Subcommands reuse these with SUPPRESS so an absent flag keeps the top-level value.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=default, help="master RNG seed")
    common.add_argument("--config", default=default, help="plain key = value config file")
    common.add_argument("--out", default=default, help="output path")
    common.add_argument("-v", "--verbose", action="store_true", default=default if default is not None else False)
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(argparse.SUPPRESS)

    qab_opts = argparse.ArgumentParser(add_help=False)
    qab_opts.add_argument("--b-low", dest="b_low", type=float, default=None, help="dark threshold (default 50)")
    qab_opts.add_argument("--b-high", dest="b_high", type=float, default=None, help="bright threshold (default 150)")

    recipe_opts = argparse.ArgumentParser(add_help=False)
    recipe_opts.add_argument("--epochs", type=int, default=None)
    recipe_opts.add_argument("--lr", type=float, default=None)
    recipe_opts.add_argument("--momentum", type=float, default=None)
    recipe_opts.add_argument("--batch", type=int, default=None)

    gan_opts = argparse.ArgumentParser(add_help=False)
    gan_opts.add_argument("--steps", dest="gan_steps", type=int, default=None)
    gan_opts.add_argument("--gan-batch", dest="gan_batch", type=int, default=None)
    gan_opts.add_argument("--gan-lr", dest="gan_lr", type=float, default=None)
    gan_opts.add_argument("--gan-momentum", dest="gan_momentum", type=float, default=None)
    gan_opts.add_argument("--hidden", dest="gan_hidden", type=int, default=None)

    parser = argparse.ArgumentParser(prog="dru", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter,
                                     parents=[_global_flags(None)])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic PNG corpus + truth.jsonl")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--illum-low", type=float, default=0.0)
    p.add_argument("--illum-high", type=float, default=1.0)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--prefix", default="scene")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("partition", parents=[common, qab_opts], help="QAB dark/bright/uncertain manifest")
    p.add_argument("input", help="image directory")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("train-quantizer", parents=[common, recipe_opts], help="fit the softmax quantizer")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_train_quantizer)

    p = sub.add_parser("quantify", parents=[common], help="append rp_d/rp_b to a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_quantify)

    p = sub.add_parser("refine", parents=[common], help="route uncertain images with the quantizer")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--confidence-floor", dest="confidence_floor", type=float, default=None)
    p.add_argument("--review-out", default=None, help="write the low-confidence review list here")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("split", parents=[common], help="seeded train/test split of the dark set")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split-ratio", dest="split_ratio", type=float, default=None)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("pipeline", parents=[common, qab_opts, recipe_opts], help="run all curation stages")
    p.add_argument("--input", default=None, help="image directory")
    p.add_argument("--synth", type=int, default=None, help="generate N synthetic scenes instead")
    p.add_argument("--synth-dir", default=None)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--confidence-floor", dest="confidence_floor", type=float, default=None)
    p.add_argument("--split-ratio", dest="split_ratio", type=float, default=None)
    p.add_argument("--model-out", default=None)
    p.add_argument("--summary-out", default=None)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("train-gan", parents=[common, gan_opts], help="train the toy DRU-GAN")
    p.add_argument("--manifest", default=None)
    p.add_argument("--synth", type=int, default=None, help="use N dark + N bright synthetic scenes")
    p.add_argument("--model", default=None, help="quantizer JSON")
    p.add_argument("--rp-source", choices=("quantizer", "fixed", "oracle-labels", "unweighted"), default=None)
    p.add_argument("--rp-fixed", default=None, help="rp_d,rp_b for --rp-source fixed")
    p.add_argument("--truth", default=None, help="truth.jsonl for oracle-labels")
    p.add_argument("--trace", default=None, help="CSV trace path")
    p.set_defaults(func=cmd_train_gan)

    p = sub.add_parser("enhance", parents=[common], help="enhance images with a trained generator")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("images", nargs="+")
    p.add_argument("--resize", action="store_true", help="resize inputs to the generator size first")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("ablate", parents=[common, gan_opts], help="DRU vs Vanilla ablation report")
    p.add_argument("--kind", choices=sorted(ablation.KINDS), default="noise")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds")
    p.add_argument("--noise-rate", type=float, default=0.3)
    p.add_argument("--pool", type=int, default=600)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", parents=[common], help="summarize a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ManifestError, UsageError, ValueError, KeyError) as exc:
        # Validation: bad input data, flags or config.
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TrainingError, TrainingDivergedError, FloatingPointError, OSError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
