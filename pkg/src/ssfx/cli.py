"""Command-line interface.

One executable, one subcommand per run: extract, synth, train, eval,
ablate, gradcheck, bench. Every flag can also be supplied through an
environment variable named SSFX_<FLAG> (uppercased, dashes to underscores,
e.g. ``SSFX_WEIGHT_DECAY``); explicit flags win over the environment.

Exit codes: 0 success, 1 data or runtime error, 2 usage error. Commands
that write outputs also write a ``run_record.json`` reproducibility record
(resolved configuration plus package version) beside them.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    benchmark_spec,
    generate_synthetic,
    load_dataset,
    load_manifest,
    split_information_spec,
)
from .evaluation import (
    evaluate,
    extraction_benchmark,
    measure_complexity,
    run_ablation,
)
from .features import FeatureSubset, extract_ssf
from .io import FormatError, load_mask, write_feature_csv, write_feature_matrix
from .mask import SegmentationMask, ValidationError
from .models import (
    FusionConfig,
    TrainPlan,
    build_fusion_classifier,
    build_global_classifier,
    build_semantic_classifier,
    load_model,
    train,
)
from .nn import CheckpointError, CorruptedGradients, grad_check, load_checkpoint, save_checkpoint

ENV_PREFIX = "SSFX_"

_STAGE_NAMES = {"semantic": "semantic_only", "step1": "step1_global", "step2": "step2_fusion"}


class _Parser(argparse.ArgumentParser):
    """argparse with environment-variable defaults for every option."""

    def add_argument(self, *names, **kwargs):  # type: ignore[override]
        option = next((n for n in names if n.startswith("--")), None)
        if option is not None and kwargs.get("action") in (None, "store", "store_true"):
            env_name = ENV_PREFIX + option.lstrip("-").upper().replace("-", "_")
            raw = os.environ.get(env_name)
            if raw is not None:
                if kwargs.get("action") == "store_true":
                    kwargs["default"] = raw.strip().lower() in ("1", "true", "yes", "on")
                else:
                    cast = kwargs.get("type", str)
                    try:
                        kwargs["default"] = cast(raw)
                    except (TypeError, ValueError, argparse.ArgumentTypeError):
                        self.error(f"environment variable {env_name}={raw!r} is not a valid "
                                   f"value for {option}")
                    choices = kwargs.get("choices")
                    if choices is not None and kwargs["default"] not in choices:
                        self.error(f"environment variable {env_name}={raw!r} is not one of "
                                   f"{', '.join(map(str, choices))}")
                kwargs.pop("required", None)
        return super().add_argument(*names, **kwargs)


def _subset(text: str) -> FeatureSubset:
    try:
        return FeatureSubset.parse(text)
    except ValidationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="ssfx",
        description="Per-category layout statistics from segmentation masks, "
                    "plus small classifier heads trained on them.",
        epilog=f"Every flag may be set via the environment as {ENV_PREFIX}<FLAG> "
               f"(e.g. {ENV_PREFIX}SEED=7); explicit flags take precedence.",
    )
    parser.add_argument("--version", action="version", version=f"ssfx {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", help="extract feature matrices from masks")
    p.add_argument("masks", nargs="*", help="mask files (PGM or SSFM container)")
    p.add_argument("--manifest", type=Path, help="extract every mask in a dataset manifest")
    p.add_argument("--L", type=int, dest="num_categories",
                   help="number of categories (required for bare mask files)")
    p.add_argument("--void", type=int, default=0, help="void sentinel value (default 0)")
    p.add_argument("--no-void", action="store_true", help="forbid unlabeled pixels")
    p.add_argument("--format", choices=("csv", "bin"), default="csv", help="output format")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--threads", type=int, default=1, help="parallel workers for batch extraction")

    p = sub.add_parser("synth", help="generate a deterministic synthetic dataset")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--variant", choices=("benchmark", "split-info"), default="benchmark",
                   help="benchmark: 6 separable classes; split-info: class identity "
                        "split between mask layout and global vector")
    p.add_argument("--samples", type=int, default=100, help="samples per class")
    p.add_argument("--noise", type=float, default=0.1, help="jitter and pixel noise level in [0, 1)")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--global-width", type=int, default=16, help="global feature vector width")
    p.add_argument("--global-sigma", type=float, default=0.25, help="global vector noise sigma")

    p = sub.add_parser("train", help="train a classifier")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--stage", choices=tuple(_STAGE_NAMES), default="semantic",
                   help="semantic: head over features; step1: global branch only; "
                        "step2: fusion with a frozen step-1 branch")
    p.add_argument("--head", choices=("cnn", "nn", "pc1d"), default="cnn")
    p.add_argument("--subset", type=_subset, default=FeatureSubset(),
                   help="feature groups, e.g. pc,ap,sd")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--from-checkpoint", type=Path, help="step-1 checkpoint to build step 2 on")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("eval", help="evaluate a trained checkpoint")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", type=Path, help="directory for report.json and confusion.csv")

    p = sub.add_parser("ablate", help="train the full feature-subset x head grid")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", type=Path, help="directory for ablation.json")

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--model", choices=("ssf-cnn", "ssf-nn", "pc1d", "fusion"), default="ssf-cnn")
    p.add_argument("--L", type=int, dest="num_categories", default=5)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample-per-block", type=int, default=64,
                   help="entries checked per parameter block; 0 checks everything")
    p.add_argument("--negative-control", action="store_true",
                   help="corrupt one gradient block and require the check to fail")

    p = sub.add_parser("bench", help="complexity and throughput measurements")
    p.add_argument("--model", choices=("ssf-cnn", "ssf-nn"), default="ssf-cnn")
    p.add_argument("--L", type=int, dest="num_categories", default=40)
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--warmup", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--extract", action="store_true",
                   help="also time feature extraction on a 224x224 mask")
    p.add_argument("--runs", type=int, default=1000, help="extraction timing repetitions")
    p.add_argument("--out", type=Path, help="directory for bench.json")

    return parser


def _record(out_dir: Path, command: str, args: argparse.Namespace) -> None:
    config = {}
    for key, value in sorted(vars(args).items()):
        if key == "command":
            continue
        if isinstance(value, Path):
            value = str(value)
        elif isinstance(value, FeatureSubset):
            value = value.spec_string()
        config[key] = value
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {"command": command, "config": config, "version": __version__}
    (out_dir / "run_record.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def cmd_extract(args: argparse.Namespace) -> int:
    void = None if args.no_void else args.void
    jobs: list[tuple[str, Path, int, int | None]] = []  # (output stem, path, L, void)
    if args.manifest is not None:
        manifest = load_manifest(args.manifest)
        for e in manifest.entries:
            jobs.append((e.id, manifest.root / e.mask_path,
                         manifest.num_categories, manifest.void_value))
    for raw in args.masks:
        if args.num_categories is None:
            raise UsageError("--L is required when extracting bare mask files")
        path = Path(raw)
        jobs.append((path.stem, path, args.num_categories, void))
    if not jobs:
        raise UsageError("nothing to extract: pass mask files or --manifest")

    args.out.mkdir(parents=True, exist_ok=True)

    def run_one(job: tuple[str, Path, int, int | None]) -> tuple[str, str | None]:
        stem, path, L, void_value = job
        try:
            matrix = extract_ssf(load_mask(path, L, void_value))
            if args.format == "csv":
                write_feature_csv(args.out / f"{stem}.csv", matrix)
            else:
                write_feature_matrix(args.out / f"{stem}.ssff", matrix.values)
            return stem, None
        except (ValidationError, FormatError, FileNotFoundError, OSError) as exc:
            return stem, str(exc)

    if args.threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(run_one, jobs))
    else:
        results = [run_one(j) for j in jobs]

    _record(args.out, "extract", args)
    failures = [(stem, err) for stem, err in results if err is not None]
    for stem, err in failures:
        print(f"error: {stem}: {err}", file=sys.stderr)
    print(f"extracted {len(results) - len(failures)} of {len(results)} masks -> {args.out}")
    if failures:
        print(f"{len(failures)} mask(s) failed", file=sys.stderr)
        return 1
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    make = benchmark_spec if args.variant == "benchmark" else split_information_spec
    spec = make(samples_per_class=args.samples, noise=args.noise, seed=args.seed,
                height=args.height, width=args.width, global_width=args.global_width,
                global_sigma=args.global_sigma)
    manifest_path = generate_synthetic(spec, args.out)
    _record(args.out, "synth", args)
    print(f"wrote {spec.num_classes * spec.samples_per_class} samples -> {manifest_path}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    stage = _STAGE_NAMES[args.stage]
    if stage == "step2_fusion" and args.from_checkpoint is None:
        raise UsageError("--stage step2 requires --from-checkpoint with the step-1 model")

    manifest = load_manifest(args.manifest)
    data = load_dataset(manifest, threads=args.threads)
    rng = np.random.default_rng(args.seed)
    frozen: tuple[str, ...] = ()

    if stage == "semantic_only":
        model = build_semantic_classifier(args.head, args.subset, data.num_categories,
                                          data.num_classes, rng)
    elif stage == "step1_global":
        if data.global_vecs is None:
            raise ValidationError("manifest has no global feature vectors; step 1 needs them")
        cfg = FusionConfig(global_input_width=data.global_vecs.shape[1],
                           num_classes=data.num_classes)
        model = build_global_classifier(cfg, rng)
    else:
        if data.global_vecs is None:
            raise ValidationError("manifest has no global feature vectors; step 2 needs them")
        base = load_checkpoint(args.from_checkpoint)
        cfg = FusionConfig(global_input_width=data.global_vecs.shape[1],
                           num_classes=data.num_classes,
                           global_width=base.descriptor.get("global_width", 1024))
        model = build_fusion_classifier(cfg, args.head, args.subset, data.num_categories,
                                        rng, base=base)
        frozen = model.global_param_names()

    plan = TrainPlan(stage=stage, epochs=args.epochs, batch_size=args.batch,
                     learning_rate=args.lr, weight_decay=args.weight_decay,
                     seed=args.seed, frozen=frozen)
    ckpt, metrics = train(plan, data, model)

    args.out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, args.out / "model.ssfc")
    with open(args.out / "metrics.jsonl", "w") as fh:
        for m in metrics:
            fh.write(json.dumps(m, sort_keys=True) + "\n")
    _record(args.out, "train", args)
    last = ckpt.metadata["final_metrics"]
    print(f"trained {stage} for {args.epochs} epochs -> {args.out / 'model.ssfc'}")
    print(f"final train acc {last['train']['accuracy']:.4f}, "
          f"test acc {last['test']['accuracy']:.4f}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = load_model(ckpt)
    manifest = load_manifest(args.manifest)
    data = load_dataset(manifest, threads=args.threads)
    report = evaluate(model, data, args.split)
    print(report.to_text())
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
        (args.out / "confusion.csv").write_text(report.confusion_csv())
        _record(args.out, "eval", args)
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    data = load_dataset(manifest, threads=args.threads)
    grid = run_ablation(data, epochs=args.epochs, batch_size=args.batch,
                        learning_rate=args.lr, weight_decay=args.weight_decay,
                        seed=args.seed)
    print(grid.to_text())
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "ablation.json").write_text(json.dumps(grid.to_dict(), indent=2) + "\n")
        _record(args.out, "ablate", args)
    failed = [c for c in grid.cells if c.accuracy is None]
    if failed:
        for c in failed:
            print(f"error: cell ({c.subset_label}, {c.head}): {c.error}", file=sys.stderr)
        return 1
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed)
    L, C, B = args.num_categories, args.classes, args.batch
    subset = FeatureSubset(pc=True, ap=False, sd=False) if args.model == "pc1d" else FeatureSubset()
    if args.model == "fusion":
        cfg = FusionConfig(global_input_width=8, num_classes=C, global_width=16,
                           semantic_width=32, fc3_width=16)
        model = build_fusion_classifier(cfg, "nn", subset, L, rng, hidden=(24, 32))
        global_vec = rng.standard_normal((B, 8))
    else:
        head = {"ssf-cnn": "cnn", "ssf-nn": "nn", "pc1d": "pc1d"}[args.model]
        model = build_semantic_classifier(head, subset, L, C, rng)
        global_vec = None
    ssf = rng.uniform(0.0, 1.0, size=(B, L, 5))
    labels = rng.integers(0, C, size=B)

    sample = None if args.sample_per_block == 0 else args.sample_per_block
    target = model
    if args.negative_control:
        block = model.parameters()[0][0]
        target = CorruptedGradients(model, block, scale=2.0)
    report = grad_check(target, ssf, global_vec, labels, tolerance=args.tol,
                        sample_per_block=sample, rng=np.random.default_rng(args.seed + 1))
    for line in report.summary_lines():
        print(line)
    if args.negative_control:
        if report.passed:
            print("negative control unexpectedly passed: corrupted gradients went "
                  "undetected", file=sys.stderr)
            return 1
        print("negative control failed as required")
        return 0
    return 0 if report.passed else 1


def cmd_bench(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed)
    head = "cnn" if args.model == "ssf-cnn" else "nn"
    model = build_semantic_classifier(head, FeatureSubset(), args.num_categories,
                                      args.classes, rng)
    report = measure_complexity(model, iterations=args.iters, warmup=args.warmup)
    print(f"model: {args.model} (L={args.num_categories}, k=5, classes={args.classes})")
    print(report.to_text())
    out_data = {"model": args.model, **report.to_dict()}
    if args.extract:
        grid = np.asarray(rng.integers(0, 41, size=(224, 224)), dtype=np.uint16)
        mask = SegmentationMask(data=grid, num_categories=40, void_value=0)
        median = extraction_benchmark(mask, runs=args.runs)
        print(f"extraction median ({args.runs} runs, 224x224, L=40): {median * 1e3:.4f} ms")
        out_data["extract_median_seconds"] = median
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "bench.json").write_text(json.dumps(out_data, indent=2, sort_keys=True) + "\n")
        _record(args.out, "bench", args)
    return 0


class UsageError(Exception):
    """Bad invocation that argparse could not catch on its own."""


_COMMANDS = {
    "extract": cmd_extract,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, FormatError, CheckpointError, FileNotFoundError,
            NotADirectoryError, PermissionError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
