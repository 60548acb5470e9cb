"""Command-line interface.

Subcommands: synth, train, infer, cv, bench, eval. Exit codes: 0 success,
1 usage error, 2 data/format error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .dataset import ManifestEntry, load_samples, write_manifest
from .detector import DEFAULT_THRESHOLD, DetectorParams
from .errors import PatchScanError
from .features import FEATURE_KINDS, KIND_EXTERNAL, load_embeddings
from .image_io import read_mask, read_rgb, write_mask, write_png
from .model_file import load_model
from .pipeline import (
    PipelineConfig,
    benchmark,
    cross_validate,
    draw_overlay,
    evaluate,
    format_metrics_table,
    infer,
    load_defect_map,
    save_defect_map,
    train_pipeline,
    truth_from_mask,
    write_metrics_csv,
)
from .svm import TrainConfig
from .synth import SynthConfig, generate


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageError(message)


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master random seed")
    p.add_argument("--patch-size", type=int, default=65, help="square patch side in pixels")
    p.add_argument("--feature", choices=FEATURE_KINDS, default="lbp", help="patch descriptor")
    p.add_argument("--embeddings", metavar="MANIFEST", help="embedding manifest for --feature external")
    p.add_argument("--mode", choices=("washed", "unwashed"), default="washed")
    p.add_argument("--iv-threshold", type=float, default=25.0, help="intensity-variation expansion threshold")
    p.add_argument("--surf-threshold", type=float, default=DEFAULT_THRESHOLD, help="detector response threshold")
    p.add_argument("--sigma", type=float, default=1.5, help="unwashed-mode Gaussian sigma")
    p.add_argument(
        "--expand",
        choices=("auto", "on", "off"),
        default="auto",
        help="neighbor expansion post-processing (auto: only in unwashed mode)",
    )
    p.add_argument("--svm-c", type=float, default=1.0, help="SVM regularization trade-off")


def build_parser() -> _Parser:
    parser = _Parser(prog="patchscan", description="Patch-based surface defect detection")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset with ground truth")
    _common_flags(p)
    p.add_argument("--images", type=int, default=30, help="number of images to generate")
    p.add_argument("--out", required=True, help="output directory (gets images/, masks/, manifest.tsv)")
    p.add_argument("--width", type=int, default=1024)
    p.add_argument("--height", type=int, default=1024)
    p.add_argument("--defects", type=int, default=4, help="defects per image")
    p.add_argument("--rivet-spacing", type=int, default=96)
    p.add_argument("--seams", type=int, default=3)
    p.add_argument("--dirt", type=float, default=0.0, help="dirt speckle level in [0, 1]")

    p = sub.add_parser("train", help="train a model from a manifest")
    _common_flags(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="model artifact path")

    p = sub.add_parser("infer", help="run defect detection on one image")
    _common_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out-map", required=True, help="defect map JSON output")
    p.add_argument("--overlay", help="optional overlay PNG output")
    p.add_argument("--no-gate", action="store_true", help="classify every patch (skip ROI gating)")

    p = sub.add_parser("cv", help="grouped k-fold cross-validation over a manifest")
    _common_flags(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out-csv", help="per-fold metrics CSV")

    p = sub.add_parser("bench", help="time gated vs full-grid inference on one image")
    _common_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", help="timing JSON output")

    p = sub.add_parser("eval", help="score a defect-map JSON against a mask")
    _common_flags(p)
    p.add_argument("--map", required=True, dest="map_path")
    p.add_argument("--mask", required=True)

    return parser


def _pipeline_config(args, feature: str | None = None, patch_size: int | None = None) -> PipelineConfig:
    return PipelineConfig(
        patch_size=patch_size if patch_size is not None else args.patch_size,
        feature=feature if feature is not None else args.feature,
        mode=args.mode,
        sigma=args.sigma,
        detector=DetectorParams(threshold=args.surf_threshold),
        iv_threshold=args.iv_threshold,
        svm=TrainConfig(c=args.svm_c, seed=args.seed),
        seed=args.seed,
        expand={"auto": None, "on": True, "off": False}[args.expand],
    )


def _load_embeddings_arg(args, feature: str):
    if feature != KIND_EXTERNAL:
        return None
    if not args.embeddings:
        raise _UsageError("--feature external requires --embeddings <manifest>")
    return load_embeddings(args.embeddings)


def _cmd_synth(args) -> int:
    out = Path(args.out)
    base = SynthConfig(
        width=args.width,
        height=args.height,
        rivet_spacing=args.rivet_spacing,
        seam_count=args.seams,
        defect_count=args.defects,
        dirt_level=args.dirt,
        seed=args.seed,
    )
    rng = np.random.default_rng(args.seed)
    child_seeds = rng.integers(0, 2**63 - 1, size=args.images)
    entries = []
    for i in range(args.images):
        sample = generate(replace(base, seed=int(child_seeds[i])), sample_id=f"img_{i:03d}")
        image_rel = f"images/{sample.id}.png"
        mask_rel = f"masks/{sample.id}.png"
        write_png(out / image_rel, sample.image)
        write_mask(out / mask_rel, sample.mask)
        entries.append(ManifestEntry(id=sample.id, image_path=image_rel, mask_path=mask_rel))
    write_manifest(entries, out / "manifest.tsv")
    print(f"wrote {args.images} samples to {out} (manifest.tsv)")
    return 0


def _cmd_train(args) -> int:
    cfg = _pipeline_config(args)
    embeddings = _load_embeddings_arg(args, cfg.feature)
    samples = load_samples(args.manifest)
    model = train_pipeline(samples, cfg, args.out, embeddings)
    r = model.report
    print(
        f"trained {cfg.feature} model on {len(samples)} images -> {args.out} "
        f"(epochs={r.epochs}, gap={r.duality_gap:.2e}, stop={r.stopped_by})"
    )
    return 0


def _cmd_infer(args) -> int:
    model, header = load_model(args.model)
    cfg = _pipeline_config(args, feature=model.feature_kind, patch_size=int(header["patch_size"]))
    embeddings = _load_embeddings_arg(args, cfg.feature)
    image = read_rgb(args.image)
    image_id = Path(args.image).stem
    dmap = infer(model, image, cfg, image_id=image_id, embeddings=embeddings, gate=not args.no_gate)
    save_defect_map(dmap, args.out_map)
    if args.overlay:
        write_png(args.overlay, draw_overlay(image, dmap))
    n_defect = len(dmap.defect_anchors())
    print(f"{image_id}: {n_defect} defect patches of {len(dmap.entries)} -> {args.out_map}")
    return 0


def _cmd_cv(args) -> int:
    cfg = _pipeline_config(args)
    embeddings = _load_embeddings_arg(args, cfg.feature)
    samples = load_samples(args.manifest)
    result = cross_validate(samples, args.k, cfg, embeddings)
    print(format_metrics_table(result))
    if args.out_csv:
        write_metrics_csv(result, args.out_csv)
        print(f"wrote {args.out_csv}")
    return 0


def _cmd_bench(args) -> int:
    model, header = load_model(args.model)
    cfg = _pipeline_config(args, feature=model.feature_kind, patch_size=int(header["patch_size"]))
    embeddings = _load_embeddings_arg(args, cfg.feature)
    image = read_rgb(args.image)
    report = benchmark(model, image, cfg, image_id=Path(args.image).stem, embeddings=embeddings)
    payload = json.dumps(report.to_json(), indent=2, sort_keys=True)
    print(payload)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
    return 0


def _cmd_eval(args) -> int:
    mask = read_mask(args.mask)
    h, w = mask.shape
    dmap = load_defect_map(args.map_path, w, h)
    truth = truth_from_mask(mask, dmap.grid)
    m = evaluate(dmap, truth)
    print(
        json.dumps(
            {
                "tp": m.tp,
                "fp": m.fp,
                "tn": m.tn,
                "fn": m.fn,
                "sensitivity": m.sensitivity,
                "specificity": m.specificity,
                "accuracy": m.accuracy,
                "degenerate": list(m.degenerate),
            },
            indent=2,
            sort_keys=True,
        )
    )
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "cv": _cmd_cv,
    "bench": _cmd_bench,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        return _COMMANDS[args.command](args)
    except _UsageError as e:
        if str(e) and "--embeddings" in str(e):
            print(f"patchscan: error: {e}", file=sys.stderr)
        return 1
    except (PatchScanError, OSError) as e:
        print(f"patchscan: error: {e}", file=sys.stderr)
        return 2


def entry() -> None:  # console_scripts hook
    sys.exit(main())


if __name__ == "__main__":
    entry()
