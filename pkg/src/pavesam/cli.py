"""Command line interface: pavesam {ingest|train|eval|convert|profile|serve}.

Each subcommand is a thin shell over the corresponding module. Exit codes:
0 success, 1 failure (structured error on stderr), 2 usage error. Every
training-config field can be set in a JSON config file and overridden by
the CLI flag of the same name; --seed appears wherever randomness exists.

Environment variables (overridden by flags): PAVESAM_CACHE_BUDGET (bytes),
PAVESAM_DEVICE (cpu/cuda).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import dataio, evaluation, profiler, service, training
from .model import load_backbone, surrogate_config
from .training import TrainConfig


def _env_cache_budget() -> int:
    return int(os.environ.get("PAVESAM_CACHE_BUDGET", service.DEFAULT_CACHE_BUDGET))


def _env_device() -> str:
    return os.environ.get("PAVESAM_DEVICE", "cpu")


def _load_bundle(args):
    checkpoint = getattr(args, "checkpoint", None) or getattr(args, "backbone", None)
    if checkpoint is None:
        raise ValueError("need --checkpoint or --backbone")
    config = None
    if checkpoint == "surrogate":
        config = surrogate_config(
            input_size=args.input_size, downsample_factor=args.downsample
        )
    bundle = load_backbone(checkpoint, config, seed=getattr(args, "seed", 0) or 0)
    device = getattr(args, "device", None) or _env_device()
    if device != "cpu":
        bundle.to_device(device)
    return bundle


def _add_backbone_flags(parser, with_checkpoint=True):
    if with_checkpoint:
        parser.add_argument("--checkpoint", help="checkpoint path or 'surrogate'")
    parser.add_argument("--backbone", help="alias for --checkpoint (e.g. 'surrogate')")
    parser.add_argument("--input-size", type=int, default=1024,
                        help="model input size for the surrogate")
    parser.add_argument("--downsample", type=int, default=16,
                        help="surrogate encoder downsample factor")
    parser.add_argument("--device", default=None, help="cpu or cuda (env PAVESAM_DEVICE)")


def cmd_ingest(args) -> int:
    if args.crack500:
        manifest = dataio.load_crack500(args.crack500)
    elif args.manifest:
        manifest = dataio.load_manifest(args.manifest)
    else:
        raise ValueError("need --manifest or --crack500")
    if args.resplit is not None:
        manifest = dataio.split_dataset(manifest, args.resplit, args.seed)
    if args.out:
        dataio.save_manifest(manifest, args.out)
    print(json.dumps({
        "images": len(manifest),
        "splits": manifest.split_counts(),
        "class_counts": manifest.class_counts(),
        "source_kind": manifest.source_kind,
    }, sort_keys=True, indent=1))
    return 0


def _train_config(args) -> TrainConfig:
    config = training.load_train_config(args.config) if args.config else TrainConfig()
    overrides = {}
    for name in ("epochs", "learning_rate", "loss", "seed", "batch_images",
                 "checkpoint_every"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    tversky = {}
    for name in ("alpha", "beta", "gamma"):
        value = getattr(args, f"tversky_{name}")
        if value is not None:
            tversky[name] = value
    if tversky:
        overrides["tversky"] = replace(config.tversky, **tversky)
    return replace(config, **overrides) if overrides else config


def cmd_train(args) -> int:
    config = _train_config(args)
    manifest = dataio.load_manifest(args.manifest)
    bundle = _load_bundle(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    history_path = out_dir / "history.jsonl"
    if args.resume is None:
        for stale in (history_path, history_path.with_suffix(".timing.jsonl")):
            stale.unlink(missing_ok=True)
    result = training.finetune(
        manifest, bundle, config,
        out_dir=out_dir, history_path=history_path, resume_from=args.resume,
    )
    print(json.dumps({
        "epochs": config.epochs,
        "best_train_dsc": result.best_metric,
        "final_checkpoint": str(result.final_path),
        "history": str(history_path),
    }, sort_keys=True, indent=1))
    return 0


def cmd_eval(args) -> int:
    bundle = _load_bundle(args)
    manifest = dataio.load_manifest(args.manifest)
    report = evaluation.evaluate_dataset(bundle, manifest, args.split, args.threshold)
    paths = evaluation.write_report(report, args.out_dir)
    print(json.dumps({
        "instances": len(report.per_instance),
        "errors": len(report.errors),
        "aggregate": report.aggregate,
        "outputs": [str(p) for p in paths],
    }, sort_keys=True, indent=1))
    return 1 if report.errors else 0


def cmd_convert(args) -> int:
    manifest = dataio.load_manifest(args.manifest)
    bundle = _load_bundle(args)
    summary = service.convert_dataset(
        manifest, bundle, args.out_dir, threshold=args.threshold, min_iou=args.min_iou
    )
    print(json.dumps(summary.to_dict(), sort_keys=True, indent=1))
    return 0 if summary.ok else 1


def cmd_profile(args) -> int:
    bundle = _load_bundle(args)
    report = profiler.profile(bundle, measure=not args.no_fps, iters=args.iters)
    text = profiler.render_complexity(report)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "complexity.json").write_text(
            json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n"
        )
        (out / "complexity.txt").write_text(text)
    print(text, end="")
    return 0


def cmd_serve(args) -> int:
    service.serve(
        checkpoint=args.checkpoint,
        host=args.host,
        port=args.port,
        cache_budget=args.cache_budget if args.cache_budget is not None else _env_cache_budget(),
        max_pixels=args.max_pixels,
        device=args.device or _env_device(),
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pavesam")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load/validate a dataset and report counts")
    p.add_argument("--manifest")
    p.add_argument("--crack500", help="root of a Crack500-layout directory")
    p.add_argument("--resplit", type=float, default=None,
                   help="reassign splits with this train fraction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the normalized manifest here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="decoder-only fine-tuning")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", help="JSON training config file")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--resume", help="resume from a saved training state")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--loss", choices=training.LOSS_CHOICES, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--batch-images", dest="batch_images", type=int, default=None)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int, default=None)
    p.add_argument("--tversky-alpha", dest="tversky_alpha", type=float, default=None)
    p.add_argument("--tversky-beta", dest="tversky_beta", type=float, default=None)
    p.add_argument("--tversky-gamma", dest="tversky_gamma", type=float, default=None)
    _add_backbone_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metric report over a split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_backbone_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("convert", help="box-only manifest -> mask dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--min-iou", dest="min_iou", type=float, default=None,
                   help="drop instances whose IoU-head score is below this")
    p.add_argument("--seed", type=int, default=0)
    _add_backbone_flags(p)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("profile", help="parameters, GFLOPs, model size, FPS")
    p.add_argument("--out-dir")
    p.add_argument("--no-fps", action="store_true", help="skip timing measurements")
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    _add_backbone_flags(p)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("serve", help="HTTP inference service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--cache-budget", dest="cache_budget", type=int, default=None,
                   help="embedding cache budget in bytes (env PAVESAM_CACHE_BUDGET)")
    p.add_argument("--max-pixels", dest="max_pixels", type=int,
                   default=service.DEFAULT_MAX_PIXELS)
    p.add_argument("--device", default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(json.dumps({"error": {"code": "failed", "message": str(exc)}}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
