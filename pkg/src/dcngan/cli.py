"""Command-line entry point: ``dcngan <command> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import DCNGANError

logger = logging.getLogger("dcngan")


def _load_yaml(path):
    import yaml

    return yaml.safe_load(Path(path).read_text()) or {}


def _pairs(items, what):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise SystemExit(f"--{what} expects NAME=PATH, got {item!r}")
        k, v = item.split("=", 1)
        out[k] = v
    return out


def _metric(args):
    from .evaluation import PerceptualMetric, load_channel_weights
    from .losses import FeatureExtractor, VGGLossConfig

    cfg = VGGLossConfig(weights_path=args.vgg_weights) if args.vgg_weights else VGGLossConfig(width=args.vgg_width)
    weights = load_channel_weights(args.lpips_weights) if args.lpips_weights else None
    return PerceptualMetric(FeatureExtractor(cfg), weights)


def cmd_prepare_data(args):
    from .cache import build_samples, write_cache
    from .frames import load_frames
    from .synthetic import synthetic_sequence

    qps = [int(q) for q in args.qp]
    sequences = [load_frames(p, args.width, args.height) for p in args.raw or []]
    for i in range(args.synthetic):
        sequences.append(synthetic_sequence(args.frames, args.size, args.size, seed=args.seed * 1000 + i))
    if not sequences:
        raise SystemExit("nothing to prepare: give --raw PATH and/or --synthetic N")
    degraded = {}
    for qp_str, path in _pairs(args.degraded, "degraded").items():
        if len(sequences) != 1:
            raise SystemExit("--degraded needs exactly one raw sequence")
        degraded[(0, int(qp_str))] = load_frames(path, args.width, args.height)
    samples = build_samples(sequences, qps, args.patch, args.count, args.seed, degraded,
                            stride=args.stride)
    path = write_cache(samples, args.out)
    print(f"wrote {len(samples)} samples ({args.patch}x{args.patch}, QPs {qps}) to {path}")


def cmd_train(args):
    from .training import TrainingConfig, train

    cfg = TrainingConfig.from_file(args.config) if args.config else TrainingConfig.desk()
    overrides = {k: v for k, v in (("seed", args.seed), ("steps", args.steps), ("train_data", args.data),
                                   ("out_dir", args.out), ("resume", args.resume)) if v is not None}
    for k, v in overrides.items():
        setattr(cfg, k, v)
    if args.align_backend:
        cfg.generator.align_backend = args.align_backend
    if args.vgg_weights:
        cfg.vgg.weights_path = args.vgg_weights
        cfg.vgg.width = 1.0
    path = train(cfg)
    print(f"final checkpoint: {path}")


def _check_backend(gen, args):
    if args.align_backend and args.align_backend != gen.config.align_backend:
        raise SystemExit(f"checkpoint uses the {gen.config.align_backend!r} backend, "
                         f"not {args.align_backend!r}")


def cmd_enhance(args):
    from .evaluation import enhance_video
    from .training import load_generator

    gen = load_generator(args.checkpoint)
    _check_backend(gen, args)
    metric = _metric(args) if args.reference else None
    paths, report = enhance_video(args.input, args.qp, gen, args.out, reference=args.reference,
                                  width=args.width, height=args.height, metric=metric,
                                  panel=args.panel, checkpoint_id=Path(args.checkpoint).name)
    print(f"wrote {len(paths)} frames to {Path(args.out) / 'frames'}")
    if report is not None:
        print(f"mean PSNR {report.mean_psnr:.3f} dB, mean perceptual distance {report.mean_distance:.5f}")


def cmd_evaluate(args):
    import csv

    from .cache import read_cache
    from .evaluation import compare_frames, evaluate_samples
    from .frames import load_frames
    from .training import load_generator

    metric = _metric(args)
    if args.input:
        if not args.reference:
            raise SystemExit("--input needs --reference")
        report = compare_frames(load_frames(args.input, args.width, args.height),
                                load_frames(args.reference, args.width, args.height), metric)
        report.write_csv(args.out)
        print(f"mean PSNR {report.mean_psnr:.3f} dB, mean perceptual distance {report.mean_distance:.5f}")
        return
    if not (args.data and args.checkpoint):
        raise SystemExit("evaluate needs --input/--reference or --checkpoint/--data")
    data = read_cache(args.data)
    gen = load_generator(args.checkpoint)
    _check_backend(gen, args)
    qps = [int(q) for q in args.qp] if args.qp else sorted(int(q) for q in np.unique(data.qp))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["qp", "compressed_psnr_db", "compressed_perceptual_distance",
                    "enhanced_psnr_db", "enhanced_perceptual_distance"])
        for qp in qps:
            base = evaluate_samples(None, data, qp, metric)
            enh = evaluate_samples(gen, data, qp, metric)
            w.writerow([qp, f"{base['psnr']:.4f}", f"{base['distance']:.6f}",
                        f"{enh['psnr']:.4f}", f"{enh['distance']:.6f}"])
            print(f"QP {qp}: compressed {base['psnr']:.2f} dB / {base['distance']:.5f}  "
                  f"enhanced {enh['psnr']:.2f} dB / {enh['distance']:.5f}")


def cmd_qp_study(args):
    from .cache import read_cache
    from .errors import ConfigurationError
    from .evaluation import qp_adaptation_study

    cfg = _load_yaml(args.config) if args.config else {}
    models = dict(cfg.get("checkpoints", {}))
    models.update(_pairs(args.checkpoint, "checkpoint"))
    data_path = args.data or cfg.get("data")
    out = args.out or cfg.get("out_dir", "qp_study")
    qps = [int(q) for q in (args.qp or cfg.get("test_qps", [22, 27, 32, 37]))]
    if not models or not data_path:
        raise ConfigurationError("qp-study needs checkpoints and evaluation data")
    result = qp_adaptation_study(models, read_cache(data_path), qps, _metric(args), out,
                                 include_compressed=args.compressed)
    print("model".ljust(16) + "".join(f"QP{q}".rjust(12) for q in result["qps"]))
    for name, row in zip(result["rows"], result["distance"]):
        print(name.ljust(16) + "".join(f"{v:12.5f}" for v in row))


def cmd_bench_align(args):
    from .cache import read_cache
    from .evaluation import benchmark_alignment
    from .generator import Generator, GeneratorConfig
    from .training import TrainingConfig

    models = _pairs(args.checkpoint, "checkpoint")
    backends = [args.align_backend] if args.align_backend else ["dconv", "flow"]
    if not models:
        import torch

        torch.manual_seed(args.seed or 0)
        desk = TrainingConfig.desk().generator.to_dict()
        for b in backends:
            models[b] = Generator(GeneratorConfig(**{**desk, "align_backend": b}))
        logger.warning("no checkpoints given: timing freshly initialized desk-size models")
    else:
        models = {k: v for k, v in models.items() if k in backends}
    data = read_cache(args.data) if args.data else None
    rows = benchmark_alignment(models, data, _metric(args) if data is not None else None,
                               size=args.size, batch=args.batch, runs=args.runs,
                               seed=args.seed or 0, out_dir=args.out)
    for r in rows:
        print(f"{r['backend']:6s} median {r['median_latency_ms']:8.2f} ms/triplet   "
              f"perceptual distance {r['perceptual_distance']:.5f}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcngan", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="YAML/JSON config file")
    shared.add_argument("--seed", type=int)
    shared.add_argument("--align-backend", choices=["dconv", "flow"])
    shared.add_argument("--vgg-weights", help="torchvision-layout VGG-19 weights (.pth)")
    shared.add_argument("--vgg-width", type=float, default=0.25,
                        help="width of the random extractor used when no weights are given")
    shared.add_argument("--lpips-weights", help=".npz of per-layer channel weights for the metric")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", parents=[shared], help="build a sample cache")
    p.add_argument("--raw", action="append", help="PNG frame directory or raw .yuv file (repeatable)")
    p.add_argument("--degraded", action="append", help="QP=PATH externally encoded frames for the raw sequence")
    p.add_argument("--synthetic", type=int, default=0, help="number of synthetic sequences to add")
    p.add_argument("--frames", type=int, default=7)
    p.add_argument("--size", type=int, default=96, help="synthetic frame size")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--qp", nargs="+", default=[22, 27, 32, 37])
    p.add_argument("--patch", type=int, default=64)
    p.add_argument("--count", type=int, default=8, help="samples per sequence and QP")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare_data, seed=0)

    p = sub.add_parser("train", parents=[shared], help="train a model")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--steps", type=int)
    p.add_argument("--resume")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", parents=[shared], help="enhance a sequence")
    p.add_argument("--input", required=True)
    p.add_argument("--qp", type=int, required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--reference")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--panel", action="store_true", help="also write side-by-side comparison grids")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", parents=[shared], help="PSNR and perceptual distance")
    p.add_argument("--input")
    p.add_argument("--reference")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--qp", nargs="+")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--out", default="metrics.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("qp-study", parents=[shared], help="evaluate models across QPs")
    p.add_argument("--checkpoint", action="append", help="NAME=PATH (repeatable)")
    p.add_argument("--data")
    p.add_argument("--qp", nargs="+")
    p.add_argument("--compressed", action="store_true", help="add a row for the unenhanced input")
    p.add_argument("--out")
    p.set_defaults(func=cmd_qp_study)

    p = sub.add_parser("bench-align", parents=[shared], help="alignment latency per backend")
    p.add_argument("--checkpoint", action="append", help="BACKEND=PATH (repeatable)")
    p.add_argument("--data")
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench_align)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except DCNGANError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
