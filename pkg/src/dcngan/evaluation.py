"""Metrics, sequence enhancement, the QP-adaptation study and the alignment benchmark."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .cache import SampleSet
from .errors import ConfigurationError, ShapeError, UnsupportedQPError
from .frames import LumaFrame, as_luma, load_frames, make_triplets, to_uint8, write_png_dir
from .generator import Generator
from .losses import FeatureExtractor, VGGLossConfig, feature_distance

logger = logging.getLogger(__name__)

PSNR_CAP = 99.0


def psnr(a, b, cap: float | None = PSNR_CAP) -> float:
    """PSNR in dB for [0, 1] frames. Identical frames give ``cap`` (``inf`` if ``cap`` is None)."""
    pa = np.asarray(as_luma(a).pixels, dtype=np.float64)
    pb = np.asarray(as_luma(b).pixels, dtype=np.float64)
    if pa.shape != pb.shape:
        raise ShapeError(f"frames differ in size: {pa.shape} vs {pb.shape}")
    mse = np.mean((pa - pb) ** 2)
    value = math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)
    return value if cap is None else min(value, cap)


def load_channel_weights(path) -> list[torch.Tensor]:
    """Per-layer channel weights (``.npz`` with arrays ``layer0``, ``layer1``, ...)."""
    with np.load(path) as data:
        keys = sorted((k for k in data.files if k.startswith("layer")), key=lambda k: int(k[5:]))
        return [torch.as_tensor(np.abs(data[k]).astype(np.float32)) for k in keys]


class PerceptualMetric:
    """Feature-space distance between frames; lower is better.

    Uses the same extractor and reduction as the perceptual loss. Optional
    non-negative channel weights calibrate the per-channel contributions.
    """

    def __init__(self, extractor: FeatureExtractor | None = None, channel_weights=None):
        self.extractor = extractor or FeatureExtractor(VGGLossConfig())
        self.channel_weights = channel_weights

    @torch.no_grad()
    def batch(self, a: torch.Tensor, b: torch.Tensor) -> np.ndarray:
        """Distances of paired ``(N, 1, H, W)`` batches, one per pair."""
        fa, fb = self.extractor(a.float()), self.extractor(b.float())
        out = []
        for i in range(a.shape[0]):
            out.append(float(feature_distance(
                [f[i:i + 1] for f in fa], [f[i:i + 1] for f in fb],
                self.extractor.cfg.channel_reduction, self.channel_weights,
            )))
        return np.asarray(out)

    def __call__(self, a, b) -> float:
        ta = torch.as_tensor(np.asarray(as_luma(a).pixels)).view(1, 1, *as_luma(a).shape)
        tb = torch.as_tensor(np.asarray(as_luma(b).pixels)).view(1, 1, *as_luma(b).shape)
        if ta.shape != tb.shape:
            raise ShapeError(f"frames differ in size: {tuple(ta.shape)} vs {tuple(tb.shape)}")
        return float(self.batch(ta, tb)[0])


def perceptual_distance(a, b, extractor: FeatureExtractor | None = None) -> float:
    return PerceptualMetric(extractor)(a, b)


@dataclass
class MetricReport:
    frames: list = field(default_factory=list)  # (index, psnr_db, distance)
    metadata: dict = field(default_factory=dict)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([f[1] for f in self.frames]))

    @property
    def mean_distance(self) -> float:
        return float(np.mean([f[2] for f in self.frames]))

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = [self.metadata.get(k, "") for k in ("qp", "backend", "checkpoint")]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "psnr_db", "perceptual_distance", "qp", "backend", "checkpoint"])
            for idx, p, d in self.frames:
                w.writerow([idx, f"{min(p, PSNR_CAP):.4f}", f"{d:.6f}", *meta])
            w.writerow(["mean", f"{min(self.mean_psnr, PSNR_CAP):.4f}", f"{self.mean_distance:.6f}", *meta])
        return path


def compare_frames(frames, reference, metric: PerceptualMetric, **metadata) -> MetricReport:
    frames, reference = list(frames), list(reference)
    if len(frames) != len(reference):
        raise ShapeError(f"{len(frames)} frames vs {len(reference)} reference frames")
    report = MetricReport(metadata=metadata)
    for i, (f, r) in enumerate(zip(frames, reference)):
        report.frames.append((i, psnr(f, r), metric(f, r)))
    return report


@torch.no_grad()
def enhance_frames(frames, qp: int, generator: Generator) -> list[LumaFrame]:
    """Enhance every frame of a sequence from its (replicated-edge) triplet."""
    if int(qp) not in generator.config.qp_set:
        raise UnsupportedQPError(f"QP {qp} is not supported by this model (QP set {list(generator.config.qp_set)})")
    generator.eval()
    out = []
    for trip in make_triplets(frames):
        x = torch.as_tensor(trip.stack()).unsqueeze(0).to(generator.head.weight.dtype)
        out.append(LumaFrame(generator(x, int(qp))[0, 0].float().numpy()))
    return out


def write_panels(degraded, enhanced, reference, out_dir) -> list[Path]:
    """Side-by-side grids: degraded | enhanced [| reference]."""
    from PIL import Image

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, cols in enumerate(zip(degraded, enhanced, *([reference] if reference is not None else []))):
        strip = np.concatenate([to_uint8(c) for c in cols], axis=1)
        p = out / f"{i:06d}.png"
        Image.fromarray(strip, mode="L").save(p)
        paths.append(p)
    return paths


def enhance_video(input_path, qp: int, generator: Generator, out_dir, reference=None,
                  width=None, height=None, metric: PerceptualMetric | None = None,
                  panel: bool = False, checkpoint_id: str = ""):
    """Enhance a frame directory (or raw YUV file) and write 8-bit PNG frames.

    Returns ``(written paths, MetricReport or None)``; metrics are computed
    against ``reference`` when one is given and written to ``metrics.csv``.
    """
    frames = load_frames(input_path, width, height)
    enhanced = enhance_frames(frames, qp, generator)
    out = Path(out_dir)
    paths = write_png_dir(enhanced, out / "frames")
    report = None
    ref = load_frames(reference, width, height) if reference is not None else None
    if ref is not None:
        metric = metric or PerceptualMetric()
        report = compare_frames(enhanced, ref, metric, qp=qp,
                                backend=generator.config.align_backend, checkpoint=checkpoint_id)
        report.write_csv(out / "metrics.csv")
    if panel:
        write_panels(frames, enhanced, ref, out / "panels")
    return paths, report


# -- QP adaptation study ------------------------------------------------------

@torch.no_grad()
def evaluate_samples(generator: Generator | None, data: SampleSet, qp: int,
                     metric: PerceptualMetric, batch_size: int = 16) -> dict:
    """Mean PSNR and perceptual distance on the samples of one QP.

    ``generator=None`` scores the degraded centre frames themselves.
    """
    sel = data.subset(data.qp == qp)
    if len(sel) == 0:
        raise ConfigurationError(f"evaluation data has no samples at QP {qp}")
    if generator is not None:
        generator.eval()
    psnrs, dists = [], []
    for start in range(0, len(sel), batch_size):
        y = torch.from_numpy(sel.degraded[start:start + batch_size])
        x = torch.from_numpy(sel.target[start:start + batch_size]).unsqueeze(1)
        out = y[:, 1:2] if generator is None else generator(y.to(generator.head.weight.dtype), [qp] * len(y)).float()
        dists.extend(metric.batch(out, x))
        psnrs.extend(psnr(o[0].numpy(), t[0].numpy()) for o, t in zip(out, x))
    return {"psnr": float(np.mean(psnrs)), "distance": float(np.mean(dists))}


def qp_adaptation_study(models: dict, data: SampleSet, test_qps, metric: PerceptualMetric,
                        out_dir=None, include_compressed: bool = False) -> dict:
    """Evaluate every model at every test QP.

    ``models`` maps a row name to a Generator or a checkpoint path. Returns
    ``{"rows": [...], "qps": [...], "distance": array, "psnr": array}`` and,
    with ``out_dir``, writes ``qp_study.csv`` and ``qp_study.png``.
    """
    from .training import load_generator

    names = list(models)
    if include_compressed:
        names = ["Compressed"] + names
    dist = np.zeros((len(names), len(test_qps)))
    ps = np.zeros_like(dist)
    for r, name in enumerate(names):
        if name == "Compressed" and include_compressed:
            gen = None
        else:
            gen = models[name]
            if not isinstance(gen, Generator):
                path = Path(gen)
                if not path.exists():
                    raise ConfigurationError(f"missing checkpoint for {name}: {path}")
                gen = load_generator(path)
        for c, qp in enumerate(test_qps):
            res = evaluate_samples(gen, data, int(qp), metric)
            dist[r, c], ps[r, c] = res["distance"], res["psnr"]
    result = {"rows": names, "qps": [int(q) for q in test_qps], "distance": dist, "psnr": ps}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "qp_study.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["model"] + [f"qp{q}_perceptual_distance" for q in result["qps"]]
                       + [f"qp{q}_psnr_db" for q in result["qps"]])
            for r, name in enumerate(names):
                w.writerow([name] + [f"{v:.6f}" for v in dist[r]] + [f"{v:.4f}" for v in ps[r]])
        _plot_qp_study(result, out / "qp_study.png")
    return result


def _plot_qp_study(result, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows, qps, dist = result["rows"], result["qps"], result["distance"]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.8 / len(rows)
    for r, name in enumerate(rows):
        ax.bar(np.arange(len(qps)) + (r - (len(rows) - 1) / 2) * width, dist[r], width, label=name)
    ax.set_xticks(np.arange(len(qps)), [f"QP {q}" for q in qps])
    ax.set_ylabel("perceptual distance (lower is better)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# -- alignment benchmark ------------------------------------------------------

@torch.no_grad()
def time_alignment(align_module, frames: torch.Tensor, runs: int = 100, warmup: int = 5) -> np.ndarray:
    """Wall-clock seconds of ``runs`` forward passes of an alignment module."""
    align_module.eval()
    for _ in range(warmup):
        align_module(frames)
    times = np.empty(runs)
    for i in range(runs):
        t0 = time.perf_counter()
        align_module(frames)
        times[i] = time.perf_counter() - t0
    return times


def benchmark_alignment(models: dict, data: SampleSet | None, metric: PerceptualMetric | None = None,
                        size: int = 128, batch: int = 1, runs: int = 100, seed: int = 0,
                        out_dir=None) -> list[dict]:
    """Median alignment latency and perceptual distance per backend.

    ``models`` maps a backend name to a Generator or checkpoint path. The
    timing input is a fixed seeded batch of ``size`` x ``size`` triplets,
    identical for every backend, and the backends take turns run by run.
    """
    from .training import load_generator

    rng = np.random.default_rng(seed)
    if data is not None and data.target.shape[-1] >= size and data.target.shape[-2] >= size:
        idx = rng.integers(len(data), size=batch)
        frames = torch.from_numpy(data.degraded[idx, :, :size, :size].copy())
    else:
        from .synthetic import synthetic_sequence
        trips = [make_triplets(synthetic_sequence(3, size, size, seed=seed + i))[1].stack() for i in range(batch)]
        frames = torch.as_tensor(np.stack(trips))
    gens = {}
    for name, gen in models.items():
        gens[name] = (gen if isinstance(gen, Generator) else load_generator(gen)).eval()
    inputs = {name: frames.to(g.head.weight.dtype) for name, g in gens.items()}
    times = {name: np.empty(runs) for name in gens}
    names = list(gens)
    with torch.no_grad():
        for name in names:
            for _ in range(5):
                gens[name].align(inputs[name])
        # interleave the backends so slow phases of the machine hit all of them alike
        for i in range(runs):
            for name in names[i % len(names):] + names[:i % len(names)]:
                t0 = time.perf_counter()
                gens[name].align(inputs[name])
                times[name][i] = time.perf_counter() - t0
    rows = []
    for name, gen in gens.items():
        row = {
            "backend": name,
            "median_latency_ms": float(np.median(times[name]) * 1e3 / batch),
            "batch": batch, "height": size, "width": size, "runs": runs,
            "perceptual_distance": float("nan"),
        }
        if data is not None and metric is not None:
            row["perceptual_distance"] = float(np.mean([
                evaluate_samples(gen, data, int(q), metric)["distance"] for q in np.unique(data.qp)
            ]))
        rows.append(row)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "bench_align.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["backend", "median_latency_ms", "batch", "height_px", "width_px", "runs",
                        "perceptual_distance"])
            for r in rows:
                w.writerow([r["backend"], f"{r['median_latency_ms']:.3f}", r["batch"], r["height"],
                            r["width"], r["runs"], f"{r['perceptual_distance']:.6f}"])
        _plot_benchmark(rows, out / "bench_align.png")
    return rows


def _plot_benchmark(rows, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    for r in rows:
        y = r["perceptual_distance"] if math.isfinite(r["perceptual_distance"]) else 0.0
        ax.scatter(r["median_latency_ms"], y, s=60)
        ax.annotate(r["backend"], (r["median_latency_ms"], y), textcoords="offset points", xytext=(6, 4))
    ax.set_xlabel("median alignment latency per triplet (ms)")
    ax.set_ylabel("perceptual distance")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
