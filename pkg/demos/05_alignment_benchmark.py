# Deformable alignment against the classical flow pipeline, timed on the
# same 128x128 triplet.
#
# The flow backend estimates two pyramidal Lucas-Kanade flows (prev->curr,
# next->curr) and warps twice; the deformable backend is one U-Net pass plus
# one sampling convolution.
# Run: python3 demos/05_alignment_benchmark.py [out_dir]

import sys

import torch

from dcngan.evaluation import benchmark_alignment
from dcngan.generator import Generator, GeneratorConfig
from dcngan.training import TrainingConfig

torch.set_num_threads(1)
out = sys.argv[1] if len(sys.argv) > 1 else "demo_out/bench_align"

widths = {
    "desk": TrainingConfig.desk().generator.to_dict(),
    "full": GeneratorConfig().to_dict(),
}
for label, cfg in widths.items():
    torch.manual_seed(0)
    models = {b: Generator(GeneratorConfig(**{**cfg, "align_backend": b})) for b in ("dconv", "flow")}
    rows = benchmark_alignment(models, None, size=128, runs=30, out_dir=f"{out}/{label}")
    for r in rows:
        print(f"{label:5s} {r['backend']:6s} median {r['median_latency_ms']:7.2f} ms per triplet")

# On one CPU core the full-width offset U-Net costs more than the classical
# flow; the ordering depends on hardware and width.
