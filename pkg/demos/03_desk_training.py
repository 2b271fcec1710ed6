# Train a small model on synthetic panning video, then enhance a sequence.
#
# The desk preset (batch 8, 64 px patches, narrow widths) runs at roughly
# half a second per step on one CPU core. STEPS defaults low so the demo
# finishes quickly; raise it for a model that actually helps.
# Run: python3 demos/03_desk_training.py [steps] [out_dir]

import csv
import sys
from pathlib import Path

import torch

from dcngan.cache import build_samples
from dcngan.evaluation import PerceptualMetric, compare_frames, enhance_frames
from dcngan.frames import degrade
from dcngan.losses import FeatureExtractor, VGGLossConfig
from dcngan.synthetic import synthetic_sequence
from dcngan.training import TrainingConfig, load_generator, train

torch.set_num_threads(1)
steps = int(sys.argv[1]) if len(sys.argv) > 1 else 100
out = Path(sys.argv[2] if len(sys.argv) > 2 else "demo_out/desk_training")

train_seqs = [synthetic_sequence(5, 96, 96, seed=100 + i) for i in range(8)]
data = build_samples(train_seqs, [37], patch=64, count=4, seed=0)
print(len(data), "training samples at QP 37")

cfg = TrainingConfig.desk(steps=steps, qp_set=(37,), out_dir=str(out), checkpoint_every=max(1, steps // 2))
final = train(cfg, data)

with open(out / "loss_log.csv") as fh:
    log = list(csv.DictReader(fh))
print("l_vgg: step 1", float(log[0]["l_vgg"]), " step", log[-1]["step"], float(log[-1]["l_vgg"]))

# enhance a held-out sequence
raw = synthetic_sequence(5, 96, 96, seed=999)
compressed = [degrade(f, 37) for f in raw]
gen = load_generator(final)
enhanced = enhance_frames(compressed, 37, gen)

metric = PerceptualMetric(FeatureExtractor(VGGLossConfig(width=0.25)))
before = compare_frames(compressed, raw, metric)
after = compare_frames(enhanced, raw, metric)
print(f"compressed: {before.mean_psnr:.2f} dB, distance {before.mean_distance:.4f}")
print(f"enhanced:   {after.mean_psnr:.2f} dB, distance {after.mean_distance:.4f}")
