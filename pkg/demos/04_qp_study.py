# Does the QP code matter? Train a QP22 specialist, a QP37 specialist and a
# model on all four QPs, then score each at QP 22 and QP 37.
#
# Run: python3 demos/04_qp_study.py [steps] [out_dir]
# At 800 steps per model this takes about 20 minutes on one core.

import sys
from pathlib import Path

import numpy as np
import torch

from dcngan.cache import build_samples
from dcngan.evaluation import PerceptualMetric, qp_adaptation_study
from dcngan.losses import FeatureExtractor, VGGLossConfig
from dcngan.synthetic import synthetic_sequence
from dcngan.training import Trainer, TrainingConfig

torch.set_num_threads(1)
steps = int(sys.argv[1]) if len(sys.argv) > 1 else 200
out = Path(sys.argv[2] if len(sys.argv) > 2 else "demo_out/qp_study")

train = build_samples([synthetic_sequence(5, 96, 96, seed=100 + i) for i in range(12)],
                      [22, 27, 32, 37], patch=64, count=4, seed=1)
held_out = build_samples([synthetic_sequence(5, 96, 96, seed=900 + i) for i in range(6)],
                         [22, 37], patch=64, count=4, seed=2)

models = {}
for name, qps in [("Trained_QP22", (22,)), ("Trained_QP37", (37,)), ("Trained_4QPs", (22, 27, 32, 37))]:
    trainer = Trainer(TrainingConfig.desk(qp_set=qps), train.subset(np.isin(train.qp, qps)))
    for step in range(steps):
        trainer.train_step(trainer.batch(step))
    models[name] = trainer.generator
    print("trained", name)

metric = PerceptualMetric(FeatureExtractor(VGGLossConfig(width=0.25)))
res = qp_adaptation_study(models, held_out, [22, 37], metric, out, include_compressed=True)

print(f"{'':14s}{'QP22':>10s}{'QP37':>10s}   (perceptual distance, lower is better)")
for name, row in zip(res["rows"], res["distance"]):
    print(f"{name:14s}" + "".join(f"{v:10.4f}" for v in row))
print("plot:", out / "qp_study.png")
