"""A small end-to-end training run on synthetic scenes (a few minutes on CPU).

Trains a reduced configuration (D=16, 3 levels, base 8) on 40 synthetic
pairs for 300 iterations and evaluates on 5 held-out pairs. For the full
toy-scale qualification run (200 pairs, 2000 iterations) see
tests/test_acceptance.py::test_toy_end_to_end_training.
"""

import tempfile
import time

import numpy as np

from csstereo import ModelConfig, TrainConfig, build_model, predict_disparity, train_loop
from csstereo.metrics import avg_abs_error, outlier_rate
from csstereo.synth import generate_dataset
from csstereo.training import DiskDataset, fit_cost_stats

t0 = time.time()
root = tempfile.mkdtemp(prefix="csstereo_demo")
generate_dataset(40, 96, 96, seed=1, out_dir=f"{root}/train")
generate_dataset(5, 96, 96, seed=2, out_dir=f"{root}/test")
data = DiskDataset(f"{root}/train")

config = ModelConfig(max_disp=16, signature_dims=(48, 24), levels=3,
                     base_channels=8, channel_step=8, stem_channels=8)
weights = build_model(config, seed=0)
fit_cost_stats(data, weights, samples=20)

schedule = TrainConfig(lr_schedule=((300, 3e-4),), batch_size=2, seed=0,
                       swap_flip=True, scale_aug=False, checkpoint_interval=1000)
log = train_loop(data, schedule, weights)
print(f"loss: {log[0][1]:.4f} -> {log[-1][1]:.4f} over {len(log)} iterations")

held_out = DiskDataset(f"{root}/test")
errs, outliers = [], []
for i in range(len(held_out)):
    s = held_out.load(i)
    d = predict_disparity(s.left, s.right, weights, mode="test")
    errs.append(avg_abs_error(d, s.gt_left))
    outliers.append(outlier_rate(d, s.gt_left, 3.0))
print(f"held-out avg abs error {np.mean(errs):.2f} px, >3px rate {np.mean(outliers):.1f}%")
print(f"total {time.time() - t0:.0f}s")
