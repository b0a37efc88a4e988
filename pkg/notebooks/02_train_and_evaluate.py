"""
Training a small HMTNet and reading its success curve
=====================================================

A desk-scale network is trained on synthetic frames and evaluated on held
out ones. Widths are reduced so this runs in a few minutes on one core.
"""

from pathlib import Path

import numpy as np

from hmtnet.data_io import SyntheticSpec, generate_synthetic
from hmtnet.evaluation import bench_inference, evaluate
from hmtnet.losses import LossWeights
from hmtnet.network import NetworkConfig, build
from hmtnet.training import TrainConfig, train

out = Path("notebooks_out/02")

data = generate_synthetic(SyntheticSpec(seed=21), 40)
train_set, test_set = data.subset(range(32)), data.subset(range(32, 40))

config = NetworkConfig(base_channels=8, feature_channels=16, joint_channels=4, fc_width=128)
net = build(config, np.random.default_rng(0))
print("parameters:", net.num_parameters())

# augmentation on, weight penalty off at this tiny data size
cfg = TrainConfig(batch_size=8, epochs=30, lr_decay=0.98, augment=True, rotation_range=30.0,
                  weights=LossWeights(lambda_w=0.0), checkpoint_every=10)
result = train(net, train_set, cfg, out)
first, last = result.history[0], result.history[-1]
print("total loss %.3f -> %.3f in %.0f s" % (first["total"], last["total"], result.seconds))
print("log:", result.log_path, " checkpoint:", result.checkpoint)

# mean 3D error and the fraction of frames whose worst joint is within t mm
report = evaluate(net, test_set)
print("test mean error: %.2f mm" % report.mean_error_mm)
for t in (10, 20, 40, 80):
    print("  success at %2d mm: %.2f" % (t, report.success_at(float(t))))
report.write_success_csv(out / "success.csv")

# throughput on this machine; the reference GPU figure is context only
print(bench_inference(net, n_frames=200, batch_size=8).summary())
