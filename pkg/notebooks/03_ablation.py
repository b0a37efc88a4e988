"""
The concat x hmt ablation
=========================

Trains the four variants (plain or concatenated features, plain or
topology-ordered regressor) from the same seed and compares test errors.
A short schedule keeps it quick; the acceptance suite runs the full one.
"""

import numpy as np

from hmtnet.data_io import SyntheticSpec, generate_synthetic
from hmtnet.losses import LossWeights
from hmtnet.network import NetworkConfig, ablation_variant, build
from hmtnet.training import TrainConfig, run_ablation

data = generate_synthetic(SyntheticSpec(seed=11), 32)
train_set, test_set = data.subset(range(24)), data.subset(range(24, 32))

base = NetworkConfig(base_channels=8, feature_channels=16, joint_channels=4, fc_width=128)
for use_concat, use_hmt in ((False, False), (True, True)):
    net = build(ablation_variant(use_concat, use_hmt, base))
    print(f"concat={use_concat!s:5} hmt={use_hmt!s:5} merged channels {net.config.merged_channels:3d} "
          f"parameters {net.num_parameters()}")

cfg = TrainConfig(batch_size=8, epochs=20, augment=False, weights=LossWeights(lambda_w=0.0),
                  checkpoint_every=0)
results = run_ablation(train_set, test_set, base, cfg, "notebooks_out/03")
for name, r in results.items():
    print("%-12s test %.2f mm  (train %.0f s)" % (name, r["report"].mean_error_mm, r["result"].seconds))
