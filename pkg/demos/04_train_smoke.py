#!/usr/bin/env python3
"""A one-minute training run on synthetic pairs.

Run:  python demos/04_train_smoke.py
"""

import numpy as np

from deflare import metrics, network, training

# Small everything: 32x32 crops, 2 levels, 6 channels.  The defaults in
# NetworkConfig are the larger desk-scale setup; this is a quick look.
net_cfg = network.NetworkConfig(base_channels=6, levels=2, state_size=6,
                                window=(4, 4), hier_levels=2, seed=1)
train_cfg = training.TrainConfig(iters=120, batch_size=2, lr=3e-4,
                                 image_h=32, image_w=32, dataset_seed=42,
                                 dataset_size=4, eval_every=0)

state, breakdowns = training.train(net_cfg, train_cfg)

print("iter   l_image  l_flare  l_rec    total")
for i in (0, 19, 39, 59, 79, 99, 119):
    lb = breakdowns[i]
    print(f"{i + 1:4d}   {lb.l_image:.4f}   {lb.l_flare:.4f}   "
          f"{lb.l_rec:.4f}   {lb.total:.4f}")

pairs = training.build_dataset(train_cfg)
corrupted = float(np.mean([metrics.psnr(p.image, p.background) for p in pairs]))
restored = training.train_psnr(state, pairs)
print(f"\ntrain-set psnr: corrupted {corrupted:.2f} dB -> restored {restored:.2f} dB")
print(f"loss: {breakdowns[0].total:.4f} -> {breakdowns[-1].total:.4f}")
