"""
Masked-autoencoder pretraining on synthetic weeks
=================================================

Generate a handful of synthetic participants, standardize each minute of the
week across them, hide 90% of the 18-minute patches and train the encoder and
its small decoder to fill the gaps. The checkpoint written at the end can be
fine-tuned with ``pat finetune --ckpt``.
"""

import sys

import numpy as np

from pat.checkpoint import checkpoint_from_model, save_checkpoint
from pat.data import as_matrix, standardize_per_minute, synth_generate
from pat.model import ModelConfig, count_parameters
from pat.pretrain import MAEConfig, mae_forward, pretrain_loop, reconstruction_loss, sample_mask

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 10

records, stats = standardize_per_minute(synth_generate(16, seed=0, noise=0.1))
X = as_matrix(records)

cfg = ModelConfig.from_size("S")
print(f"PAT-S: {cfg.num_patches} patches of {cfg.patch_size} minutes, "
      f"{count_parameters(cfg):,} encoder parameters")

mae_cfg = MAEConfig(mask_ratio=0.9, epochs=epochs, batch_size=8, seed=0)
result = pretrain_loop(X, mae_cfg, cfg, progress=lambda e, l: print(f"epoch {e:3d}  loss {l:.4f}"))

# reconstruct one participant from 10% of its patches
plan = sample_mask(cfg.num_patches, 0.9, np.random.default_rng(1))
recon = mae_forward(X[0], plan, result.model)
print("visible patches:", len(plan.visible_idx))
print("all-minute MSE:   ", float(reconstruction_loss(X[0], recon, plan, "all").data))
print("masked-minute MSE:", float(reconstruction_loss(X[0], recon, plan, "masked_only").data))

save_checkpoint(checkpoint_from_model(result.model, {"history": result.history}), "mae_demo.ckpt")
print("wrote mae_demo.ckpt")
