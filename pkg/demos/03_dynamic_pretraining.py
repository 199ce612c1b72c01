"""Alternating L/S pre-training at toy scale (width 8, 32x32 crops)."""

import numpy as np
from skimage import data

from dynet.arch import ArchConfig, build_model
from dynet.degradations import CorruptionRecipe
from dynet.trainer import RunLog, TrainConfig, init_state, pretrain, trainable_keys

arch = ArchConfig(base_channels=8, prompt_dims=(4, 8, 8), prompt_sizes=(16, 8, 4))
img = data.astronaut().astype(np.float64)
patches = [img[y:y + 64, x:x + 64] for y in range(0, 512, 64) for x in range(0, 512, 64)]

cfg = TrainConfig(batch_size=4, crop_size=32, iterations=100, variant_probability=0.5)
state = init_state(build_model("L", seed=0, arch=arch), cfg)
log = RunLog()  # in memory; pass a path for a JSON-lines file

pretrain(state, patches, cfg, CorruptionRecipe(crop_size=32, mask_unit=8), run_log=log)

print("first / last running loss:", log.records[0]["loss"], state.running_loss)
print("passes:", state.step_ledger())
print("one optimizer, shared moments:",
      state.optimizer_state_keys() == trainable_keys(state.model))
