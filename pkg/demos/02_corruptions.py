"""What a pre-training sample looks like: half degraded, 30% masked, 20% clean."""

import numpy as np
from skimage import data

from dynet.degradations import CorruptionRecipe, compose_pretrain_sample, random_mask
from dynet.evaluation import psnr

patch = data.astronaut().astype(np.float64)  # stands in for a 512x512 curated patch
rng = np.random.default_rng(0)

recipe = CorruptionRecipe()
print(recipe.to_dict())

for _ in range(5):
    s = compose_pretrain_sample(patch, recipe, rng)
    frac = (s.mask | s.region).mean()
    print(f"{s.degradation:8s} level={s.level:6.1f}  modified={frac:.3f}  "
          f"overlap={bool((s.mask & s.region).any())}  psnr={psnr(s.target, s.input):.2f}")

# masking on its own
masked, mask = random_mask(patch[:128, :128], 0.3, unit=16, rng=1)
print("masked fraction:", mask.mean())
