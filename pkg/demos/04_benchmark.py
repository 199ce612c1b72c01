"""PSNR/SSIM benchmark over a manifest, with an optional gray-world pre-step."""

import tempfile
from pathlib import Path

import numpy as np
from skimage import data

from dynet.arch import ArchConfig, build_model
from dynet.degradations import add_gaussian_noise
from dynet.evaluation import (
    ManifestEntry,
    gray_world_balance,
    read_manifest,
    run_benchmark,
    save_image,
    write_manifest,
)

root = Path(tempfile.mkdtemp())
clean = data.astronaut()[100:228, 150:278].astype(np.float64)
rng = np.random.default_rng(0)

entries = []
for sigma in (15, 25, 50):
    save_image(root / "clean.png", clean)
    save_image(root / f"noisy{sigma}.png", add_gaussian_noise(clean, sigma, rng))
    entries.append(ManifestEntry(f"noise{sigma}", f"noisy{sigma}.png", "clean.png"))
# a yellow cast as a stand-in for non-gray haze
save_image(root / "cast.png", np.clip(clean * [1.2, 1.1, 0.6], 0, 255))
entries.append(ManifestEntry("haze", "cast.png", "clean.png"))
write_manifest(root / "manifest.tsv", entries)

# an untrained, identity-initialised network: output == input
model = build_model("S", arch=ArchConfig(base_channels=8), zero_output=True)

plain = run_benchmark(model, read_manifest(root / "manifest.tsv"))
print(plain.table())
balanced = run_benchmark(model, read_manifest(root / "manifest.tsv"), gwa_tasks=["haze"])
print(balanced.table())

print("channel means before/after GWA:",
      clean.reshape(-1, 3).mean(0).round(1), gray_world_balance(clean).reshape(-1, 3).mean(0).round(1))
