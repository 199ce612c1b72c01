"""Quality gating and flat-patch filtering over a small corpus."""

import tempfile
from pathlib import Path

import numpy as np
from PIL import Image
from skimage import data

from dynet.curation import (
    calibrate_thresholds,
    curate,
    fit_quality_model,
    flat_fraction,
    score_image,
)


def rgb(a):
    a = np.asarray(a, dtype=np.float64)
    return np.repeat(a[..., None], 3, axis=2) if a.ndim == 2 else a[..., :3]


# pristine statistics from a few clean photographs
model = fit_quality_model([rgb(data.coffee()), rgb(data.chelsea()), rgb(data.rocket())])

# thresholds from a calibration corpus (here: pass everything natural we have)
calib = [score_image(rgb(getattr(data, n)()), model) for n in ("camera", "brick", "grass", "moon")]
thresholds = calibrate_thresholds(calib, percentile=100)
print("thresholds:", thresholds)

root = Path(tempfile.mkdtemp())
images = {
    "flat": np.full((512, 512, 3), 128, np.uint8),
    "noise": np.random.default_rng(0).integers(0, 256, (512, 512, 3), dtype=np.uint8),
    "astronaut": data.astronaut(),
    "retina": data.retina(),
}
sources = []
for name, img in images.items():
    Image.fromarray(img).save(root / f"{name}.png")
    sources.append(str(root / f"{name}.png"))

summary = curate(sources, root / "out", model, thresholds)
for r in summary.records:
    print(f"{Path(r.source).stem:10s} accepted={r.accepted!s:5s} patches={r.patch_count}"
          f"/{r.patches_total}  {'; '.join(r.reasons)}")
print(summary.ledger())
print("flat fraction of the flat image:", flat_fraction(images["flat"]))
