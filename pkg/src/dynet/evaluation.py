"""PSNR / SSIM, gray-world colour balance and the benchmark runner.

Metrics are computed on RGB at 8-bit scale (peak 255) and averaged over
channels. No border cropping.
"""

import json
import logging
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from scipy.ndimage import gaussian_filter

log = logging.getLogger(__name__)

PSNR_CAP = 100.0
DATA_ROOT_ENV = "DYNET_DATA_ROOT"


def _pair(ref, out):
    ref = np.asarray(ref, dtype=np.float64)
    out = np.asarray(out, dtype=np.float64)
    if ref.shape != out.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {out.shape}")
    return ref, out


def psnr(ref, out, peak=255.0):
    ref, out = _pair(ref, out)
    mse = np.mean((ref - out) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10 * np.log10(peak**2 / mse)))


def _ssim_channel(x, y, peak, sigma, win):
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    trunc = ((win - 1) / 2) / sigma
    filt = lambda a: gaussian_filter(a, sigma, truncate=trunc)
    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    pad = (win - 1) // 2
    return s[pad:-pad, pad:-pad].mean()


def ssim(ref, out, peak=255.0, sigma=1.5, win=11):
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03."""
    ref, out = _pair(ref, out)
    if min(ref.shape[:2]) < win:
        raise ValueError(f"image {ref.shape[:2]} smaller than SSIM window {win}")
    if ref.ndim == 2:
        return float(_ssim_channel(ref, out, peak, sigma, win))
    return float(np.mean([
        _ssim_channel(ref[..., c], out[..., c], peak, sigma, win) for c in range(ref.shape[2])
    ]))


def gray_world_balance(img, peak=255.0):
    """Scale each channel so every channel mean equals the mean over channels."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"gray-world balance needs an (H, W, 3) image, got {img.shape}")
    means = img.reshape(-1, 3).mean(axis=0)
    if np.any(means == 0):
        warnings.warn("channel with zero mean; gray-world balance skipped", RuntimeWarning)
        return img.copy()
    gains = means.mean() / means
    return np.clip(img * gains, 0, peak)


def load_image(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64)


def save_image(path, img):
    Image.fromarray(np.clip(np.round(img), 0, 255).astype(np.uint8)).save(path)


def restore(model, img):
    """Run ``model`` on an (H, W, 3) 8-bit image, padding to a multiple of 8."""
    h, w = img.shape[:2]
    x = torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)) / 255.0)[None]
    if isinstance(model, torch.nn.Module):
        x = x.to(next(model.parameters()).dtype)
    ph, pw = (-h) % 8, (-w) % 8
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph), mode="reflect")
    with torch.no_grad():
        y = model(x)[..., :h, :w]
    y = y[0].clamp(0, 1).double().numpy().transpose(1, 2, 0) * 255.0
    return np.round(y)


@dataclass
class ManifestEntry:
    task: str
    degraded: str
    clean: str


def read_manifest(path, root=None):
    """Parse ``task<TAB>degraded<TAB>clean`` lines; relative paths resolve against ``root``.

    ``root`` defaults to ``$DYNET_DATA_ROOT`` and then the manifest's own directory.
    Blank lines and ``#`` comments are skipped.
    """
    path = Path(path)
    root = Path(root or os.environ.get(DATA_ROOT_ENV) or path.parent)
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t") if "\t" in line else line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 'task degraded clean', got {line!r}")
        task, deg, clean = parts
        entries.append(ManifestEntry(task, str(root / deg), str(root / clean)))
    return entries


def write_manifest(path, entries):
    with open(path, "w") as fh:
        for e in entries:
            fh.write(f"{e.task}\t{e.degraded}\t{e.clean}\n")


@dataclass
class BenchmarkResults:
    tasks: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)

    @property
    def average(self):
        if not self.tasks:
            return {"psnr": float("nan"), "ssim": float("nan")}
        return {
            "psnr": float(np.mean([t["psnr"] for t in self.tasks.values()])),
            "ssim": float(np.mean([t["ssim"] for t in self.tasks.values()])),
        }

    def to_dict(self):
        return {"tasks": self.tasks, "average": self.average, "skipped": self.skipped}

    def table(self):
        lines = [f"{'task':<16}{'n':>5}  {'PSNR/SSIM':>14}"]
        for name, t in self.tasks.items():
            lines.append(f"{name:<16}{t['n']:>5}  {t['psnr']:>7.2f}/{t['ssim']:.3f}")
        avg = self.average
        lines.append(f"{'average':<16}{'':>5}  {avg['psnr']:>7.2f}/{avg['ssim']:.3f}")
        if self.skipped:
            lines.append(f"skipped {len(self.skipped)} entries")
        return "\n".join(lines)

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def run_benchmark(model, entries, gwa_tasks=()):
    """Average PSNR/SSIM per task in manifest order.

    ``model`` is a DyNet or any callable on [B, 3, H, W] tensors in [0, 1].
    Tasks named in ``gwa_tasks`` get gray-world balance before restoration.
    Missing or unreadable files are recorded in ``skipped``.
    """
    gwa_tasks = set(gwa_tasks)
    if isinstance(model, torch.nn.Module):
        model.eval()
    sums = {}
    results = BenchmarkResults()
    for e in entries:
        try:
            degraded, clean = load_image(e.degraded), load_image(e.clean)
        except (OSError, ValueError) as exc:
            log.error("skipping %s / %s: %s", e.degraded, e.clean, exc)
            results.skipped.append({"task": e.task, "degraded": e.degraded, "reason": str(exc)})
            continue
        if e.task in gwa_tasks:
            degraded = gray_world_balance(degraded)
        out = restore(model, degraded)
        acc = sums.setdefault(e.task, [0, 0.0, 0.0])
        acc[0] += 1
        acc[1] += psnr(clean, out)
        acc[2] += ssim(clean, out)
    for task, (n, p, s) in sums.items():
        results.tasks[task] = {"n": n, "psnr": p / n, "ssim": s / n}
    return results
