"""Dataset curation: no-reference quality gating, patch tiling, flat-patch rejection.

Quality scores come from natural-scene statistics of MSCN (mean subtracted,
contrast normalised) luminance coefficients. Both scores are distances to a
pristine reference model fitted on a local corpus of good images, so lower
is better:

* ``niqe``: distance between the multivariate Gaussian of the image's patch
  features and the pristine one;
* ``brisque``: Mahalanobis distance of the whole-image feature vector to the
  pristine patch-feature distribution (no trained regressor).

A NIMA-style aesthetic score (higher is better) can be plugged in as any
callable ``img -> float``.
"""

import json
import logging
import math
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import correlate1d, zoom
from scipy.special import gamma as gamma_fn

log = logging.getLogger(__name__)

_ALPHAS = np.arange(0.2, 10.0, 0.001)
_GGD_RHO = gamma_fn(1 / _ALPHAS) * gamma_fn(3 / _ALPHAS) / gamma_fn(2 / _ALPHAS) ** 2
_AGGD_RHO = gamma_fn(2 / _ALPHAS) ** 2 / (gamma_fn(1 / _ALPHAS) * gamma_fn(3 / _ALPHAS))

MIN_SIDE = 96
FEATURES_PER_SCALE = 18


def luminance(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[..., 0]
    return img[..., :3] @ np.array([0.299, 0.587, 0.114])


def _gauss_window(radius=3, sigma=7 / 6):
    x = np.arange(-radius, radius + 1)
    w = np.exp(-0.5 * x**2 / sigma**2)
    return w / w.sum()


def mscn(gray, c=1.0):
    """MSCN coefficients of an 8-bit-scale luminance image (7x7 Gaussian, sigma 7/6)."""
    win = _gauss_window()
    mu = correlate1d(correlate1d(gray, win, 0, mode="nearest"), win, 1, mode="nearest")
    m2 = correlate1d(correlate1d(gray * gray, win, 0, mode="nearest"), win, 1, mode="nearest")
    sigma = np.sqrt(np.abs(m2 - mu * mu))
    return (gray - mu) / (sigma + c)


def ggd_fit(x):
    """Generalised Gaussian (alpha, variance) by moment matching."""
    x = np.ravel(x)
    var = np.mean(x * x)
    e_abs = np.mean(np.abs(x))
    if var == 0 or e_abs == 0:
        return _ALPHAS[-1], 0.0
    rho = var / e_abs**2
    return float(_ALPHAS[np.argmin((_GGD_RHO - rho) ** 2)]), float(var)


def aggd_fit(x):
    """Asymmetric generalised Gaussian (alpha, mean, left var, right var)."""
    x = np.ravel(x)
    left, right = x[x < 0], x[x >= 0]
    sl = math.sqrt(np.mean(left * left)) if left.size else 0.0
    sr = math.sqrt(np.mean(right * right)) if right.size else 0.0
    m2 = np.mean(x * x)
    if sl == 0 or sr == 0 or m2 == 0:
        return _ALPHAS[-1], 0.0, sl * sl, sr * sr
    g = sl / sr
    r_hat = np.mean(np.abs(x)) ** 2 / m2
    r_norm = r_hat * (g**3 + 1) * (g + 1) / (g**2 + 1) ** 2
    alpha = float(_ALPHAS[np.argmin((_AGGD_RHO - r_norm) ** 2)])
    ratio = math.sqrt(gamma_fn(1 / alpha) / gamma_fn(3 / alpha))
    mean = (sr - sl) * ratio * gamma_fn(2 / alpha) / gamma_fn(1 / alpha)
    return alpha, float(mean), sl * sl, sr * sr


def nss_features(coef):
    """18 natural-scene-statistics features of one MSCN map."""
    feats = list(ggd_fit(coef))
    pairs = (
        coef[:, :-1] * coef[:, 1:],  # horizontal
        coef[:-1, :] * coef[1:, :],  # vertical
        coef[:-1, :-1] * coef[1:, 1:],  # main diagonal
        coef[1:, :-1] * coef[:-1, 1:],  # anti-diagonal
    )
    for prod in pairs:
        feats.extend(aggd_fit(prod))
    return np.asarray(feats, dtype=np.float64)


def _downscale(gray):
    return zoom(gray, 0.5, order=3, mode="nearest")


def image_features(img):
    """36 features: 18 at full scale and 18 at half scale."""
    g = luminance(img)
    return np.concatenate([nss_features(mscn(g)), nss_features(mscn(_downscale(g)))])


def patch_features(img, patch=MIN_SIDE, sharp_only=False, sharpness=0.75):
    """Per-patch 36-d features on a non-overlapping grid.

    With ``sharp_only`` (used for pristine fits) keep patches whose mean local
    deviation is at least ``sharpness`` times the sharpest patch's.
    """
    g = luminance(img)
    h, w = g.shape
    if h < patch or w < patch:
        raise ValueError(f"image {h}x{w} below the {patch}x{patch} metric floor")
    h2, w2 = (h // patch) * patch, (w // patch) * patch
    g = g[:h2, :w2]
    small = _downscale(g)
    full_c, half_c = mscn(g), mscn(small)
    half = patch // 2
    feats, sharp = [], []
    win = _gauss_window()
    mu = correlate1d(correlate1d(g, win, 0, mode="nearest"), win, 1, mode="nearest")
    m2 = correlate1d(correlate1d(g * g, win, 0, mode="nearest"), win, 1, mode="nearest")
    dev = np.sqrt(np.abs(m2 - mu * mu))
    for y in range(0, h2, patch):
        for x in range(0, w2, patch):
            f1 = nss_features(full_c[y:y + patch, x:x + patch])
            hy, hx = y // 2, x // 2
            f2 = nss_features(half_c[hy:hy + half, hx:hx + half])
            feats.append(np.concatenate([f1, f2]))
            sharp.append(dev[y:y + patch, x:x + patch].mean())
    feats = np.array(feats)
    if sharp_only:
        sharp = np.array(sharp)
        if sharp.max() > 0:
            feats = feats[sharp >= sharpness * sharp.max()]
    return feats


@dataclass
class QualityModel:
    """Pristine-corpus statistics backing the NIQE- and BRISQUE-style scores."""

    mu: np.ndarray
    cov: np.ndarray
    n_patches: int = 0

    def to_dict(self):
        return {"mu": self.mu.tolist(), "cov": self.cov.tolist(), "n_patches": self.n_patches}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mu"]), np.asarray(d["cov"]), int(d.get("n_patches", 0)))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_quality_model(images, patch=MIN_SIDE):
    """Fit pristine statistics from an iterable of good-quality images."""
    feats = [patch_features(img, patch, sharp_only=True) for img in images]
    feats = np.concatenate([f for f in feats if len(f)])
    if len(feats) < 2:
        raise ValueError("need at least two pristine patches to fit a quality model")
    return QualityModel(feats.mean(axis=0), np.cov(feats, rowvar=False), len(feats))


def _mahalanobis(diff, cov, shrink=0.1):
    # shrink toward the diagonal: pristine fits are often few patches in 36 dims
    diag = np.diag(np.diag(cov))
    reg = (1 - shrink) * cov + shrink * diag
    scale = np.trace(cov) / len(cov) if np.trace(cov) > 0 else 1.0
    reg = reg + 1e-6 * scale * np.eye(len(cov))
    return float(np.sqrt(max(0.0, diff @ np.linalg.pinv(reg) @ diff)))


def niqe_score(img, model, patch=MIN_SIDE):
    feats = patch_features(img, patch)
    mu = feats.mean(axis=0)
    cov = np.cov(feats, rowvar=False) if len(feats) > 1 else np.zeros_like(model.cov)
    return _mahalanobis(mu - model.mu, (model.cov + cov) / 2)


def brisque_score(img, model):
    return _mahalanobis(image_features(img) - model.mu, model.cov)


def score_image(img, model, nima=None):
    """Quality scores for one image; ``nima`` is ``None`` unless a scorer is plugged in."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if h < MIN_SIDE or w < MIN_SIDE:
        raise ValueError(f"image {h}x{w} below the {MIN_SIDE}x{MIN_SIDE} metric floor")
    return {
        "niqe": niqe_score(img, model),
        "brisque": brisque_score(img, model),
        "nima": float(nima(img)) if nima is not None else None,
    }


@dataclass
class QualityThresholds:
    """Gate thresholds; ``None`` disables a gate.

    NIQE/BRISQUE pass when ``score <= threshold``, NIMA when ``score >= threshold``.
    """

    niqe: float = None
    brisque: float = None
    nima: float = None

    def __post_init__(self):
        for name in ("niqe", "brisque", "nima"):
            v = getattr(self, name)
            if v is not None and not math.isfinite(v):
                raise ValueError(f"threshold {name} must be finite, got {v}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"niqe", "brisque", "nima"}
        if unknown:
            raise ValueError(f"unknown threshold keys: {sorted(unknown)}")
        return cls(**d)


LOWER_IS_BETTER = ("niqe", "brisque")


def gate(scores, thresholds):
    """Consensus gate: accept iff every enabled gate passes.

    Returns ``(accepted, reasons)`` where ``reasons`` names each failing gate.
    """
    reasons = []
    for name in ("niqe", "brisque", "nima"):
        t = getattr(thresholds, name)
        if t is None:
            continue
        s = scores.get(name)
        if s is None:
            raise ValueError(f"gate {name!r} enabled but no {name} score available")
        ok = s <= t if name in LOWER_IS_BETTER else s >= t
        if not ok:
            op = ">" if name in LOWER_IS_BETTER else "<"
            reasons.append(f"{name} {s:.4f} {op} {t:.4f}")
    return not reasons, reasons


def calibrate_thresholds(score_list, percentile=60.0,
                         gates=("niqe", "brisque")):
    """Thresholds passing ``percentile`` % of a calibration corpus per gate."""
    out = {}
    for name in gates:
        vals = np.array([s[name] for s in score_list if s.get(name) is not None])
        if not len(vals):
            continue
        q = percentile if name in LOWER_IS_BETTER else 100 - percentile
        out[name] = float(np.percentile(vals, q))
    return QualityThresholds(**out)


def extract_patches(img, size=512):
    """Non-overlapping ``size`` x ``size`` tiles in row-major order; remainder cropped."""
    img = np.asarray(img)
    h, w = img.shape[:2]
    return [img[y:y + size, x:x + size]
            for y in range(0, h - size + 1, size)
            for x in range(0, w - size + 1, size)]


def flat_fraction(patch, cell=16, tau=2.0):
    """Fraction of ``cell`` x ``cell`` cells whose luminance std is below ``tau``."""
    g = luminance(patch)
    h, w = (g.shape[0] // cell) * cell, (g.shape[1] // cell) * cell
    if h == 0 or w == 0:
        return 1.0
    cells = g[:h, :w].reshape(h // cell, cell, w // cell, cell)
    std = cells.std(axis=(1, 3))
    return float((std < tau).mean())


def reject_if_flat(patch, cell=16, tau=2.0, max_flat=0.5):
    return flat_fraction(patch, cell, tau) > max_flat


@dataclass
class CurationRecord:
    source: str
    width: int = 0
    height: int = 0
    scores: dict = field(default_factory=dict)
    accepted: bool = False
    reasons: list = field(default_factory=list)
    patches_total: int = 0
    patches_flat: int = 0
    patch_count: int = 0

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=False)


@dataclass
class CurationSummary:
    records: list = field(default_factory=list)
    patches: list = field(default_factory=list)

    @property
    def images_in(self):
        return len(self.records)

    @property
    def accepted(self):
        return sum(r.accepted for r in self.records)

    @property
    def rejected(self):
        return sum(not r.accepted for r in self.records)

    @property
    def patches_emitted(self):
        return sum(r.patch_count for r in self.records)

    def ledger(self):
        return {
            "images_in": self.images_in,
            "accepted": self.accepted,
            "rejected": self.rejected,
            "patches_emitted": self.patches_emitted,
        }


def curate_image(img, source, model, thresholds, patch_size=512, flat_cell=16,
                 flat_tau=2.0, nima=None):
    """Score, gate and tile one image. Returns ``(record, kept_patches)``."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    rec = CurationRecord(source, width=w, height=h)
    try:
        if model is not None:
            rec.scores = score_image(img, model, nima)
        ok, reasons = gate(rec.scores, thresholds)
    except ValueError as exc:
        ok, reasons = False, [str(exc)]
    rec.reasons.extend(reasons)

    patches = extract_patches(img, patch_size)
    rec.patches_total = len(patches)
    flags = [reject_if_flat(p, flat_cell, flat_tau) for p in patches]
    rec.patches_flat = sum(flags)
    kept = [p for p, flat in zip(patches, flags) if not flat]
    if not patches:
        rec.reasons.append(f"smaller than {patch_size}x{patch_size}: no patches")
    elif not kept:
        rec.reasons.append(f"flat: all {len(patches)} patches exceed 50% flat area")
    rec.accepted = ok and bool(kept)
    if not rec.accepted:
        kept = []
    rec.patch_count = len(kept)
    return rec, kept


def read_image_manifest(path):
    lines = Path(path).read_text().splitlines()
    return [ln.strip() for ln in lines if ln.strip() and not ln.strip().startswith("#")]


def curate(sources, out_dir, model, thresholds, patch_size=512, flat_cell=16, flat_tau=2.0,
           nima=None, loader=None):
    """Run the curation pipeline over image paths, writing patches and records.

    Output layout: ``out_dir/patches/<index>_<stem>/<k>.png`` and
    ``out_dir/records.jsonl`` (one CurationRecord per input, input order).
    Any existing ``out_dir/patches`` tree is replaced.
    """
    out_dir = Path(out_dir)
    # the patch tree is owned by this function; rebuild it so re-runs are idempotent
    shutil.rmtree(out_dir / "patches", ignore_errors=True)
    (out_dir / "patches").mkdir(parents=True, exist_ok=True)
    loader = loader or (lambda p: np.asarray(Image.open(p).convert("RGB"), dtype=np.float64))
    summary = CurationSummary()
    with open(out_dir / "records.jsonl", "w") as fh:
        for i, src in enumerate(sources):
            try:
                img = loader(src)
            except (OSError, ValueError) as exc:
                log.warning("undecodable image %s: %s", src, exc)
                rec, kept = CurationRecord(str(src), reasons=[f"undecodable: {exc}"]), []
            else:
                rec, kept = curate_image(img, str(src), model, thresholds, patch_size,
                                         flat_cell, flat_tau, nima)
            if kept:
                pdir = out_dir / "patches" / f"{i:06d}_{Path(str(src)).stem}"
                pdir.mkdir(parents=True, exist_ok=True)
                for k, p in enumerate(kept):
                    path = pdir / f"{k:04d}.png"
                    Image.fromarray(np.clip(np.round(p), 0, 255).astype(np.uint8)).save(path)
                    summary.patches.append(str(path))
            summary.records.append(rec)
            fh.write(rec.to_json() + "\n")
    return summary
