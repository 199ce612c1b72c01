"""Degradation synthesis for masked pre-training and supervised denoising pairs.

Images are float arrays on the 8-bit scale [0, 255], shaped (H, W) or
(H, W, C). Every random operation takes ``rng`` as a seed or a
``numpy.random.Generator``.
"""

import io
from dataclasses import asdict, dataclass, field

import numpy as np
from PIL import Image

DEGRADATIONS = ("gaussian", "uniform", "jpeg")


def _rng(rng):
    return np.random.default_rng(rng)


def add_gaussian_noise(img, sigma, rng=None, clip=True):
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    img = np.asarray(img, dtype=np.float64)
    if sigma == 0:
        return img.copy()
    out = img + _rng(rng).normal(0.0, sigma, size=img.shape)
    return np.clip(out, 0, 255) if clip else out


def add_uniform_noise(img, amplitude, rng=None, clip=True):
    """The "random noise" degradation: i.i.d. uniform noise in [-amplitude, amplitude]."""
    if amplitude < 0:
        raise ValueError(f"amplitude must be >= 0, got {amplitude}")
    img = np.asarray(img, dtype=np.float64)
    out = img + _rng(rng).uniform(-amplitude, amplitude, size=img.shape)
    return np.clip(out, 0, 255) if clip else out


def jpeg_artifacts(img, quality):
    """JPEG encode/decode round trip at ``quality`` (1-100)."""
    if not 1 <= quality <= 100:
        raise ValueError(f"JPEG quality must be in [1, 100], got {quality}")
    img = np.asarray(img)
    u8 = np.clip(np.round(img), 0, 255).astype(np.uint8)
    squeeze = u8.ndim == 3 and u8.shape[2] == 1
    if squeeze:
        u8 = u8[..., 0]
    buf = io.BytesIO()
    Image.fromarray(u8).save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    out = np.asarray(Image.open(buf)).astype(np.float64)
    if squeeze:
        out = out[..., None]
    return out


def _tile_mask(shape, fraction, unit, rng, exclude=None):
    h, w = shape
    free = np.ones((h, w), dtype=bool) if exclude is None else ~exclude
    target = fraction * h * w
    mask = np.zeros((h, w), dtype=bool)
    tiles = [(y, x) for y in range(0, h, unit) for x in range(0, w, unit)]
    masked = 0
    for idx in rng.permutation(len(tiles)):
        if masked >= target - 0.5 * unit * unit:
            break
        y, x = tiles[idx]
        cell = free[y:y + unit, x:x + unit]
        area = int(cell.sum())
        if area == 0 or masked + area > target + 0.5 * unit * unit:
            continue
        mask[y:y + unit, x:x + unit] |= cell
        masked += area
    return mask


def random_mask(img, fraction, unit=16, rng=None):
    """Zero random ``unit`` x ``unit`` tiles covering ``fraction`` of the image.

    Returns ``(masked_img, mask)`` where ``mask`` is a boolean (H, W) map of zeroed pixels.
    """
    if not 0 <= fraction <= 1:
        raise ValueError(f"mask fraction must be in [0, 1], got {fraction}")
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if unit < 1 or unit > min(h, w):
        raise ValueError(f"mask unit {unit} larger than image side {min(h, w)}")
    mask = _tile_mask((h, w), fraction, unit, _rng(rng))
    out = img.copy()
    out[mask] = 0
    return out, mask


@dataclass
class CorruptionRecipe:
    degrade_fraction: float = 0.5
    mask_fraction: float = 0.3
    mask_unit: int = 16
    crop_size: int = 128
    menu: tuple = DEGRADATIONS
    sigma_range: tuple = (5.0, 50.0)
    uniform_range: tuple = (10.0, 50.0)
    jpeg_quality_range: tuple = (30, 90)
    seed: int = None

    def __post_init__(self):
        self.menu = tuple(self.menu)
        for name in self.menu:
            if name not in DEGRADATIONS:
                raise ValueError(f"unknown degradation {name!r}; choose from {DEGRADATIONS}")
        if not (0 <= self.degrade_fraction <= 1 and 0 <= self.mask_fraction <= 1):
            raise ValueError("degrade_fraction and mask_fraction must be in [0, 1]")
        if self.degrade_fraction + self.mask_fraction > 1:
            raise ValueError(
                f"degrade_fraction + mask_fraction = "
                f"{self.degrade_fraction + self.mask_fraction} exceeds 1"
            )

    def to_dict(self):
        d = asdict(self)
        for k in ("menu", "sigma_range", "uniform_range", "jpeg_quality_range"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown recipe keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class PretrainSample:
    input: np.ndarray
    target: np.ndarray
    mask: np.ndarray
    region: np.ndarray
    degradation: str = None
    level: float = None
    extra: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.input, self.target, self.mask))


def _random_rect(shape, fraction, rng):
    h, w = shape
    area = fraction * h * w
    region = np.zeros((h, w), dtype=bool)
    if area <= 0:
        return region
    rh = int(rng.integers(max(1, int(np.ceil(area / w))), h + 1))
    rw = min(w, max(1, int(round(area / rh))))
    y = int(rng.integers(0, h - rh + 1))
    x = int(rng.integers(0, w - rw + 1))
    region[y:y + rh, x:x + rw] = True
    return region


def degrade(img, kind, recipe, rng):
    """Apply one menu degradation with a random level; returns ``(img, level)``."""
    if kind == "gaussian":
        level = float(rng.uniform(*recipe.sigma_range))
        return add_gaussian_noise(img, level, rng), level
    if kind == "uniform":
        level = float(rng.uniform(*recipe.uniform_range))
        return add_uniform_noise(img, level, rng), level
    if kind == "jpeg":
        lo, hi = recipe.jpeg_quality_range
        level = int(rng.integers(lo, hi + 1))
        return jpeg_artifacts(img, level), level
    raise ValueError(f"unknown degradation {kind!r}")


def compose_pretrain_sample(patch, recipe=None, rng=None):
    """Crop, degrade a rectangle, mask disjoint tiles.

    One degradation type and level per sample. The degraded rectangle covers
    ``degrade_fraction`` of the crop; masking covers ``mask_fraction`` and
    never touches the rectangle; the rest is left clean.
    """
    recipe = recipe or CorruptionRecipe()
    rng = _rng(recipe.seed if rng is None else rng)
    patch = np.asarray(patch, dtype=np.float64)
    s = recipe.crop_size
    h, w = patch.shape[:2]
    if h < s or w < s:
        raise ValueError(f"patch {h}x{w} smaller than crop size {s}")
    y = int(rng.integers(0, h - s + 1))
    x = int(rng.integers(0, w - s + 1))
    target = patch[y:y + s, x:x + s].copy()
    inp = target.copy()

    region = _random_rect((s, s), recipe.degrade_fraction, rng)
    kind = level = None
    if region.any() and recipe.menu:
        kind = recipe.menu[int(rng.integers(len(recipe.menu)))]
        degraded, level = degrade(target, kind, recipe, rng)
        inp[region] = degraded[region]

    mask = _tile_mask((s, s), recipe.mask_fraction, recipe.mask_unit, rng, exclude=region)
    inp[mask] = 0
    return PretrainSample(inp, target, mask, region, kind, level, {"crop": (y, x)})


def noisy_pair(clean, sigma, rng=None):
    """(noisy, clean) for supervised denoising at ``sigma`` (e.g. 15, 25, 50)."""
    return add_gaussian_noise(clean, sigma, rng), np.asarray(clean, dtype=np.float64)
