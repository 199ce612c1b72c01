"""DyNet: 4-level encoder-decoder whose levels loop one shared transformer block.

Depth is set per level by a reuse frequency. Variants (DyNet-L, DyNet-S) are
just different reuse schedules over the same parameters, so switching is a
config change and one checkpoint serves every variant.
"""

from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from dynet.blocks import ConfigurationError, TransformerBlock

CHECKPOINT_FORMAT = "dynet-checkpoint/1"


@dataclass(frozen=True)
class VariantConfig:
    name: str
    reuse_freqs: tuple
    base_channels: int = 48

    def __post_init__(self):
        freqs = tuple(int(f) for f in self.reuse_freqs)
        if len(freqs) != 4:
            raise ConfigurationError(f"reuse_freqs needs 4 entries (levels 1-4), got {freqs}")
        if any(f < 1 for f in freqs):
            raise ConfigurationError(f"reuse_freqs entries must be >= 1, got {list(freqs)}")
        if self.base_channels < 1:
            raise ConfigurationError(f"base_channels must be >= 1, got {self.base_channels}")
        object.__setattr__(self, "reuse_freqs", freqs)

    @property
    def latent_reuse(self):
        # the bottom (latent) level takes the 4th schedule entry
        return self.reuse_freqs[3]

    def with_channels(self, base_channels):
        return VariantConfig(self.name, self.reuse_freqs, base_channels)


DYNET_L = VariantConfig("L", (4, 6, 6, 8))
DYNET_S = VariantConfig("S", (2, 3, 3, 4))
PRESETS = {"L": DYNET_L, "S": DYNET_S}


def variant(name, base_channels=48):
    """Look up a preset by name (``"L"`` / ``"S"``) at the given width."""
    try:
        return PRESETS[name].with_channels(base_channels)
    except KeyError:
        raise ConfigurationError(f"unknown variant {name!r}; presets are {sorted(PRESETS)}") from None


def _default_prompt_dims(channels):
    # PromptIR uses 64/128/320 at width 48; scale with width, round up to a multiple of 4
    return tuple(max(4, -(-round(d * channels / 48) // 4) * 4) for d in (64, 128, 320))


@dataclass
class ArchConfig:
    """Everything that fixes the parameter layout (not the depth)."""

    base_channels: int = 48
    expansion: float = 2.66
    heads: tuple = (1, 2, 4, 8)
    prompt_len: int = 5
    prompt_dims: tuple = None
    prompt_sizes: tuple = (96, 32, 16)
    prompt_heads: tuple = (4, 4, 4)
    resample_kernel: int = 3
    norm_eps: float = 1e-6
    in_channels: int = 3
    out_channels: int = 3
    presets: dict = field(
        default_factory=lambda: {k: list(v.reuse_freqs) for k, v in PRESETS.items()}
    )

    def __post_init__(self):
        self.heads = tuple(int(h) for h in self.heads)
        self.prompt_sizes = tuple(int(s) for s in self.prompt_sizes)
        self.prompt_heads = tuple(int(h) for h in self.prompt_heads)
        if self.prompt_dims is None:
            self.prompt_dims = _default_prompt_dims(self.base_channels)
        self.prompt_dims = tuple(int(d) for d in self.prompt_dims)
        self.presets = {
            name: list(VariantConfig(name, freqs, self.base_channels).reuse_freqs)
            for name, freqs in self.presets.items()
        }
        if len(self.heads) != 4:
            raise ConfigurationError(f"heads needs 4 entries, got {self.heads}")
        if not len(self.prompt_dims) == len(self.prompt_sizes) == len(self.prompt_heads) == 3:
            raise ConfigurationError(
                "prompt_dims, prompt_sizes and prompt_heads need one entry per skip (3)"
            )
        if self.prompt_len != 5:
            raise ConfigurationError(f"prompt banks hold exactly 5 components, got {self.prompt_len}")
        if self.resample_kernel not in (1, 3):
            raise ConfigurationError(f"resample_kernel must be 1 or 3, got {self.resample_kernel}")
        for level, h in enumerate(self.heads):
            width = self.base_channels * 2**level
            if width % h:
                raise ConfigurationError(f"heads[{level}]={h} does not divide level width {width}")
        for level in range(3):
            width = self.base_channels * 2**level + self.prompt_dims[level]
            if width % self.prompt_heads[level]:
                raise ConfigurationError(
                    f"prompt interaction width {width} at level {level + 1} "
                    f"not divisible by {self.prompt_heads[level]} heads"
                )

    def manifest(self):
        d = asdict(self)
        for k in ("heads", "prompt_dims", "prompt_sizes", "prompt_heads"):
            d[k] = list(d[k])
        return d


def resolve_variant(arch, name):
    """Variant ``name`` from the architecture's preset table (falls back to built-ins)."""
    if name in arch.presets:
        return VariantConfig(name, arch.presets[name], arch.base_channels)
    return variant(name, arch.base_channels)


def apply_level(x, block, f):
    """Run ``block`` on ``x`` ``f`` times in sequence (the self-loop)."""
    if f < 1:
        raise ConfigurationError(f"reuse frequency must be >= 1, got {f}")
    for _ in range(f):
        x = block(x)
    return x


class Downsample(nn.Module):
    # conv to C/2 then pixel-unshuffle: H/2, W/2, 2C
    def __init__(self, channels, kernel=3):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels // 2, kernel, padding=kernel // 2, bias=False)

    def forward(self, x):
        return F.pixel_unshuffle(self.conv(x), 2)


class Upsample(nn.Module):
    # conv to 2C then pixel-shuffle: 2H, 2W, C/2
    def __init__(self, channels, kernel=3):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels * 2, kernel, padding=kernel // 2, bias=False)

    def forward(self, x):
        return F.pixel_shuffle(self.conv(x), 2)


class PromptBlock(nn.Module):
    """Degradation-aware prompt at a skip connection.

    Generation: global-average-pool the skip features, softmax a linear map
    into weights over the 5 learnable components, take the weighted sum,
    resize it bilinearly to the skip resolution and pass it through a 3x3
    conv. Interaction: concatenate with the skip features, run one
    transformer block and project back to the skip width.
    """

    def __init__(self, channels, prompt_dim, prompt_size, prompt_len=5, heads=1,
                 expansion=2.66, eps=1e-6):
        super().__init__()
        self.channels = channels
        self.prompt_dim = prompt_dim
        self.components = nn.Parameter(torch.rand(prompt_len, prompt_dim, prompt_size, prompt_size))
        self.linear = nn.Linear(channels, prompt_len)
        self.conv3x3 = nn.Conv2d(prompt_dim, prompt_dim, 3, padding=1, bias=False)
        self.interact = TransformerBlock(channels + prompt_dim, heads, expansion, eps)
        self.reduce = nn.Conv2d(channels + prompt_dim, channels, 1, bias=False)

    def component_weights(self, x):
        if x.shape[1] != self.channels:
            raise ConfigurationError(
                f"prompt block sized for {self.channels} channels, skip has {x.shape[1]}"
            )
        return self.linear(x.mean(dim=(2, 3))).softmax(dim=1)

    def generate(self, x):
        w = self.component_weights(x)
        prompt = torch.einsum("bn,nchw->bchw", w, self.components)
        prompt = F.interpolate(prompt, size=x.shape[-2:], mode="bilinear", align_corners=False)
        return self.conv3x3(prompt)

    def forward(self, skip):
        fused = torch.cat([skip, self.generate(skip)], dim=1)
        return self.reduce(self.interact(fused))


def prompt_refine(skip, bank):
    return bank(skip)


class DyNet(nn.Module):
    """Shared-weight encoder-decoder; the active variant only sets loop counts."""

    def __init__(self, arch=None, variant_cfg=DYNET_L):
        super().__init__()
        arch = arch or ArchConfig()
        if variant_cfg.base_channels != arch.base_channels:
            variant_cfg = variant_cfg.with_channels(arch.base_channels)
        self.arch = arch
        self.variant = variant_cfg
        c, heads, g, eps = arch.base_channels, arch.heads, arch.expansion, arch.norm_eps
        k = arch.resample_kernel

        self.stem = nn.Conv2d(arch.in_channels, c, 3, padding=1, bias=False)
        self.encoders = nn.ModuleList(
            TransformerBlock(c * 2**i, heads[i], g, eps) for i in range(3)
        )
        self.downs = nn.ModuleList(Downsample(c * 2**i, k) for i in range(3))
        self.latent = TransformerBlock(c * 8, heads[3], g, eps)
        self.prompts = nn.ModuleList(
            PromptBlock(c * 2**i, arch.prompt_dims[i], arch.prompt_sizes[i], arch.prompt_len,
                        arch.prompt_heads[i], g, eps)
            for i in range(3)
        )
        # index i serves decoder level i+1; upsample i feeds it from level i+2
        self.ups = nn.ModuleList(Upsample(c * 2 ** (i + 1), k) for i in range(3))
        self.reduces = nn.ModuleList(
            nn.Conv2d(c * 2 ** (i + 1), c * 2**i, 1, bias=False) for i in range(3)
        )
        self.decoders = nn.ModuleList(
            TransformerBlock(c * 2**i, heads[i], g, eps) for i in range(3)
        )
        self.output = nn.Conv2d(c, arch.out_channels, 3, padding=1, bias=False)

    @property
    def reuse_freqs(self):
        return self.variant.reuse_freqs

    def check_image_size(self, img):
        h, w = img.shape[-2:]
        if h % 8 or w % 8:
            raise ValueError(
                f"input {h}x{w} must have H and W divisible by 8; "
                f"pad by ({(-h) % 8}, {(-w) % 8}) rows/cols"
            )

    def forward(self, img, return_latent=False):
        self.check_image_size(img)
        f = self.reuse_freqs
        x = self.stem(img)
        skips = []
        for i in range(3):
            x = apply_level(x, self.encoders[i], f[i])
            skips.append(x)
            x = self.downs[i](x)
        latent = apply_level(x, self.latent, f[3])
        x = latent
        for i in reversed(range(3)):
            x = self.ups[i](x)
            refined = self.prompts[i](skips[i])
            x = self.reduces[i](torch.cat([x, refined], dim=1))
            x = apply_level(x, self.decoders[i], f[i])
        out = self.output(x) + img
        return (out, latent) if return_latent else out

    def zero_init_output(self):
        """Zero the output conv so the network starts as the identity map."""
        nn.init.zeros_(self.output.weight)
        return self

    def level_blocks(self):
        """(name, block, reuse) for every looped block in execution order."""
        f = self.reuse_freqs
        out = [(f"encoders.{i}", self.encoders[i], f[i]) for i in range(3)]
        out.append(("latent", self.latent, f[3]))
        out += [(f"decoders.{i}", self.decoders[i], f[i]) for i in reversed(range(3))]
        return out


def build_model(cfg=DYNET_L, seed=0, arch=None, zero_output=False, **arch_overrides):
    """Build a DyNet for ``cfg``; identical seeds give identical weights for any variant."""
    if isinstance(cfg, str):
        arch = arch or ArchConfig(**arch_overrides)
        cfg = resolve_variant(arch, cfg)
    if arch is None:
        arch = ArchConfig(base_channels=cfg.base_channels, **arch_overrides)
    elif arch.base_channels != cfg.base_channels:
        raise ConfigurationError(
            f"variant width {cfg.base_channels} != architecture width {arch.base_channels}"
        )
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = DyNet(arch, cfg)
    if zero_output:
        model.zero_init_output()
    return model


def switch_variant(model, cfg):
    """Change the active reuse schedule in place. No parameter is touched."""
    if isinstance(cfg, str):
        cfg = resolve_variant(model.arch, cfg)
    if cfg.base_channels != model.arch.base_channels:
        raise ConfigurationError(
            f"variant {cfg.name!r} expects width {cfg.base_channels}, "
            f"model weights have width {model.arch.base_channels}"
        )
    model.variant = cfg
    return model


def save_checkpoint(path, model, **extra):
    """Write manifest + named parameters (no variant in the names) with torch.save."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "manifest": model.arch.manifest(),
        "params": {k: v.detach().clone() for k, v in model.state_dict().items()},
    }
    payload.update(extra)
    torch.save(payload, path)


def read_checkpoint(path):
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    return payload


def load_checkpoint(path, variant_cfg="L"):
    """Rebuild the model described by the checkpoint manifest under any variant.

    Returns ``(model, payload)``; ``payload`` carries whatever extra state was saved.
    """
    payload = read_checkpoint(path)
    arch = ArchConfig(**payload["manifest"])
    if isinstance(variant_cfg, str):
        variant_cfg = resolve_variant(arch, variant_cfg)
    model = DyNet(arch, variant_cfg)
    model.load_state_dict(payload["params"], strict=True)
    return model, payload
