"""Parameter and FLOPs accounting for weight-shared DyNet models.

Counts are analytic: they are derived from layer shapes, never from running
the network. FLOPs follow the 2 x multiply-add convention; only
convolutions, linear layers and the attention / prompt matrix products are
counted (normalisation, activations and resampling are treated as free).
"""

import json
from dataclasses import asdict, dataclass, field

from dynet.arch import DyNet, switch_variant
from dynet.blocks import hidden_width

FLOPS_CONVENTION = "FLOPs = 2 x multiply-adds (conv, linear, attention/prompt matmuls)"

# published reference costs of the PromptIR baseline and DyNet
PROMPTIR_PARAMS = 37e6
PROMPTIR_GFLOPS = 242.355
REPORTED_DYNET_PARAMS = 16e6
REPORTED_DYNET_S_GFLOPS = 166.38
REPORTED_DYNET_L_GFLOPS = 242.35


def _conv_macs(cin, cout, k, hw, groups=1):
    return cout * (cin // groups) * k * k * hw


def block_macs(channels, heads, expansion, hw):
    """Multiply-adds of one transformer block on an ``hw``-pixel map."""
    d, h = channels, hidden_width(channels, expansion)
    mdta = (
        _conv_macs(d, 3 * d, 1, hw)
        + _conv_macs(3 * d, 3 * d, 3, hw, groups=3 * d)
        + 2 * (d * d // heads) * hw  # q.k^T and attn.v over all heads
        + _conv_macs(d, d, 1, hw)
    )
    gdfn = (
        _conv_macs(d, 2 * h, 1, hw)
        + _conv_macs(2 * h, 2 * h, 3, hw, groups=2 * h)
        + _conv_macs(h, d, 1, hw)
    )
    return mdta + gdfn


def block_params(channels, heads, expansion):
    d, h = channels, hidden_width(channels, expansion)
    norms = 2 * 2 * d
    mdta = heads + 3 * d * d + 3 * d * 9 + d * d
    gdfn = 2 * h * d + 2 * h * 9 + h * d
    return norms + mdta + gdfn


def prompt_macs(channels, prompt_dim, prompt_size, prompt_len, heads, expansion, hw):
    w = prompt_dim + channels
    return (
        channels * prompt_len  # linear over pooled features
        + prompt_len * prompt_dim * prompt_size**2  # weighted component sum
        + _conv_macs(prompt_dim, prompt_dim, 3, hw)
        + block_macs(w, heads, expansion, hw)
        + _conv_macs(w, channels, 1, hw)
    )


@dataclass
class CostReport:
    variant: str
    reuse_freqs: list
    unique_params: int
    unrolled_params: int
    flops: int
    input_size: tuple
    levels: dict = field(default_factory=dict)
    convention: str = FLOPS_CONVENTION

    @property
    def gflops(self):
        return self.flops / 1e9

    def to_dict(self):
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        d["gflops"] = self.gflops
        return d


def count_params(model):
    """Return ``(unique, unrolled)`` parameter counts for the active variant.

    ``unique`` counts each stored tensor once; ``unrolled`` is what an untied
    network of the same depth would store (each looped block counted once per
    application).
    """
    seen = {}
    for p in model.parameters():
        seen[id(p)] = p.numel()
    unique = sum(seen.values())
    extra = 0
    for _, block, f in model.level_blocks():
        extra += (f - 1) * sum(p.numel() for p in block.parameters())
    return unique, unique + extra


def _level_flops(model, height, width):
    """Per-component MACs for one forward pass at the active schedule."""
    if height % 8 or width % 8:
        raise ValueError(f"input {height}x{width} must be divisible by 8")
    arch = model.arch
    c, g, heads = arch.base_channels, arch.expansion, arch.heads
    f = model.reuse_freqs
    k = arch.resample_kernel
    hw = [(height // 2**i) * (width // 2**i) for i in range(4)]
    levels = {
        "stem": _conv_macs(arch.in_channels, c, 3, hw[0]),
        "output": _conv_macs(c, arch.out_channels, 3, hw[0]),
    }
    for i in range(3):
        d = c * 2**i
        levels[f"encoders.{i}"] = f[i] * block_macs(d, heads[i], g, hw[i])
        levels[f"decoders.{i}"] = f[i] * block_macs(d, heads[i], g, hw[i])
        levels[f"downs.{i}"] = _conv_macs(d, d // 2, k, hw[i])
        levels[f"ups.{i}"] = _conv_macs(2 * d, 4 * d, k, hw[i + 1])
        levels[f"reduces.{i}"] = _conv_macs(2 * d, d, 1, hw[i])
        levels[f"prompts.{i}"] = prompt_macs(
            d, arch.prompt_dims[i], arch.prompt_sizes[i], arch.prompt_len,
            arch.prompt_heads[i], g, hw[i],
        )
    levels["latent"] = f[3] * block_macs(8 * c, heads[3], g, hw[3])
    return {name: 2 * macs for name, macs in levels.items()}


def estimate_flops(model, height=224, width=224, breakdown=False):
    """FLOPs of one forward pass on a single ``height`` x ``width`` image."""
    levels = _level_flops(model, height, width)
    total = sum(levels.values())
    return (total, levels) if breakdown else total


def cost_report(model, height=224, width=224):
    unique, unrolled = count_params(model)
    total, levels = estimate_flops(model, height, width, breakdown=True)
    return CostReport(
        variant=model.variant.name,
        reuse_freqs=list(model.reuse_freqs),
        unique_params=unique,
        unrolled_params=unrolled,
        flops=total,
        input_size=(height, width),
        levels=levels,
    )


def compare_variants(model, variants, height=224, width=224):
    """Cost reports for each variant over the same weights; restores the active variant."""
    original = model.variant
    try:
        reports = []
        for v in variants:
            switch_variant(model, v)
            reports.append(cost_report(model, height, width))
    finally:
        switch_variant(model, original)
    return reports


def reduction(reference, value):
    """Percentage saved by ``value`` relative to ``reference``."""
    return 100.0 * (reference - value) / reference


def reported_reductions():
    """Param and GFLOPs reductions of DyNet-S against PromptIR from the published constants."""
    return {
        "params_pct": reduction(PROMPTIR_PARAMS, REPORTED_DYNET_PARAMS),
        "gflops_pct": reduction(PROMPTIR_GFLOPS, REPORTED_DYNET_S_GFLOPS),
    }


def format_reports(reports):
    """Side-by-side human table for a list of CostReports."""
    if not reports:
        return ""
    h, w = reports[0].input_size
    names = [r.variant for r in reports]
    rows = [
        ("reuse", [str(r.reuse_freqs) for r in reports]),
        ("unique params (M)", [f"{r.unique_params / 1e6:.3f}" for r in reports]),
        ("unrolled params (M)", [f"{r.unrolled_params / 1e6:.3f}" for r in reports]),
        (f"GFLOPs @ {h}x{w}", [f"{r.gflops:.2f}" for r in reports]),
    ]
    if len(reports) > 1:
        base = reports[0]
        rows.append(("GFLOPs ratio vs " + base.variant, [f"{r.flops / base.flops:.4f}" for r in reports]))
    width0 = max(len(label) for label, _ in rows)
    colw = max(12, *(len(v) for _, vals in rows for v in vals))
    lines = [f"# {FLOPS_CONVENTION}", " " * width0 + "  " + "  ".join(n.rjust(colw) for n in names)]
    for label, vals in rows:
        lines.append(label.ljust(width0) + "  " + "  ".join(v.rjust(colw) for v in vals))
    return "\n".join(lines)


def write_report(path, reports):
    with open(path, "w") as fh:
        json.dump(
            {"convention": FLOPS_CONVENTION, "reports": [r.to_dict() for r in reports],
             "reported_reductions": reported_reductions()},
            fh, indent=2,
        )


__all__ = [
    "CostReport",
    "DyNet",
    "block_macs",
    "block_params",
    "compare_variants",
    "cost_report",
    "count_params",
    "estimate_flops",
    "format_reports",
    "reported_reductions",
    "reduction",
    "write_report",
]
