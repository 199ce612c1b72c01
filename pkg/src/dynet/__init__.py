"""Weight-shared encoder-decoder restoration networks (DyNet family)."""

from dynet.arch import (
    DYNET_L,
    DYNET_S,
    DyNet,
    PromptBlock,
    VariantConfig,
    apply_level,
    build_model,
    load_checkpoint,
    save_checkpoint,
    switch_variant,
)
from dynet.blocks import GDFN, MDTA, ChannelLayerNorm, TransformerBlock, ConfigurationError
from dynet.analysis import CostReport, count_params, estimate_flops, cost_report

__version__ = "0.1.0"

__all__ = [
    "DYNET_L",
    "DYNET_S",
    "DyNet",
    "PromptBlock",
    "VariantConfig",
    "apply_level",
    "build_model",
    "load_checkpoint",
    "save_checkpoint",
    "switch_variant",
    "GDFN",
    "MDTA",
    "ChannelLayerNorm",
    "TransformerBlock",
    "ConfigurationError",
    "CostReport",
    "count_params",
    "estimate_flops",
    "cost_report",
]
