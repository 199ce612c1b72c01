"""Restormer-style transformer block: channel layer norm, MDTA and GDFN."""

import torch
import torch.nn as nn
import torch.nn.functional as F


class ConfigurationError(ValueError):
    """Raised when layer or model hyper-parameters are inconsistent."""


def hidden_width(channels, expansion=2.66):
    """Per-pathway GDFN width: ``expansion * channels`` rounded to the nearest even integer."""
    if expansion <= 1:
        raise ConfigurationError(f"GDFN expansion factor must be > 1, got {expansion}")
    return max(2, 2 * int(round(expansion * channels / 2)))


class ChannelLayerNorm(nn.Module):
    """Layer norm over the channel axis of a [B, C, H, W] map, per spatial position."""

    def __init__(self, channels, eps=1e-6):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def normalize(self, x):
        if x.shape[1] != self.channels:
            raise ConfigurationError(
                f"layer norm sized for {self.channels} channels, input has {x.shape[1]}"
            )
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        return (x - mu) / torch.sqrt(var + self.eps)

    def forward(self, x):
        y = self.normalize(x)
        return y * self.weight.view(1, -1, 1, 1) + self.bias.view(1, -1, 1, 1)


class MDTA(nn.Module):
    """Multi-Dconv head transposed attention.

    Attention is computed between channels: per head, a (C/heads) x (C/heads)
    map from L2-normalised queries and keys flattened over space, scaled by a
    learnable temperature. All convolutions are bias-free.
    """

    def __init__(self, channels, heads=1):
        super().__init__()
        if heads < 1 or channels % heads:
            raise ConfigurationError(f"head count {heads} does not divide {channels} channels")
        self.channels = channels
        self.heads = heads
        self.temperature = nn.Parameter(torch.ones(heads, 1, 1))
        self.qkv = nn.Conv2d(channels, channels * 3, 1, bias=False)
        self.qkv_dwconv = nn.Conv2d(
            channels * 3, channels * 3, 3, padding=1, groups=channels * 3, bias=False
        )
        self.project_out = nn.Conv2d(channels, channels, 1, bias=False)

    def attention_map(self, x):
        """Return (attn [B, heads, c, c], v [B, heads, c, HW]) for input ``x``."""
        b, c, h, w = x.shape
        if c != self.channels:
            raise ConfigurationError(f"MDTA sized for {self.channels} channels, input has {c}")
        q, k, v = self.qkv_dwconv(self.qkv(x)).chunk(3, dim=1)
        q = q.reshape(b, self.heads, c // self.heads, h * w)
        k = k.reshape(b, self.heads, c // self.heads, h * w)
        v = v.reshape(b, self.heads, c // self.heads, h * w)
        q = F.normalize(q, dim=-1)
        k = F.normalize(k, dim=-1)
        attn = (q @ k.transpose(-2, -1)) * self.temperature
        return attn.softmax(dim=-1), v

    def forward(self, x):
        b, c, h, w = x.shape
        attn, v = self.attention_map(x)
        out = (attn @ v).reshape(b, c, h, w)
        return self.project_out(out)


class GDFN(nn.Module):
    """Gated-Dconv feed-forward network with a GeLU gate between two pathways."""

    def __init__(self, channels, expansion=2.66):
        super().__init__()
        self.channels = channels
        self.hidden = hidden_width(channels, expansion)
        self.project_in = nn.Conv2d(channels, self.hidden * 2, 1, bias=False)
        # one grouped conv == two parallel depth-wise convs, one per pathway
        self.dwconv = nn.Conv2d(
            self.hidden * 2, self.hidden * 2, 3, padding=1, groups=self.hidden * 2, bias=False
        )
        self.project_out = nn.Conv2d(self.hidden, channels, 1, bias=False)

    def forward(self, x):
        x1, x2 = self.dwconv(self.project_in(x)).chunk(2, dim=1)
        out = self.project_out(F.gelu(x1) * x2)
        if not torch.isfinite(out).all():
            raise FloatingPointError("non-finite activation in GDFN")
        return out


class TransformerBlock(nn.Module):
    """Pre-norm residual block: ``x + MDTA(LN(x))`` then ``x + GDFN(LN(x))``."""

    def __init__(self, channels, heads=1, expansion=2.66, eps=1e-6):
        super().__init__()
        self.channels = channels
        self.heads = heads
        self.expansion = expansion
        self.norm1 = ChannelLayerNorm(channels, eps)
        self.attn = MDTA(channels, heads)
        self.norm2 = ChannelLayerNorm(channels, eps)
        self.ffn = GDFN(channels, expansion)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.ffn(self.norm2(x))

    def zero_output_projections(self):
        nn.init.zeros_(self.attn.project_out.weight)
        nn.init.zeros_(self.ffn.project_out.weight)
        return self
