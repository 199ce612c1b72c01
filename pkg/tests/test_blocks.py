import copy

import pytest
import torch

from dynet.analysis import block_params
from dynet.blocks import (
    GDFN,
    MDTA,
    ChannelLayerNorm,
    ConfigurationError,
    TransformerBlock,
    hidden_width,
)
from oracles import central_difference_grad, relative_error


def test_layer_norm_statistics():
    torch.manual_seed(0)
    x = torch.randn(2, 16, 5, 7, dtype=torch.float64) * 3 + 1
    y = ChannelLayerNorm(16).double().normalize(x)
    assert y.shape == x.shape
    assert y.mean(1).abs().max() < 1e-4
    assert (y.var(1, unbiased=False) - 1).abs().max() < 1e-4


def test_layer_norm_constant_channels_is_zero():
    x = torch.full((1, 4, 8, 8), 7.5)
    ln = ChannelLayerNorm(4)
    assert torch.all(ln.normalize(x) == 0)
    assert ln(x).shape == (1, 4, 8, 8)


def test_layer_norm_channel_mismatch():
    with pytest.raises(ConfigurationError):
        ChannelLayerNorm(4)(torch.zeros(1, 3, 2, 2))


def test_mdta_shapes_and_softmax_rows():
    torch.manual_seed(0)
    m = MDTA(8, heads=2)
    x = torch.randn(1, 8, 16, 16)
    attn, v = m.attention_map(x)
    assert attn.shape == (1, 2, 4, 4)
    assert v.shape == (1, 2, 4, 256)
    assert torch.allclose(attn.sum(-1), torch.ones(1, 2, 4), atol=1e-5)
    assert m(x).shape == x.shape


def test_mdta_single_pixel_map_is_one():
    m = MDTA(1, heads=1)
    attn, _ = m.attention_map(torch.randn(1, 1, 1, 1))
    assert attn.item() == 1.0


def test_mdta_map_size_independent_of_space():
    m = MDTA(8, heads=4)
    a1, _ = m.attention_map(torch.randn(1, 8, 8, 8))
    a2, _ = m.attention_map(torch.randn(1, 8, 16, 16))
    assert a1.shape == a2.shape == (1, 4, 2, 2)


def test_mdta_is_bias_free():
    m = MDTA(8, 2)
    for conv in (m.qkv, m.qkv_dwconv, m.project_out):
        assert conv.bias is None


def test_mdta_head_mismatch():
    with pytest.raises(ConfigurationError):
        MDTA(8, heads=3)


def test_gdfn_hidden_width():
    assert hidden_width(48, 2.66) == 128
    assert GDFN(48).project_in.out_channels == 256
    with pytest.raises(ConfigurationError):
        hidden_width(48, 1.0)


def test_gdfn_zero_in_zero_out():
    g = GDFN(48)
    x = torch.zeros(1, 48, 32, 32)
    assert torch.equal(g(x), x)


def test_gdfn_non_finite_surfaces():
    g = GDFN(4)
    with pytest.raises(FloatingPointError):
        g(torch.full((1, 4, 4, 4), float("nan")))


def test_block_identity_with_zeroed_projections():
    torch.manual_seed(0)
    blk = TransformerBlock(8, 2).zero_output_projections()
    x = torch.randn(2, 8, 16, 16)
    assert torch.equal(blk(x), x)


@pytest.mark.parametrize("shape", [(2, 48, 64, 64), (1, 8, 3, 5), (1, 16, 1, 1)])
def test_block_shape_preserved(shape):
    c = shape[1]
    blk = TransformerBlock(c, heads=2 if c % 2 == 0 else 1)
    with torch.no_grad():
        assert blk(torch.randn(*shape)).shape == shape


@pytest.mark.parametrize("channels,heads", [(48, 1), (48, 2), (96, 4), (8, 1)])
def test_param_count_matches_analysis(channels, heads):
    blk = TransformerBlock(channels, heads)
    assert sum(p.numel() for p in blk.parameters()) == block_params(channels, heads, 2.66)


def test_param_count_independent_of_resolution():
    blk = TransformerBlock(8, 2)
    n = sum(p.numel() for p in blk.parameters())
    blk(torch.randn(1, 8, 4, 4))
    blk(torch.randn(1, 8, 32, 32))
    assert sum(p.numel() for p in blk.parameters()) == n


def test_block_finite_difference_gradients():
    torch.manual_seed(0)
    blk = TransformerBlock(8, 2).double()
    # non-trivial residual branches
    with torch.no_grad():
        for p in blk.parameters():
            p.add_(0.1 * torch.randn_like(p))
    x = torch.randn(1, 8, 8, 8, dtype=torch.float64)
    proj = torch.randn(1, 8, 8, 8, dtype=torch.float64)
    loss_fn = lambda: (blk(x) * proj).sum()

    blk.zero_grad()
    loss_fn().backward()
    for name, p in blk.named_parameters():
        analytic = p.grad.detach().clone()
        numeric = central_difference_grad(loss_fn, p, eps=1e-6)
        assert relative_error(analytic, numeric) < 1e-3, name


def test_input_gradcheck():
    torch.manual_seed(1)
    blk = TransformerBlock(8, 2).double()
    x = torch.randn(1, 8, 8, 8, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(blk, (x,), eps=1e-6, atol=1e-6, rtol=1e-3)


def test_forward_is_pure():
    torch.manual_seed(0)
    blk = TransformerBlock(8, 2)
    x = torch.randn(1, 8, 8, 8)
    before = copy.deepcopy(blk.state_dict())
    y1, y2 = blk(x), blk(x)
    assert torch.equal(y1, y2)
    for k, v in blk.state_dict().items():
        assert torch.equal(v, before[k])
