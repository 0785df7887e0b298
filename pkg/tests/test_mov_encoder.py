import numpy as np
import pytest
import torch

from app.core.errors import ConfigurationError, InputError, InternalError
from app.modules.mov_encoder import (
    MOV_PRESETS,
    EncoderOutput,
    MixtureOfVisualExperts,
    MoVConfig,
    fuse,
    resample_grid,
)


@pytest.fixture
def base_cfg() -> MoVConfig:
    return MoVConfig(d_attn=64, d_conv=64, patch=32, d_llm=128, sub_res=224)


def test_attn_grid_shapes(base_cfg):
    torch.manual_seed(0)
    mov = MixtureOfVisualExperts(base_cfg)
    out = mov.encode_attn(np.zeros((224, 224, 3), dtype=np.float32))
    assert tuple(out.grid.shape) == (1, 7, 7, 64)
    assert torch.isfinite(out.grid).all()

    fine = MixtureOfVisualExperts(base_cfg.model_copy(update={"patch": 16}))
    assert fine.encode_attn(np.zeros((224, 224, 3))).side == 14


def test_conv_grid_and_resample(base_cfg):
    torch.manual_seed(0)
    mov = MixtureOfVisualExperts(base_cfg)
    assert tuple(mov.encode_conv(np.zeros((224, 224, 3))).grid.shape) == (1, 7, 7, 64)

    cfg16 = MoVConfig.model_validate({**base_cfg.model_dump(), "conv_stride": 16})
    mov16 = MixtureOfVisualExperts(cfg16)
    raw = mov16.conv(torch.zeros(1, 3, 224, 224))
    assert tuple(raw.shape) == (1, 14, 14, 64)
    assert mov16.encode_conv(np.zeros((224, 224, 3))).side == 7


def test_resample_matches_nearest_on_constant_field():
    field = torch.full((1, 14, 14, 5), 3.5)
    pooled = resample_grid(EncoderOutput(grid=field, channels=5), 7)
    torch.testing.assert_close(pooled.grid, field[:, ::2, ::2, :])
    with pytest.raises(InternalError):
        resample_grid(EncoderOutput(grid=field, channels=5), 4)


def test_conv_is_spatially_constant_on_constant_input(base_cfg):
    torch.manual_seed(1)
    mov = MixtureOfVisualExperts(base_cfg)
    grid = mov.encode_conv(np.full((224, 224, 3), 128.0)).grid[0]
    torch.testing.assert_close(grid, grid[0, 0].expand_as(grid), atol=1e-5, rtol=0)


@pytest.mark.parametrize("value", [0.0, 255.0])
def test_finite_on_extremes(value):
    torch.manual_seed(0)
    mov = MixtureOfVisualExperts(MOV_PRESETS["mov-nano"])
    tokens = mov(np.full((64, 64, 3), value, dtype=np.float32))
    assert torch.isfinite(tokens).all()


def test_wrong_resolution(base_cfg):
    mov = MixtureOfVisualExperts(base_cfg)
    with pytest.raises(InputError):
        mov.encode_attn(np.zeros((200, 224, 3)))


def test_fuse_concatenates_in_order():
    x = EncoderOutput(grid=torch.randn(1, 7, 7, 64), channels=64)
    z = EncoderOutput(grid=torch.zeros(1, 7, 7, 64), channels=64)
    fused = fuse(x, z)
    assert tuple(fused.shape) == (1, 7, 7, 128)
    torch.testing.assert_close(fused[..., :64], x.grid)
    assert fused[..., 64:].eq(0).all()
    assert not torch.equal(fuse(x, z), fuse(z, x))
    with pytest.raises(InternalError):
        fuse(x, EncoderOutput(grid=torch.zeros(1, 6, 6, 64), channels=64))


def test_project_shapes_and_identity(base_cfg):
    mov = MixtureOfVisualExperts(base_cfg)
    fused = torch.randn(2, 7, 7, 128)
    assert tuple(mov.project(fused).shape) == (2, 49, 128)

    with torch.no_grad():
        mov.proj.weight.copy_(torch.eye(128))
        mov.proj.bias.zero_()
    torch.testing.assert_close(mov.project(fused), fused.reshape(2, 49, 128))

    with pytest.raises(ConfigurationError):
        mov.project(torch.randn(1, 7, 7, 100))


def test_projection_gradient_matches_central_differences():
    cfg = MoVConfig(d_attn=2, d_conv=2, patch=4, d_llm=3, sub_res=8, attn_heads=1)
    torch.manual_seed(0)
    mov = MixtureOfVisualExperts(cfg).double()
    fused = torch.randn(1, 2, 2, 4, dtype=torch.float64)

    def objective() -> torch.Tensor:
        return (mov.project(fused) ** 2).sum()

    objective().backward()
    analytic = mov.proj.weight.grad.clone()
    h = 1e-3
    numeric = torch.zeros_like(analytic)
    with torch.no_grad():
        for idx in np.ndindex(*analytic.shape):
            orig = mov.proj.weight[idx].item()
            mov.proj.weight[idx] = orig + h
            up = objective().item()
            mov.proj.weight[idx] = orig - h
            down = objective().item()
            mov.proj.weight[idx] = orig
            numeric[idx] = (up - down) / (2 * h)
    rel = (analytic - numeric).norm() / numeric.norm()
    assert rel < 1e-4


def test_encoders_frozen_projection_trainable(base_cfg):
    mov = MixtureOfVisualExperts(base_cfg)
    assert all(not p.requires_grad for p in mov.encoder_parameters())
    assert all(p.requires_grad for p in mov.proj.parameters())
    mov.train()
    assert not mov.attn.training and not mov.conv.training


def test_encode_views_token_block():
    torch.manual_seed(0)
    cfg = MOV_PRESETS["mov-nano"]
    mov = MixtureOfVisualExperts(cfg)
    global_view, subs = torch.zeros(64, 64, 3), {(0, 0): torch.ones(64, 64, 3), (1, 1): torch.ones(64, 64, 3)}
    g, blocks = mov.encode_views(global_view, subs)
    assert tuple(g.shape) == (cfg.tokens_per_view, cfg.d_llm)
    assert sorted(blocks) == [(0, 0), (1, 1)]
    torch.testing.assert_close(blocks[(0, 0)], blocks[(1, 1)])
