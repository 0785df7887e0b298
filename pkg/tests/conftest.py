from __future__ import annotations

import pytest
import torch

from app.core.config import settings
from app.modules.dialog_data import synth_shapes_dataset
from app.modules.moe_transformer import MoEConfig
from app.modules.mov_encoder import MoVConfig
from app.modules.train_engine import MultimodalLM, load_record_samples


def pytest_collection_modifyitems(config, items):
    if settings.run_slow:
        return
    skip = pytest.mark.skip(reason="set LAB_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def tiny_lm_cfg() -> MoEConfig:
    return MoEConfig(
        n_layers=2, d_model=32, n_heads=2, d_ff=32, n_experts=8, k_active=2, vocab_size=300, max_seq_len=512
    )


@pytest.fixture
def tiny_vision_cfg() -> MoVConfig:
    # 64 canvas, 2x2 grid of 32px views, 2x2 tokens per view
    return MoVConfig(d_attn=16, d_conv=16, patch=16, d_llm=32, sub_res=32, target_res=64, attn_layers=1, attn_heads=2)


@pytest.fixture
def tiny_model(tiny_lm_cfg, tiny_vision_cfg) -> MultimodalLM:
    torch.manual_seed(0)
    return MultimodalLM(tiny_lm_cfg, tiny_vision_cfg)


@pytest.fixture
def shapes_dir(tmp_path):
    synth_shapes_dataset(tmp_path / "shapes", n=6, seed=0)
    return tmp_path / "shapes"


@pytest.fixture
def shapes_items(shapes_dir):
    return load_record_samples(shapes_dir / "records.jsonl")
