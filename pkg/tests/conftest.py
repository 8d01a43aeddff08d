"""
公共测试夹具
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from core.synthgen import BenchmarkConfig
from core.trainer import TrainConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_bench_cfg() -> BenchmarkConfig:
    """单元测试用的小规模基准"""
    return BenchmarkConfig(
        num_classes=3,
        clips_per_domain=6,
        val_clips=4,
        T=4,
        H=32,
        W=32,
        instances_per_clip=(1, 2),
        box_min=8,
        box_max=12,
        seed=7,
    )


@pytest.fixture
def tiny_train_cfg() -> TrainConfig:
    return TrainConfig(epochs=2, batch_size=4, hidden_dim=8, pool_grid=4, seed=3)


@pytest.fixture
def tiny_splits(tiny_bench_cfg):
    from core.synthgen import generate_splits

    return generate_splits(tiny_bench_cfg)
