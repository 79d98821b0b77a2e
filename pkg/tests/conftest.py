"""
测试公共夹具
"""

import numpy as np
import pytest

from ifa_vfi.model import build_model
from ifa_vfi.settings import ModelConfig
from ifa_vfi.tensor_core import Tensor


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_weights():
    return build_model(ModelConfig.preset("tiny"), seed=0)


@pytest.fixture
def random_pair(np_rng):
    def _make(h=32, w=32):
        i0 = Tensor(np_rng.uniform(0.0, 1.0, (1, 3, h, w)).astype(np.float32))
        i1 = Tensor(np_rng.uniform(0.0, 1.0, (1, 3, h, w)).astype(np.float32))
        return i0, i1
    return _make
