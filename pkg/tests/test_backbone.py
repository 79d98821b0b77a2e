import numpy as np
import pytest

from ifa_vfi.backbone import (
    EMBED_BRANCHES,
    SIZE_MULTIPLE,
    check_input_size,
    cross_scale_embed,
    low_level_extract,
    motion_appearance_extract,
)
from ifa_vfi.errors import ShapeError
from ifa_vfi.model import build_model
from ifa_vfi.settings import ModelConfig
from ifa_vfi.synthesis.pipeline import extract_features
from ifa_vfi.tensor_core import Tensor, no_grad


@pytest.fixture(scope="module")
def small_weights():
    return build_model(ModelConfig.preset("small"), seed=0)


@pytest.fixture(scope="module")
def small_features(small_weights):
    rng = np.random.default_rng(0)
    i0 = Tensor(rng.uniform(0, 1, (1, 3, 64, 64)).astype(np.float32))
    i1 = Tensor(rng.uniform(0, 1, (1, 3, 64, 64)).astype(np.float32))
    with no_grad():
        return extract_features(i0, i1, small_weights)


def test_pyramid_shapes(small_features):
    pyr = small_features.pyramid0
    assert pyr.L0.shape == (1, 16, 64, 64)
    assert pyr.L1.shape == (1, 32, 32, 32)
    assert pyr.L2.shape == (1, 64, 16, 16)


def test_embedding_shape(small_weights, small_features):
    with no_grad():
        embedded = cross_scale_embed(small_features.pyramid1, small_weights.scope("backbone"))
    assert embedded.shape == (1, 128, 8, 8)


def test_embedding_branch_layout(small_weights):
    assert SIZE_MULTIPLE == 16
    assert [(stride, dilations) for stride, dilations in EMBED_BRANCHES] == [(8, (1, 2, 4)), (4, (1, 2)), (2, (1,))]
    names = sorted(n for n in small_weights.names() if n.startswith("backbone.embed.l") and n.endswith(".weight"))
    assert names == [f"backbone.embed.{b}.weight" for b in ("l0_d1", "l0_d2", "l0_d4", "l1_d1", "l1_d2", "l2_d1")]
    # 6 支、每支 2C，融合到 8C
    assert small_weights["backbone.embed.fuse.weight"].shape == (128, 6 * 32)


def test_stage_shapes(small_features):
    stage1, stage2 = small_features.stages.stages()
    assert stage1.appearance0.shape == (1, 128, 8, 8)
    assert stage1.motion_feat01.shape == (1, 128, 8, 8)
    assert stage1.motion10.shape == (1, 2, 8, 8)
    assert stage2.appearance1.shape == (1, 256, 4, 4)
    assert stage2.motion01.shape == (1, 2, 4, 4)


@pytest.mark.parametrize("h, w", [(30, 32), (32, 40), (8, 16)])
def test_size_must_be_multiple_of_16(h, w):
    with pytest.raises(ShapeError):
        check_input_size(h, w)


def test_rejects_non_rgb(tiny_weights):
    with pytest.raises(ShapeError):
        low_level_extract(Tensor(np.zeros((1, 1, 32, 32))), tiny_weights.scope("backbone"))


def test_stage_channel_check(tiny_weights):
    feat = Tensor(np.zeros((1, 8, 4, 4)))
    with pytest.raises(ShapeError):
        motion_appearance_extract(feat, feat, tiny_weights.config, tiny_weights.scope("backbone"))


def test_swapping_frames_swaps_stage_outputs(tiny_weights, random_pair):
    i0, i1 = random_pair()
    with no_grad():
        fwd = extract_features(i0, i1, tiny_weights)
        rev = extract_features(i1, i0, tiny_weights)
    for a, b in zip(fwd.stages.stages(), rev.stages.stages()):
        np.testing.assert_array_equal(a.appearance0.data, b.appearance1.data)
        np.testing.assert_array_equal(a.motion_feat01.data, b.motion_feat10.data)
        np.testing.assert_array_equal(a.motion01.data, b.motion10.data)


def test_single_pixel_change_stays_local():
    """窗口 3：低层卷积、空洞嵌入与一个窗口的可达范围之外，stage 1 特征不变"""
    weights = build_model(ModelConfig.preset("tiny", window_size=3), seed=1)
    rng = np.random.default_rng(1)
    base0 = rng.uniform(0, 1, (1, 3, 32, 128)).astype(np.float32)
    base1 = rng.uniform(0, 1, (1, 3, 32, 128)).astype(np.float32)
    moved = base0.copy()
    moved[0, :, 16, 8] += 0.5
    with no_grad():
        ref = extract_features(Tensor(base0), Tensor(base1), weights).stages.stage1
        out = extract_features(Tensor(moved), Tensor(base1), weights).stages.stage1
    diff = np.abs(out.appearance0.data - ref.appearance0.data).max(axis=(0, 1, 2))
    assert diff[:2].max() > 0.0
    np.testing.assert_allclose(diff[6:], 0.0, atol=1e-6)
    diff_other = np.abs(out.appearance1.data - ref.appearance1.data).max(axis=(0, 1, 2))
    np.testing.assert_allclose(diff_other[6:], 0.0, atol=1e-6)
