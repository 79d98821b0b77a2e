import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.special import erf

from ifa_vfi.attention import (
    AttentionConfig,
    attention_deltas,
    block_configs,
    build_coordinate_map,
    compute_attention_map,
    declare_block,
    effective_shift,
    inter_frame_attention,
    run_stage,
    scale_motion,
    transformer_block,
    window_partition,
    window_reverse,
)
from ifa_vfi.errors import ShapeError
from ifa_vfi.model import ModelWeights
from ifa_vfi.settings import ModelConfig
from ifa_vfi.tensor_core import SeededRng, Tensor, no_grad


def attention_scope(channels, seed=0):
    weights = ModelWeights(ModelConfig.preset("tiny"), SeededRng(seed))
    scope = weights.scope("attn")
    for name in ("q", "k", "v", "proj"):
        scope.declare_linear(name, channels, channels)
    return weights, scope


def _region(x, n_pad, window, shift):
    """移位后的行（列）区域：0 常规，1 / 2 为循环移位拼接进来的两段"""
    if not shift or x < n_pad - window:
        return 0
    return 1 if x < n_pad - shift else 2


def window_key(i, j, h, w, window, shift):
    """像素 (i, j) 在循环移位后的网格中所属 (窗口, 区域)；同键的像素才能互相看到"""
    hp, wp = -(-h // window) * window, -(-w // window) * window
    ri, rj = (i - shift) % hp, (j - shift) % wp
    return ri // window, rj // window, _region(ri, hp, window, shift), _region(rj, wp, window, shift)


def brute_force(a0, a1, weights, window, heads, shift=0):
    """逐对枚举 query-key；只有原图内、且与 query 同窗口同区域的 key 可见"""
    wq, wk, wv, wp = (weights[f"attn.{n}.weight"].data.astype(np.float64) for n in ("q", "k", "v", "proj"))
    c, h, w = a0.shape
    d = c // heads
    q = np.einsum("oc,chw->ohw", wq, a0)
    k = np.einsum("oc,chw->ohw", wk, a1)
    v = np.einsum("oc,chw->ohw", wv, a1)
    xs = np.linspace(-1, 1, w) if w > 1 else np.zeros(1)
    ys = np.linspace(-1, 1, h) if h > 1 else np.zeros(1)
    out = np.zeros((c, h, w))
    motion = np.zeros((2, h, w))
    for i in range(h):
        for j in range(w):
            home = window_key(i, j, h, w, window, shift)
            keys = [(a, b) for a in range(h) for b in range(w) if window_key(a, b, h, w, window, shift) == home]
            for head in range(heads):
                sl = slice(head * d, (head + 1) * d)
                logits = np.array([q[sl, i, j] @ k[sl, a, b] for a, b in keys]) / np.sqrt(d)
                s = np.exp(logits - logits.max())
                s /= s.sum()
                out[sl, i, j] = sum(sk * v[sl, a, b] for sk, (a, b) in zip(s, keys))
                motion[0, i, j] += sum(sk * (xs[b] - xs[j]) for sk, (a, b) in zip(s, keys)) / heads
                motion[1, i, j] += sum(sk * (ys[a] - ys[i]) for sk, (a, b) in zip(s, keys)) / heads
    return a0 + np.einsum("oc,chw->ohw", wp, out), motion


class TestCoordinateMap:
    def test_single_row(self):
        coords = build_coordinate_map(1, 5).values.data[0]
        np.testing.assert_allclose(coords[0, 0], [-1.0, -0.5, 0.0, 0.5, 1.0])
        np.testing.assert_array_equal(coords[1], 0.0)

    def test_corners(self):
        coords = build_coordinate_map(3, 4).values.data[0]
        assert tuple(coords[:, 0, 0]) == (-1.0, -1.0)
        assert tuple(coords[:, -1, -1]) == (1.0, 1.0)

    def test_single_pixel(self):
        cmap = build_coordinate_map(1, 1)
        np.testing.assert_array_equal(cmap.values.data, 0.0)
        assert cmap.step == (0.0, 0.0)


class TestWindows:
    @pytest.mark.parametrize("h, w, shift", [(7, 7, 0), (10, 9, 0), (10, 9, 3), (14, 21, 3), (3, 5, 0)])
    def test_partition_round_trip(self, np_rng, h, w, shift):
        x = Tensor(np_rng.normal(size=(2, 3, h, w)))
        windows, layout = window_partition(x, 7, shift)
        assert windows.shape == (2, layout.num_windows, 49, 3)
        np.testing.assert_array_equal(window_reverse(windows, layout).data, x.data)

    def test_invalid_shift(self):
        with pytest.raises(ValueError):
            window_partition(Tensor(np.zeros((1, 1, 7, 7))), 7, 2)

    def test_shift_disabled_for_single_window(self):
        assert effective_shift(5, 7, 7, shifted=True) == 0
        assert effective_shift(8, 7, 7, shifted=True) == 3
        assert effective_shift(14, 14, 7, shifted=False) == 0


class TestAttentionConfig:
    def test_heads_from_channels(self):
        assert AttentionConfig.for_stage(128, 7).num_heads == 8
        assert AttentionConfig.for_stage(12, 7).num_heads == 1
        assert AttentionConfig.for_stage(64, 7, shifted=True).shift == 3

    def test_even_window_rejected(self):
        with pytest.raises(ValueError):
            AttentionConfig(window_size=4, channels=4)

    def test_alternating_shift(self):
        assert [c.shifted for c in block_configs(16, 4, 7)] == [False, True, False, True]


class TestInterFrameAttention:
    @settings(max_examples=100, deadline=None)
    @given(h=st.integers(1, 8), w=st.integers(1, 8), heads=st.integers(1, 2), head_dim=st.integers(1, 3),
           window=st.sampled_from([3, 9]), seed=st.integers(0, 100_000))
    def test_matches_brute_force(self, h, w, heads, head_dim, window, seed):
        channels = heads * head_dim
        rng = np.random.default_rng(seed)
        a0 = rng.normal(size=(1, channels, h, w))
        a1 = rng.normal(size=(1, channels, h, w))
        weights, scope = attention_scope(channels, seed)
        cfg = AttentionConfig(window_size=window, channels=channels, num_heads=heads)
        with no_grad():
            out = inter_frame_attention(Tensor(a0), Tensor(a1), cfg, scope)
        ref_app, ref_motion = brute_force(a0[0], a1[0], weights, window, heads)
        np.testing.assert_allclose(out.appearance0.data[0], ref_app, rtol=1e-5, atol=1e-9)
        np.testing.assert_allclose(out.motion01.data[0], ref_motion, rtol=1e-5, atol=1e-9)
        ref_app1, ref_motion1 = brute_force(a1[0], a0[0], weights, window, heads)
        np.testing.assert_allclose(out.appearance1.data[0], ref_app1, rtol=1e-5, atol=1e-9)
        np.testing.assert_allclose(out.motion10.data[0], ref_motion1, rtol=1e-5, atol=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(window=st.sampled_from([3, 5]), h=st.integers(4, 11), w=st.integers(4, 11), heads=st.integers(1, 2),
           seed=st.integers(0, 100_000))
    def test_shifted_windows_match_brute_force(self, window, h, w, heads, seed):
        assume(h % window and w % window and max(h, w) > window)
        channels = 2 * heads
        rng = np.random.default_rng(seed)
        a0 = rng.normal(size=(1, channels, h, w))
        a1 = rng.normal(size=(1, channels, h, w))
        weights, scope = attention_scope(channels, seed)
        cfg = AttentionConfig(window_size=window, channels=channels, num_heads=heads, shifted=True)
        shift = effective_shift(h, w, window, shifted=True)
        assert shift == window // 2
        with no_grad():
            out = inter_frame_attention(Tensor(a0), Tensor(a1), cfg, scope)
        ref_app, ref_motion = brute_force(a0[0], a1[0], weights, window, heads, shift)
        np.testing.assert_allclose(out.appearance0.data[0], ref_app, rtol=1e-5, atol=1e-9)
        np.testing.assert_allclose(out.motion01.data[0], ref_motion, rtol=1e-5, atol=1e-9)
        ref_app1, ref_motion1 = brute_force(a1[0], a0[0], weights, window, heads, shift)
        np.testing.assert_allclose(out.appearance1.data[0], ref_app1, rtol=1e-5, atol=1e-9)
        np.testing.assert_allclose(out.motion10.data[0], ref_motion1, rtol=1e-5, atol=1e-9)

    def test_shifted_region_labels(self):
        # 7 行补齐到 9 行后移位 1：原第 0 行落入区域 2，填充的第 7、8 行落入区域 1
        assert [window_key(i, 0, 7, 3, 3, 1)[2] for i in range(9)] == [2, 0, 0, 0, 0, 0, 0, 1, 1]

    @settings(max_examples=100, deadline=None)
    @given(h=st.integers(1, 16), w=st.integers(1, 16), shifted=st.booleans(), seed=st.integers(0, 100_000))
    def test_rows_normalized_and_masked(self, h, w, shifted, seed):
        rng = np.random.default_rng(seed)
        _, scope = attention_scope(4, seed)
        cfg = AttentionConfig(window_size=7, channels=4, num_heads=2, shifted=shifted)
        with no_grad():
            amap, _ = compute_attention_map(Tensor(rng.normal(size=(1, 4, h, w)).astype(np.float32)),
                                            Tensor(rng.normal(size=(1, 4, h, w)).astype(np.float32)), cfg, scope)
        s = amap.weights.data.astype(np.float64)
        assert np.all(s >= 0)
        rows = s.sum(axis=-1)
        np.testing.assert_allclose(rows[..., amap.layout.query_valid], 1.0, atol=1e-6)
        np.testing.assert_array_equal(rows[..., ~amap.layout.query_valid], 0.0)
        assert np.all(s[..., ~amap.layout.valid] == 0.0)

    @settings(max_examples=50, deadline=None)
    @given(h=st.integers(2, 20), w=st.integers(2, 20), shifted=st.booleans(), seed=st.integers(0, 100_000))
    def test_motion_within_window_reach(self, h, w, shifted, seed):
        rng = np.random.default_rng(seed)
        _, scope = attention_scope(4, seed)
        cfg = AttentionConfig(window_size=5, channels=4, num_heads=1, shifted=shifted)
        with no_grad():
            out = inter_frame_attention(Tensor(rng.normal(size=(1, 4, h, w)) * 3.0),
                                        Tensor(rng.normal(size=(1, 4, h, w)) * 3.0), cfg, scope)
        dx, dy = build_coordinate_map(h, w).step
        motion = out.motion01.data[0]
        assert np.all(np.abs(motion[0]) <= 4 * dx + 1e-6)
        assert np.all(np.abs(motion[1]) <= 4 * dy + 1e-6)

    def test_uniform_features_give_zero_motion_at_window_centers(self):
        _, scope = attention_scope(4)
        cfg = AttentionConfig(window_size=7, channels=4, num_heads=1)
        feat = Tensor(np.ones((1, 4, 14, 14)) * np.array([0.3, -1.0, 2.0, 0.5]).reshape(1, 4, 1, 1))
        with no_grad():
            out = inter_frame_attention(feat, feat, cfg, scope)
        for i in (3, 10):
            for j in (3, 10):
                np.testing.assert_allclose(out.motion01.data[0, :, i, j], 0.0, atol=1e-6)
                np.testing.assert_allclose(out.motion10.data[0, :, i, j], 0.0, atol=1e-6)

    def test_saturated_attention_points_at_matching_key(self):
        """one-hot key：每个 query 只匹配另一帧中右移一格的位置"""
        h, w = 1, 6
        weights, scope = attention_scope(w)
        for name in ("q", "k", "v", "proj"):
            weights[f"attn.{name}.weight"].data = np.eye(w, dtype=np.float32)
        a0 = np.zeros((1, w, h, w))
        a1 = np.zeros((1, w, h, w))
        for x in range(w):
            a0[0, x, 0, x] = 30.0
            a1[0, x, 0, min(x + 1, w - 1)] = 30.0
        cfg = AttentionConfig(window_size=7, channels=w, num_heads=1)
        with no_grad():
            out = inter_frame_attention(Tensor(a0), Tensor(a1), cfg, scope)
        step = 2.0 / (w - 1)
        np.testing.assert_allclose(out.motion01.data[0, 0, 0, :w - 1], step, atol=1e-3)
        np.testing.assert_allclose(out.motion01.data[0, 1], 0.0, atol=1e-6)

    def test_swapping_frames_swaps_outputs(self, np_rng):
        _, scope = attention_scope(8)
        cfg = AttentionConfig(window_size=3, channels=8, num_heads=2, shifted=True)
        a0 = Tensor(np_rng.normal(size=(1, 8, 7, 5)).astype(np.float32))
        a1 = Tensor(np_rng.normal(size=(1, 8, 7, 5)).astype(np.float32))
        with no_grad():
            fwd = inter_frame_attention(a0, a1, cfg, scope)
            rev = inter_frame_attention(a1, a0, cfg, scope)
        np.testing.assert_array_equal(fwd.appearance0.data, rev.appearance1.data)
        np.testing.assert_array_equal(fwd.motion01.data, rev.motion10.data)

    def test_channel_mismatch(self):
        _, scope = attention_scope(4)
        cfg = AttentionConfig(window_size=7, channels=4)
        with pytest.raises(ShapeError):
            inter_frame_attention(Tensor(np.zeros((1, 4, 3, 3))), Tensor(np.zeros((1, 4, 3, 4))), cfg, scope)


class TestScaleMotion:
    def test_endpoints(self, np_rng):
        motion = Tensor(np_rng.normal(size=(1, 2, 3, 3)))
        np.testing.assert_array_equal(scale_motion(motion, 0.0).data, 0.0)
        np.testing.assert_array_equal(scale_motion(motion, 1.0).data, motion.data)
        np.testing.assert_allclose(scale_motion(motion, 0.25).data, motion.data * 0.25)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            scale_motion(Tensor(np.zeros((1, 2, 1, 1))), 1.5)


class TestTransformerBlock:
    def test_shapes_and_composition(self, np_rng):
        weights = ModelWeights(ModelConfig.preset("tiny"), SeededRng(5))
        declare_block(weights.scope("blk"), 16, mlp_ratio=2)
        scope = weights.scope("blk")
        cfg = AttentionConfig.for_stage(16, 7)
        a0 = Tensor(np_rng.normal(size=(1, 16, 6, 6)))
        a1 = Tensor(np_rng.normal(size=(1, 16, 6, 6)))
        with no_grad():
            out = transformer_block(a0, a1, cfg, scope)
            attn = inter_frame_attention(scope.norm("norm1", a0), scope.norm("norm1", a1), cfg, scope.child("attn"))
        assert out.appearance0.shape == (1, 16, 6, 6)
        assert out.motion_feat01.shape == (1, 16, 6, 6)
        np.testing.assert_array_equal(out.motion01.data, attn.motion01.data)
        w = weights["blk.motion.weight"].data.astype(np.float64)
        np.testing.assert_allclose(out.motion_feat10.data, np.einsum("oc,nchw->nohw", w, attn.motion10.data), rtol=1e-6, atol=1e-9)

    def test_stage_averages_block_motion(self, np_rng):
        weights = ModelWeights(ModelConfig.preset("tiny"), SeededRng(6))
        scope = weights.scope("stage")
        for i in range(2):
            declare_block(scope.child(f"block{i}"), 16, mlp_ratio=2)
        configs = block_configs(16, 2, 3)
        a0 = Tensor(np_rng.normal(size=(1, 16, 5, 5)))
        a1 = Tensor(np_rng.normal(size=(1, 16, 5, 5)))
        with no_grad():
            _, _, _, _, m01, _ = run_stage(a0, a1, configs, scope)
            first = transformer_block(a0, a1, configs[0], scope.child("block0"))
            second = transformer_block(first.appearance0, first.appearance1, configs[1], scope.child("block1"))
        np.testing.assert_allclose(m01.data, 0.5 * (first.motion01.data + second.motion01.data), atol=1e-12)

    @staticmethod
    def _block(seed, channels=8):
        weights = ModelWeights(ModelConfig.preset("tiny"), SeededRng(seed))
        declare_block(weights.scope("blk"), channels, mlp_ratio=2)
        return weights, weights.scope("blk")

    def test_zero_output_projections_give_identity(self, np_rng):
        weights, scope = self._block(11)
        for name in ("attn.proj", "mlp.fc2"):
            weights[f"blk.{name}.weight"].data[...] = 0.0
            weights[f"blk.{name}.bias"].data[...] = 0.0
        a0 = Tensor(np_rng.normal(size=(1, 8, 9, 10)))
        a1 = Tensor(np_rng.normal(size=(1, 8, 9, 10)))
        with no_grad():
            out = transformer_block(a0, a1, AttentionConfig.for_stage(8, 3, shifted=True), scope)
        np.testing.assert_array_equal(out.appearance0.data, a0.data)
        np.testing.assert_array_equal(out.appearance1.data, a1.data)
        assert np.abs(out.motion01.data).max() > 0

    def test_matches_composed_reference(self, np_rng):
        weights, scope = self._block(12)
        for name in ("norm1", "norm2"):
            weights[f"blk.{name}.gamma"].data[...] = np_rng.uniform(0.5, 1.5, size=8)
            weights[f"blk.{name}.beta"].data[...] = np_rng.normal(scale=0.1, size=8)
        for name in ("attn.proj", "mlp.fc1", "mlp.dwconv", "mlp.fc2", "motion"):
            bias = weights[f"blk.{name}.bias"]
            bias.data[...] = np_rng.normal(scale=0.1, size=bias.shape)
        cfg = AttentionConfig.for_stage(8, 3)
        a0 = np_rng.normal(size=(1, 8, 6, 7))
        a1 = np_rng.normal(size=(1, 8, 6, 7))
        p = {name: param.data.astype(np.float64) for name, param in weights.items()}

        def norm(x, name):
            xc = x - x.mean(axis=1, keepdims=True)
            xhat = xc / np.sqrt((xc ** 2).mean(axis=1, keepdims=True) + 1e-5)
            return xhat * p[f"blk.{name}.gamma"][None, :, None, None] + p[f"blk.{name}.beta"][None, :, None, None]

        def linear(x, name):
            return np.einsum("oc,nchw->nohw", p[f"blk.{name}.weight"], x) + p[f"blk.{name}.bias"][None, :, None, None]

        def mlp(x):
            hidden = linear(x, "mlp.fc1")
            kernel = p["blk.mlp.dwconv.weight"][:, 0]
            padded = np.pad(hidden, ((0, 0), (0, 0), (1, 1), (1, 1)))
            h, w = hidden.shape[-2:]
            conv = sum(kernel[None, :, dy, dx, None, None] * padded[:, :, dy:dy + h, dx:dx + w]
                       for dy in range(3) for dx in range(3))
            conv = conv + p["blk.mlp.dwconv.bias"][None, :, None, None]
            return linear(0.5 * conv * (1.0 + erf(conv / np.sqrt(2.0))), "mlp.fc2")

        with no_grad():
            out = transformer_block(Tensor(a0), Tensor(a1), cfg, scope)
            delta0, delta1, m01, m10 = attention_deltas(
                Tensor(norm(a0, "norm1")), Tensor(norm(a1, "norm1")), cfg, scope.child("attn"))
        x0 = a0 + delta0.data
        x1 = a1 + delta1.data
        np.testing.assert_allclose(out.appearance0.data, x0 + mlp(norm(x0, "norm2")), rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(out.appearance1.data, x1 + mlp(norm(x1, "norm2")), rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(out.motion01.data, m01.data, rtol=1e-6, atol=1e-12)
        np.testing.assert_allclose(out.motion_feat10.data, linear(m10.data, "motion"), rtol=1e-6, atol=1e-9)
