import numpy as np
import pytest
from pydantic import ValidationError

from ifa_vfi.model import ModelWeights, build_model
from ifa_vfi.settings import ModelConfig, RuntimeSettings, TrainConfig


class TestModelConfig:
    @pytest.mark.parametrize("variant, expected", [
        ("small", (16, 2, 2)),
        ("large", (32, 4, 4)),
        ("tiny", (8, 1, 1)),
    ])
    def test_presets(self, variant, expected):
        cfg = ModelConfig.preset(variant)
        assert (cfg.C, cfg.N1, cfg.N2) == expected
        assert cfg.stage_channels == (8 * cfg.C, 16 * cfg.C)
        assert cfg.window_size == 7

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            ModelConfig.preset("huge")

    def test_even_window_rejected(self):
        with pytest.raises(ValidationError):
            ModelConfig(window_size=6)

    def test_train_config_from_json(self, tmp_path):
        path = tmp_path / "train.json"
        path.write_text('{"steps": 12, "peak_lr": 0.001, "augment": true}', encoding="utf-8")
        cfg = TrainConfig.from_json(path)
        assert (cfg.steps, cfg.peak_lr, cfg.augment, cfg.warmup_steps) == (12, 0.001, True, 20)


class TestRuntimeSettings:
    def test_reads_environment(self, monkeypatch):
        monkeypatch.setenv("IFA_THREADS", "3")
        monkeypatch.setenv("IFA_LOG_LEVEL", "debug")
        monkeypatch.setenv("IFA_DEFAULT_CONFIG", "tiny")
        monkeypatch.setenv("IFA_SEED", "9")
        settings = RuntimeSettings(dotenv=False)
        assert (settings.threads, settings.log_level, settings.default_config, settings.seed) == (3, "DEBUG", "tiny", 9)

    def test_invalid_values_fall_back(self, monkeypatch):
        monkeypatch.setenv("IFA_THREADS", "many")
        monkeypatch.setenv("IFA_SEED", "x")
        settings = RuntimeSettings(dotenv=False)
        assert settings.threads >= 1
        assert settings.seed == 0


class TestModelWeights:
    def test_duplicate_name(self):
        weights = ModelWeights(ModelConfig.preset("tiny"))
        weights.declare_constant("a", (2,), 0.0)
        with pytest.raises(ValueError):
            weights.declare_constant("a", (2,), 1.0)

    def test_missing_name(self):
        with pytest.raises(KeyError):
            ModelWeights(ModelConfig.preset("tiny"))["nope"]

    def test_scope_prefixes(self):
        weights = ModelWeights(ModelConfig.preset("tiny"))
        scope = weights.scope("backbone").child("embed")
        scope.declare_linear("fuse", 4, 2)
        scope.declare_conv("conv", 2, 3, 3, groups=1, bias=False)
        assert weights.names() == ["backbone.embed.fuse.weight", "backbone.embed.fuse.bias", "backbone.embed.conv.weight"]
        assert weights["backbone.embed.fuse.weight"].shape == (2, 4)
        assert weights["backbone.embed.conv.weight"].shape == (3, 2, 3, 3)
        assert scope.has("fuse.bias") and not scope.has("conv.bias")

    def test_uniform_init_bound(self):
        weights = ModelWeights(ModelConfig.preset("tiny"))
        p = weights.declare_uniform("w", (64, 16), fan_in=16)
        assert np.all(np.abs(p.data) <= 0.25)

    def test_build_is_deterministic(self):
        a = build_model(ModelConfig.preset("tiny"), seed=3)
        b = build_model(ModelConfig.preset("tiny"), seed=3)
        c = build_model(ModelConfig.preset("tiny"), seed=4)
        assert a.names() == b.names()
        assert all(np.array_equal(p.data, q.data) for p, q in zip(a, b))
        assert not all(np.array_equal(p.data, q.data) for p, q in zip(a, c))

    def test_declaration_order(self, tiny_weights):
        names = tiny_weights.names()
        assert names[0] == "backbone.low.conv0a.weight"
        first_head = names.index("head.stage2.conv1.weight")
        assert names.index("head.stage1.conv1.weight") > first_head
        assert all(n.startswith("backbone.") for n in names[:first_head])
        assert names[-1] == "refine.out.bias"

    def test_state_copy_is_detached(self, tiny_weights):
        state = tiny_weights.state_copy()
        tiny_weights["refine.out.bias"].data = tiny_weights["refine.out.bias"].data + 1.0
        assert np.all(state["refine.out.bias"] == 0.0)
