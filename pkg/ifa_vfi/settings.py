"""
运行时配置与模型档位
- RuntimeSettings: 从环境变量 / .env 读取线程数、日志级别等
- ModelConfig: small / large / tiny 三个档位
- TrainConfig: 桌面规模训练超参数（可从 JSON 加载）
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Literal, Optional

from dotenv import find_dotenv, load_dotenv
from pydantic import BaseModel, Field, model_validator

VariantName = Literal["small", "large", "tiny"]

# 每个注意力头的通道数固定为 16
HEAD_DIM = 16


class ModelConfig(BaseModel):
    """模型结构配置"""
    variant: VariantName = "small"
    C: int = Field(16, ge=1)
    N1: int = Field(2, ge=1)
    N2: int = Field(2, ge=1)
    window_size: int = Field(7, ge=3)
    mlp_ratio: int = Field(4, ge=1)

    @model_validator(mode="after")
    def _check_window(self) -> "ModelConfig":
        if self.window_size % 2 == 0:
            raise ValueError(f"window_size 必须为奇数: {self.window_size}")
        return self

    @property
    def stage_channels(self) -> tuple:
        return (8 * self.C, 16 * self.C)

    @property
    def blocks_per_stage(self) -> tuple:
        return (self.N1, self.N2)

    @classmethod
    def preset(cls, variant: str, window_size: int = 7) -> "ModelConfig":
        presets: Dict[str, Dict[str, Any]] = {
            "small": {"C": 16, "N1": 2, "N2": 2},
            "large": {"C": 32, "N1": 4, "N2": 4},
            "tiny": {"C": 8, "N1": 1, "N2": 1},
        }
        if variant not in presets:
            raise ValueError(f"未知模型档位: {variant}（可选 {', '.join(presets)}）")
        return cls(variant=variant, window_size=window_size, **presets[variant])


class TrainConfig(BaseModel):
    """训练超参数（AdamW + warmup + cosine）"""
    steps: int = Field(200, ge=0)
    peak_lr: float = Field(2e-4, ge=0.0)
    min_lr_ratio: float = Field(0.1, ge=0.0, le=1.0)
    warmup_steps: int = Field(20, ge=0)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    loss_lambda: float = 0.5
    augment: bool = False
    seed: int = 0

    @classmethod
    def from_json(cls, path: str | Path) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as f:
            return cls.model_validate(json.load(f))


class RuntimeSettings:
    """运行时设置：读取 IFA_* 环境变量，解析失败时回退默认值"""

    def __init__(self, dotenv: bool = True):
        if dotenv:
            # 预加载 .env（不覆盖系统变量）
            try:
                load_dotenv(find_dotenv(usecwd=True), override=False)
            except Exception:
                pass

        try:
            self.threads = max(1, int(os.getenv("IFA_THREADS", str(os.cpu_count() or 1))))
        except Exception:
            self.threads = max(1, os.cpu_count() or 1)
        self.log_level = os.getenv("IFA_LOG_LEVEL", "INFO").strip().upper() or "INFO"
        self.default_config = os.getenv("IFA_DEFAULT_CONFIG", "small").strip() or "small"
        try:
            self.seed = int(os.getenv("IFA_SEED", "0"))
        except Exception:
            self.seed = 0

    def configure_logging(self, level: Optional[str] = None) -> None:
        logging.basicConfig(
            level=getattr(logging, (level or self.log_level), logging.INFO),
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )


_settings: Optional[RuntimeSettings] = None


def get_settings() -> RuntimeSettings:
    global _settings
    if _settings is None:
        _settings = RuntimeSettings()
    return _settings
