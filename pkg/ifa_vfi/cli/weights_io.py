"""
EMAV 权重文件

布局（小端）：
  "EMAV" | u32 版本 | u16 档位名长度 + 档位名 | u32 C, N1, N2, window_size | u32 参数个数
  每个参数：u16 名字长度 + UTF-8 名字 | 4 × u32 形状（秩不足 4 时补 0）| f32 数据
"""

from __future__ import annotations

import logging
import struct
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from ..errors import WeightsFormatError
from ..model import ModelWeights, build_model
from ..settings import ModelConfig

logger = logging.getLogger(__name__)

MAGIC = b"EMAV"
FORMAT_VERSION = 1
SHAPE_SLOTS = 4
CONFIG_FIELDS = ("C", "N1", "N2", "window_size")


def dumps_weights(weights: ModelWeights) -> bytes:
    cfg = weights.config
    variant = cfg.variant.encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<H", len(variant)), variant,
              struct.pack("<4I", cfg.C, cfg.N1, cfg.N2, cfg.window_size), struct.pack("<I", len(weights))]
    for name, param in weights.items():
        encoded = name.encode("utf-8")
        if param.ndim > SHAPE_SLOTS:
            raise WeightsFormatError(f"参数 {name} 的秩 {param.ndim} 超过 {SHAPE_SLOTS}")
        shape = tuple(param.shape) + (0,) * (SHAPE_SLOTS - param.ndim)
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<4I", *shape))
        chunks.append(np.ascontiguousarray(param.data, dtype="<f4").tobytes())
    return b"".join(chunks)


def save_weights(weights: ModelWeights, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps_weights(weights))
    logger.info("✅ 权重已保存: %s (%d 个参数)", path, len(weights))
    return path


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.buf):
            raise WeightsFormatError(
                f"权重文件在字节偏移 {self.offset} 处被截断（读取 {what} 需要 {size} 字节，剩余 {len(self.buf) - self.offset}）")
        chunk = self.buf[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str, what: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def _read_header(reader: _Reader) -> Tuple[ModelConfig, int, Dict[str, int]]:
    magic = reader.take(4, "magic")
    if magic != MAGIC:
        raise WeightsFormatError(f"字节偏移 0 处的 magic 不是 EMAV: {magic!r}")
    (version,) = reader.unpack("<I", "版本号")
    if version != FORMAT_VERSION:
        raise WeightsFormatError(f"不支持的权重格式版本 {version}（字节偏移 4）")
    (name_len,) = reader.unpack("<H", "档位名长度")
    variant_offset = reader.offset
    variant = reader.take(name_len, "档位名").decode("utf-8", errors="replace")
    config_offset = reader.offset
    c, n1, n2, window = reader.unpack("<4I", "模型配置")
    # 各结构字段在文件中的字节偏移
    offsets = {field: config_offset + 4 * i for i, field in enumerate(CONFIG_FIELDS)}
    try:
        config = ModelConfig(variant=variant, C=c, N1=n1, N2=n2, window_size=window)
    except ValueError as exc:
        raise WeightsFormatError(f"字节偏移 {variant_offset} 处的模型配置无效: {exc}") from exc
    (count,) = reader.unpack("<I", "参数个数")
    return config, count, offsets


def _check_config(found: ModelConfig, expected: ModelConfig, offsets: Dict[str, int]) -> None:
    """window_size 不影响任何参数形状，只能靠文件头比对"""
    for field in CONFIG_FIELDS:
        got, want = getattr(found, field), getattr(expected, field)
        if got != want:
            raise WeightsFormatError(
                f"模型配置不匹配: 字节偏移 {offsets[field]} 处的 {field} 为 {got}，目标模型为 {want}")


def loads_weights(buf: bytes, into: Optional[ModelWeights] = None) -> ModelWeights:
    """解析权重；into 给定时按其参数顺序和形状校验，否则按文件中的配置构建骨架"""
    reader = _Reader(buf)
    config, count, offsets = _read_header(reader)
    target = into if into is not None else build_model(config, seed=0)
    expected = target.items()
    staged = []

    for index in range(count):
        entry_offset = reader.offset
        (name_len,) = reader.unpack("<H", "参数名长度")
        name = reader.take(name_len, "参数名").decode("utf-8", errors="replace")
        dims = reader.unpack("<4I", f"参数 {name} 的形状")
        shape = tuple(d for d in dims if d != 0)
        if index >= len(expected):
            raise WeightsFormatError(f"文件中多出的参数 {name}（字节偏移 {entry_offset}），模型只有 {len(expected)} 个参数")
        exp_name, param = expected[index]
        if name != exp_name or shape != tuple(param.shape):
            raise WeightsFormatError(
                f"参数不匹配: 模型中为 {exp_name}{tuple(param.shape)}，文件中为 {name}{shape}（字节偏移 {entry_offset}）")
        size = int(np.prod(shape)) if shape else 1
        raw = reader.take(4 * size, f"参数 {name} 的数据")
        staged.append((param, np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape)))

    if count < len(expected):
        raise WeightsFormatError(f"文件缺少参数 {expected[count][0]}（文件只有 {count} 个，模型需要 {len(expected)} 个）")
    if reader.offset != len(buf):
        raise WeightsFormatError(f"字节偏移 {reader.offset} 之后有多余数据（文件共 {len(buf)} 字节）")
    if into is not None:
        _check_config(config, into.config, offsets)
    for param, data in staged:
        param.data = data
        param.zero_grad()
    target.mark_updated()
    return target


def load_weights(path: Union[str, Path], into: Optional[ModelWeights] = None) -> ModelWeights:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    weights = loads_weights(path.read_bytes(), into)
    logger.info("✅ 权重已加载: %s (variant=%s)", path, weights.config.variant)
    return weights
