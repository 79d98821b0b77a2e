"""
三元组文件夹评估
目录结构：<dir>/<name>/{im1,im2,im3}.png，im2 为 t=0.5 的真值
报告：每个三元组一行 + mean 行（CSV），末尾注释行记录评估/跳过数量
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import pandas as pd
from pydantic import BaseModel
from tqdm import tqdm

from ..errors import ShapeError
from ..model import ModelWeights
from ..synthesis.pipeline import interpolate
from ..training.metrics import interpolation_error, psnr, ssim
from .image_io import dequantize, load_image, quantize

logger = logging.getLogger(__name__)

TRIPLET_FILES = ("im1", "im2", "im3")
REPORT_COLUMNS = ["name", "psnr", "ssim", "ie"]


class EvalSummary(BaseModel):
    rows: List[Dict[str, Union[str, float]]]
    evaluated: int
    skipped: int
    report_path: Optional[str] = None

    @property
    def footer(self) -> str:
        return f"# evaluated={self.evaluated} skipped={self.skipped}"


def _find_image(folder: Path, stem: str) -> Optional[Path]:
    for suffix in (".png", ".PNG"):
        candidate = folder / f"{stem}{suffix}"
        if candidate.is_file():
            return candidate
    return None


def _collect(root: Path) -> Tuple[List[Tuple[str, List[Path]]], List[str]]:
    """按子目录名排序；缺文件的三元组直接记为跳过"""
    valid: List[Tuple[str, List[Path]]] = []
    skipped: List[str] = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        paths = [_find_image(sub, stem) for stem in TRIPLET_FILES]
        if any(p is None for p in paths):
            missing = [stem for stem, p in zip(TRIPLET_FILES, paths) if p is None]
            logger.warning("⚠️ 跳过 %s: 缺少 %s", sub.name, ", ".join(missing))
            skipped.append(sub.name)
            continue
        valid.append((sub.name, paths))
    return valid, skipped


def evaluate_triplet(paths: List[Path], weights: ModelWeights) -> Dict[str, float]:
    im1, im2, im3 = (load_image(p) for p in paths)
    if not (im1.shape == im2.shape == im3.shape):
        raise ShapeError(f"三元组尺寸不一致: {im1.shape}, {im2.shape}, {im3.shape}")
    prediction, _ = interpolate(im1, im3, 0.5, weights)
    # 与写出的 PNG 一致：先量化再算指标
    pred = dequantize(quantize(prediction))
    return {"psnr": psnr(pred, im2), "ssim": ssim(pred, im2), "ie": interpolation_error(pred, im2)}


def evaluate_folder(root: Union[str, Path], weights: ModelWeights, report_path: Optional[Union[str, Path]] = None,
                    threads: int = 1, progress: bool = False) -> EvalSummary:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(str(root))
    triplets, skipped = _collect(root)
    logger.info("🚀 评估 %d 个三元组（线程数 %d）", len(triplets), threads)

    def _run(item: Tuple[str, List[Path]]) -> Tuple[str, Optional[Dict[str, float]]]:
        name, paths = item
        try:
            return name, evaluate_triplet(paths, weights)
        except (ShapeError, OSError, ValueError) as exc:
            logger.warning("⚠️ 跳过 %s: %s", name, exc)
            return name, None

    results: Dict[str, Optional[Dict[str, float]]] = {}
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for name, metrics in tqdm(pool.map(_run, triplets), total=len(triplets), desc="eval", disable=not progress):
            results[name] = metrics

    rows: List[Dict[str, Union[str, float]]] = []
    for name, _ in triplets:
        metrics = results.get(name)
        if metrics is None:
            skipped.append(name)
            continue
        rows.append({"name": name, **metrics})

    summary = EvalSummary(rows=rows, evaluated=len(rows), skipped=len(skipped))
    if report_path is not None:
        summary.report_path = str(write_report(summary, report_path))
    logger.info("✅ 评估完成: evaluated=%d skipped=%d", summary.evaluated, summary.skipped)
    return summary


def report_frame(summary: EvalSummary) -> pd.DataFrame:
    frame = pd.DataFrame(summary.rows, columns=REPORT_COLUMNS)
    if not frame.empty:
        means = frame[["psnr", "ssim", "ie"]].mean()
        frame = pd.concat([frame, pd.DataFrame([{"name": "mean", **means.to_dict()}])], ignore_index=True)
    return frame


def write_report(summary: EvalSummary, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = report_frame(summary)
    with open(path, "w", encoding="utf-8", newline="") as f:
        frame.to_csv(f, index=False, float_format="%.6f")
        f.write(summary.footer + "\n")
    return path


def read_report(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")
