"""
命令行入口
  interpolate  合成一个或多个时间步的中间帧
  flow         输出光流可视化 / FLO1 文件（可选注意力运动场）
  eval         三元组文件夹评估（PSNR/SSIM/IE）
  train        桌面规模过拟合训练
  selftest     运行不变量自检
退出码：缺文件 2，尺寸不符 3，非法 t 4，权重格式错误 5，其它错误 1
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence

import pandas as pd

from ..errors import IFAError, InvalidTimestepError, ShapeError, WeightsFormatError
from ..model import ModelWeights, build_model
from ..settings import ModelConfig, TrainConfig, get_settings
from ..synthesis.pipeline import FeatureCache, check_timestep, interpolate, pad_to_multiple
from ..tensor_core.tensor import Tensor
from ..training.synthetic import Triplet, make_translation_triplet
from ..training.trainer import train_overfit
from .evaluate import evaluate_folder
from .flow_vis import flow_to_color, motion_to_pixels, write_flo
from .image_io import load_image, save_image, save_rgb
from .selftest import run_selftest
from .weights_io import load_weights, save_weights

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_MISSING_FILE = 2
EXIT_SIZE_MISMATCH = 3
EXIT_INVALID_T = 4
EXIT_WEIGHTS_FORMAT = 5


# ─────────── 公共辅助 ───────────

def load_model(config: Optional[str], weights_path: Optional[str], seed: Optional[int]) -> ModelWeights:
    """有权重文件时按文件中的配置加载（给了 --config 则按该档位校验）；否则用种子随机初始化"""
    settings = get_settings()
    if weights_path:
        if config is None:
            return load_weights(weights_path)
        return load_weights(weights_path, into=build_model(ModelConfig.preset(config), seed=0))
    cfg = ModelConfig.preset(config or settings.default_config)
    seed = settings.seed if seed is None else seed
    logger.warning("⚠️ 未提供权重文件，使用随机初始化 (variant=%s, seed=%d)", cfg.variant, seed)
    return build_model(cfg, seed=seed)


def load_pair(frame0: str, frame1: str):
    image0 = load_image(frame0)
    image1 = load_image(frame1)
    if image0.shape != image1.shape:
        raise ShapeError(f"两帧尺寸不一致: {frame0} {image0.shape[-2:]} vs {frame1} {image1.shape[-2:]}")
    return image0, image1


def resolve_timesteps(ts: Optional[Sequence[float]], num_frames: Optional[int]) -> List[float]:
    values = list(ts or [])
    if num_frames:
        values.extend(i / (num_frames + 1) for i in range(1, num_frames + 1))
    if not values:
        values = [0.5]
    return [check_timestep(t) for t in values]


def output_path(pattern: str, t: float, multiple: bool) -> Path:
    label = f"{t:g}"
    if "{t}" in pattern:
        return Path(pattern.replace("{t}", label))
    path = Path(pattern)
    if multiple:
        return path.with_name(f"{path.stem}_{label}{path.suffix or '.png'}")
    return path


# ─────────── 子命令 ───────────

def cmd_interpolate(args: argparse.Namespace) -> int:
    timesteps = resolve_timesteps(args.t, args.num_frames)
    image0, image1 = load_pair(args.frame0, args.frame1)
    weights = load_model(args.config, args.weights, args.seed)
    cache = FeatureCache(weights)
    threads = min(get_settings().threads, len(timesteps))
    print(f"🚀 合成 {len(timesteps)} 帧: t = {', '.join(f'{t:g}' for t in timesteps)}")

    def _one(t: float) -> Tensor:
        return interpolate(image0, image1, t, weights, cache)[0]

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        frames = list(pool.map(_one, timesteps))
    for t, frame in zip(timesteps, frames):
        path = save_image(output_path(args.out, t, len(timesteps) > 1), frame)
        print(f"✅ t={t:g} -> {path}")
    return EXIT_OK


def cmd_flow(args: argparse.Namespace) -> int:
    t = check_timestep(args.t)
    image0, image1 = load_pair(args.frame0, args.frame1)
    weights = load_model(args.config, args.weights, args.seed)
    cache = FeatureCache(weights)
    _, diagnostics = interpolate(image0, image1, t, weights, cache)
    flow_t0 = diagnostics.flow[:, 0:2]

    out = Path(args.out)
    save_rgb(out, flow_to_color(flow_t0))
    flo_path = Path(args.flo) if args.flo else out.with_suffix(".flo")
    write_flo(flo_path, flow_t0)
    print(f"✅ 光流可视化 -> {out}")
    print(f"✅ 原始光流 -> {flo_path}")

    if args.motion_out:
        h, w = image0.shape[-2:]
        padded0, _, _ = pad_to_multiple(image0)
        padded1, _, _ = pad_to_multiple(image1)
        features = cache.get_or_compute(padded0, padded1)
        motion = motion_to_pixels(features.stages.stage1.motion01, *padded0.shape[-2:])
        save_rgb(args.motion_out, flow_to_color(motion[:, :, :h, :w]))
        print(f"✅ 注意力运动场 -> {args.motion_out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    weights = load_model(args.config, args.weights, args.seed)
    summary = evaluate_folder(args.dir, weights, args.report, threads=get_settings().threads, progress=True)
    if summary.rows:
        frame = pd.DataFrame(summary.rows)
        print(f"✅ PSNR={frame['psnr'].mean():.4f} SSIM={frame['ssim'].mean():.4f} IE={frame['ie'].mean():.4f}")
    print(summary.footer)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = TrainConfig.from_json(args.train_config) if args.train_config else TrainConfig()
    updates = {}
    if args.steps is not None:
        updates["steps"] = args.steps
    if args.lr is not None:
        updates["peak_lr"] = args.lr
    if args.augment:
        updates["augment"] = True
    cfg = cfg.model_copy(update=updates)

    if args.frames:
        t = check_timestep(args.t)
        image0, image_t, image1 = (load_image(p) for p in args.frames)
        if not (image0.shape == image_t.shape == image1.shape):
            raise ShapeError(f"三元组尺寸不一致: {image0.shape}, {image_t.shape}, {image1.shape}")
        triplet = Triplet(image0=image0, image_t=image_t, image1=image1, t=t)
    else:
        triplet = make_translation_triplet(size=args.size, t=check_timestep(args.t), seed=cfg.seed)
    weights = load_model(args.config, args.weights, args.seed)
    result = train_overfit(weights, triplet, cfg.steps, cfg, progress=True)

    if args.weights_out:
        save_weights(weights, args.weights_out)
    if args.loss_csv:
        rows = [r.csv_row(i) for i, r in enumerate(result.reports)]
        pd.DataFrame(rows, columns=["step", "total", "rec", "warp1", "warp2"]).to_csv(args.loss_csv, index=False)
        print(f"✅ 损失曲线 -> {args.loss_csv}")
    if result.curve:
        print(f"✅ 损失 {result.curve[0]:.6f} -> {result.curve[-1]:.6f}")
    return EXIT_OK


def cmd_selftest(args: argparse.Namespace) -> int:
    code, _ = run_selftest(args.level, args.inject_fault)
    return code


# ─────────── 参数解析 ───────────

def _add_model_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", choices=["small", "large", "tiny"], default=None,
                        help="模型档位（默认取 IFA_DEFAULT_CONFIG）")
    parser.add_argument("--weights", default=None, help="EMAV 权重文件")
    parser.add_argument("--seed", type=int, default=None, help="无权重时的随机初始化种子（默认 IFA_SEED）")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ifa_vfi", description="帧间注意力视频插帧")
    parser.add_argument("--log-level", default=None, help="日志级别（默认 IFA_LOG_LEVEL）")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("interpolate", help="合成中间帧")
    p.add_argument("--frame0", required=True)
    p.add_argument("--frame1", required=True)
    p.add_argument("--t", type=float, action="append", help="时间步，可重复")
    p.add_argument("--num-frames", type=int, default=None, help="均匀合成 K 帧 t = i/(K+1)")
    p.add_argument("--out", required=True, help="输出路径，{t} 会被替换为时间步")
    _add_model_args(p)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("flow", help="光流可视化")
    p.add_argument("--frame0", required=True)
    p.add_argument("--frame1", required=True)
    p.add_argument("--t", type=float, default=0.5)
    p.add_argument("--out", required=True, help="可视化 PNG")
    p.add_argument("--flo", default=None, help="FLO1 原始光流（默认与 --out 同名 .flo）")
    p.add_argument("--motion-out", default=None, help="stage 1 注意力运动场可视化 PNG")
    _add_model_args(p)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("eval", help="三元组文件夹评估")
    p.add_argument("--dir", required=True)
    p.add_argument("--report", required=True, help="CSV 报告路径")
    _add_model_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", help="单三元组过拟合训练")
    p.add_argument("--frames", nargs=3, metavar=("FRAME0", "FRAMET", "FRAME1"), default=None,
                   help="三张 PNG；缺省时使用合成平移三元组")
    p.add_argument("--t", type=float, default=0.5)
    p.add_argument("--size", type=int, default=64, help="合成三元组边长")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lr", type=float, default=None, help="峰值学习率")
    p.add_argument("--augment", action="store_true")
    p.add_argument("--train-config", default=None, help="TrainConfig JSON")
    p.add_argument("--weights-out", default=None)
    p.add_argument("--loss-csv", default=None)
    _add_model_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("selftest", help="运行自检")
    p.add_argument("--level", choices=["fast", "full"], default="fast")
    p.add_argument("--inject-fault", choices=["softmax"], default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    settings = get_settings()
    settings.configure_logging(args.log_level.upper() if args.log_level else None)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"❌ 文件不存在: {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except InvalidTimestepError as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return EXIT_INVALID_T
    except ShapeError as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return EXIT_SIZE_MISMATCH
    except WeightsFormatError as exc:
        print(f"❌ 权重文件错误: {exc}", file=sys.stderr)
        return EXIT_WEIGHTS_FORMAT
    except IFAError as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as exc:
        logger.exception("❌ 未处理的错误")
        print(f"❌ {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
