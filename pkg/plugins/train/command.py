"""
train - 混合采样 + 均值教师训练

    train --source S --target T [--aux A] [--target-val V] --out DIR
          [--no-adapt | --no-mix --no-pseudo --no-resize]

输出 <out>/metrics.jsonl、<out>/final.mdl1、<out>/teacher.mdl1。
把 target_train 目录作为 --source 即得到有监督的 oracle 模型。
"""

import argparse
from typing import Any, Dict, Optional, Tuple

from core.cli import settings_from_args
from core.clipstore import DatasetIndex, DomainTag
from core.managers.dataset_manager import DatasetManager
from core.plugin_loader import CommandPlugin
from core.trainer import train
from core.utils.logger import get_logger

logger = get_logger(__name__)


def add_training_arguments(parser: argparse.ArgumentParser) -> None:
    """train / ablate 共用的数据与训练参数"""
    parser.add_argument("--source", required=True, help="源域数据集目录")
    parser.add_argument("--target", required=True, help="目标域训练集目录（只使用框）")
    parser.add_argument("--aux", default=None, help="辅助源域数据集目录")
    parser.add_argument("--target-val", default=None, help="目标域验证集目录（每个 epoch 评估）")
    parser.add_argument("--out", required=True, help="输出目录")
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--batch-size", type=int, default=None)
    parser.add_argument("--lambda-scope", choices=("clip", "batch"), default=None)


def training_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "lambda_scope": args.lambda_scope,
    }


def load_training_data(
    args: argparse.Namespace,
) -> Tuple[DatasetIndex, Optional[DatasetIndex], DatasetIndex, Optional[DatasetIndex]]:
    source = DatasetManager(args.source).load(DomainTag.SOURCE)
    aux = DatasetManager(args.aux).load(DomainTag.AUXILIARY) if args.aux else None
    target = DatasetManager(args.target).load(DomainTag.TARGET)
    target_val = DatasetManager(args.target_val).load(DomainTag.TARGET) if args.target_val else None
    return source, aux, target, target_val


class TrainCommand(CommandPlugin):
    name = "train"
    description = "源域 + 目标域自训练（可选辅助源域与消融开关）"
    log_to_out = True

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        add_training_arguments(parser)
        parser.add_argument("--no-adapt", action="store_true", help="纯源域基线（关闭混合、伪标签、缩放）")
        parser.add_argument("--no-mix", action="store_true", help="关闭实例混合")
        parser.add_argument("--no-pseudo", action="store_true", help="关闭伪标签")
        parser.add_argument("--no-resize", action="store_true", help="关闭大实例缩小")

    def execute(self, args: argparse.Namespace) -> int:
        overrides = training_overrides(args)
        if args.no_adapt or args.no_mix:
            overrides["enable_mix"] = False
        if args.no_adapt or args.no_pseudo:
            overrides["enable_pseudo"] = False
        if args.no_adapt or args.no_resize:
            overrides["enable_resize"] = False
        cfg, _ = settings_from_args(args, train_overrides=overrides)

        source, aux, target, target_val = load_training_data(args)
        result = train(cfg, source, aux, target, target_val, args.out)
        if result.epochs:
            print(f"target mAP: {result.epochs[-1]['target_map']:.4f}")
        logger.info("训练完成: %d 步", result.steps)
        return 0
