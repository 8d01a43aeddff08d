"""
eval - 在带标签数据集上评估模型，写出每类 AP、mAP 与 argmax 混淆矩阵（JSON）
"""

import argparse
import json
from pathlib import Path

from core.cli import settings_from_args
from core.errors import ShapeMismatchError
from core.evaluator import accuracy_of, confusion_matrix, evaluate, predict_labels
from core.managers.dataset_manager import DatasetManager
from core.model import load_model
from core.plugin_loader import CommandPlugin
from core.utils.logger import get_logger

logger = get_logger(__name__)


class EvalCommand(CommandPlugin):
    name = "eval"
    description = "评估 MDL1 模型：每类 AP@IoU、mAP、混淆矩阵"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--model", required=True, help="MDL1 模型文件")
        parser.add_argument("--data", required=True, help="带标签的数据集目录")
        parser.add_argument("--out", required=True, help="结果 JSON 文件")
        parser.add_argument("--iou", type=float, default=None, help="匹配 IoU 阈值（默认 0.5）")

    def execute(self, args: argparse.Namespace) -> int:
        cfg, _ = settings_from_args(args, train_overrides={"eval_iou_threshold": args.iou})
        params, spec = load_model(args.model)
        ds = DatasetManager(args.data).load()
        channels = ds.samples[0].clip.C if ds.samples else spec.channels
        if channels != spec.channels or ds.num_classes != spec.num_classes:
            raise ShapeMismatchError(
                f"模型 (K={spec.num_classes}, C={spec.channels}) 与数据集 "
                f"(K={ds.num_classes}, C={channels}) 不一致"
            )

        workers = cfg.workers
        result = evaluate(params, ds, spec.pool_grid, cfg.eval_iou_threshold, workers)
        predicted, truth = predict_labels(params, ds, spec.pool_grid, workers)
        counts, normalized = confusion_matrix(predicted, truth, ds.num_classes)

        report = result.to_dict(ds.class_names)
        report.update({
            "iou_threshold": cfg.eval_iou_threshold,
            "accuracy": accuracy_of(counts),
            "confusion": counts.tolist(),
            "confusion_normalized": normalized.tolist(),
            "class_names": list(ds.class_names),
        })
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8", newline="\n") as f:
            json.dump(report, f, indent=2)
            f.write("\n")

        print(f"mAP: {result.map:.4f}")
        logger.info("评估结果已写入 %s", out)
        return 0
