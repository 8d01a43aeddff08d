"""
propagate - 关键帧标注 + 检测框 → 稠密标注

输入两个 AVA 风格 CSV（sample_id 写作 "<序列名>@<帧号>"；检测框 class_id 可为 -1），
输出同格式的稠密标注 CSV。
"""

import argparse
from pathlib import Path

from core.propagator import propagate_csv
from core.plugin_loader import CommandPlugin
from core.utils.logger import get_logger

logger = get_logger(__name__)


class PropagateCommand(CommandPlugin):
    name = "propagate"
    description = "把关键帧真值传播到普通帧（IoU 贪心匹配）"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--keyframes", required=True, help="关键帧标注 CSV")
        parser.add_argument("--detections", required=True, help="检测框 CSV")
        parser.add_argument("--out", required=True, help="输出 CSV")
        parser.add_argument("--iou-min", type=float, default=0.5, help="最小匹配 IoU")

    def execute(self, args: argparse.Namespace) -> int:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(args.keyframes, encoding="utf-8", newline="") as keys, \
                open(args.detections, encoding="utf-8", newline="") as dets, \
                open(out, "w", encoding="utf-8", newline="") as f:
            written = propagate_csv(keys, dets, f, args.iou_min, args.workers or 1)
        logger.info("已写入 %d 条传播标注: %s", written, out)
        print(f"propagated annotations: {written}")
        return 0
