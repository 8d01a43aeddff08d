"""
stats - 数据集统计：样本数、标注数、类别直方图、长尾比
"""

import argparse
import json
from pathlib import Path
from typing import Any, Dict

from core.clipstore import DatasetIndex, class_histogram
from core.managers.dataset_manager import DatasetManager
from core.plugin_loader import CommandPlugin


def dataset_stats(ds: DatasetIndex) -> Dict[str, Any]:
    """
    Returns:
        samples / annotations / histogram（类名 → 计数）/ long_tail_ratio
        （最大与最小非零类别计数之比，没有标注时为 None）
    """
    counts = class_histogram(ds)
    nonzero = counts[counts > 0]
    return {
        "domain": ds.domain_tag.value,
        "labels_hidden": ds.labels_hidden,
        "samples": len(ds),
        "annotations": int(counts.sum()),
        "histogram": {name: int(n) for name, n in zip(ds.class_names, counts)},
        "long_tail_ratio": float(nonzero.max() / nonzero.min()) if len(nonzero) else None,
    }


class StatsCommand(CommandPlugin):
    name = "stats"
    description = "打印数据集统计信息"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--data", required=True, help="数据集目录")
        parser.add_argument("--out", default=None, help="同时写出 JSON 文件")

    def execute(self, args: argparse.Namespace) -> int:
        stats = dataset_stats(DatasetManager(args.data).load())
        print(f"samples: {stats['samples']}")
        print(f"annotations: {stats['annotations']}")
        width = max((len(name) for name in stats["histogram"]), default=0)
        for name, n in stats["histogram"].items():
            print(f"  {name:<{width}}  {n}")
        ratio = stats["long_tail_ratio"]
        print(f"long-tail ratio: {'n/a' if ratio is None else f'{ratio:.2f}'}")

        if args.out:
            out = Path(args.out)
            out.parent.mkdir(parents=True, exist_ok=True)
            with open(out, "w", encoding="utf-8", newline="\n") as f:
                json.dump(stats, f, indent=2)
                f.write("\n")
        return 0
