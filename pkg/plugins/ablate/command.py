"""
ablate - 依次运行 {resize, pLabel, iMix} 的六种开关组合

输出 <out>/<组合名>/seed_<种子>/ 下的训练结果与 <out>/summary.json。
"""

import argparse

from core.cli import settings_from_args
from core.errors import UsageError
from core.plugin_loader import CommandPlugin
from core.strategies.ablation import get_all_rows, run_ablation
from plugins.train.command import add_training_arguments, load_training_data, training_overrides


def parse_seeds(text: str):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds 应为逗号分隔的整数: {text}")


class AblateCommand(CommandPlugin):
    name = "ablate"
    description = "消融实验：六种开关组合逐个训练并汇总中位 mAP"
    log_to_out = True

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        add_training_arguments(parser)
        parser.add_argument("--seeds", default=None, help="逗号分隔的种子列表（默认使用 --seed）")
        parser.add_argument("--rows", default=None, help=f"组合子集，可选: {','.join(get_all_rows())}")

    def execute(self, args: argparse.Namespace) -> int:
        cfg, _ = settings_from_args(args, train_overrides=training_overrides(args))
        seeds = parse_seeds(args.seeds) if args.seeds else []
        rows = [r.strip() for r in args.rows.split(",")] if args.rows else None
        unknown = [r for r in rows or [] if r not in get_all_rows()]
        if unknown:
            raise UsageError(f"未知的消融组合: {', '.join(unknown)}")

        source, aux, target, target_val = load_training_data(args)
        summary = run_ablation(cfg, source, aux, target, target_val, args.out, seeds, rows)
        for row, info in summary["rows"].items():
            median_map = info["median_map"]
            print(f"{info['label']:<12} {'n/a' if median_map is None else f'{median_map:.4f}'}")
        return 0
