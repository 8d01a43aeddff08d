"""
消融实验策略定义

定义 {resize, pLabel, iMix} 三个开关的六种组合，以及按组合逐个训练的实验驱动。
每个组合在 <out>/<组合名>/seed_<种子>/ 下写出独立的 metrics.jsonl 与模型文件，
最后在 <out>/summary.json 汇总各组合的中位 mAP。
"""

import dataclasses
import json
from pathlib import Path
from statistics import median
from typing import Any, Dict, List, Optional, Sequence, Union

from ..clipstore import DatasetIndex
from ..trainer import TrainConfig, train
from ..utils.logger import get_logger

logger = get_logger(__name__)

SUMMARY_FILE = "summary.json"


# 消融组合定义
# 每个组合对应三个训练开关
ablation_rows: Dict[str, Dict[str, bool]] = {
    "baseline": {
        "enable_mix": False,       # 不混合
        "enable_pseudo": False,    # 不使用伪标签，即纯源域训练
        "enable_resize": False,
    },
    "plabel": {
        "enable_mix": False,
        "enable_pseudo": True,     # 目标片段直接使用伪标签
        "enable_resize": False,
    },
    "imix": {
        "enable_mix": True,        # 实例混合，只用源标签
        "enable_pseudo": False,
        "enable_resize": False,
    },
    "resize_imix": {
        "enable_mix": True,
        "enable_pseudo": False,
        "enable_resize": True,     # 大实例缩小
    },
    "plabel_imix": {
        "enable_mix": True,
        "enable_pseudo": True,
        "enable_resize": False,
    },
    "full": {
        "enable_mix": True,
        "enable_pseudo": True,
        "enable_resize": True,
    },
}

row_labels: Dict[str, str] = {
    "baseline": "none",
    "plabel": "pLabel",
    "imix": "iMix",
    "resize_imix": "resize+iMix",
    "plabel_imix": "pLabel+iMix",
    "full": "all",
}


def get_row_flags(row: str) -> Dict[str, bool]:
    """
    获取指定组合的开关

    Example:
        >>> get_row_flags('plabel')['enable_pseudo']
        True
    """
    return ablation_rows.get(row.lower(), {})


def get_all_rows() -> List[str]:
    return list(ablation_rows.keys())


def config_for_row(cfg: TrainConfig, row: str) -> TrainConfig:
    flags = get_row_flags(row)
    if not flags:
        raise KeyError(f"未知的消融组合: {row}")
    return cfg.with_ablation(**flags)


def run_ablation(
    cfg: TrainConfig,
    source: DatasetIndex,
    aux: Optional[DatasetIndex],
    target: DatasetIndex,
    target_val: Optional[DatasetIndex],
    out_dir: Union[str, Path],
    seeds: Sequence[int] = (),
    rows: Optional[Sequence[str]] = None,
) -> Dict[str, Any]:
    """
    依次运行各消融组合

    Args:
        seeds: 训练种子列表，为空时使用 cfg.seed
        rows: 组合子集，缺省为全部六种

    Returns:
        汇总字典（同时写入 <out>/summary.json）
    """
    out_path = Path(out_dir)
    seeds = list(seeds) or [cfg.seed]
    summary: Dict[str, Any] = {"seeds": seeds, "rows": {}}

    for row in rows or get_all_rows():
        maps, accuracies = [], []
        for seed in seeds:
            row_cfg = dataclasses.replace(config_for_row(cfg, row), seed=seed)
            run_dir = out_path / row / f"seed_{seed}"
            logger.info("消融组合 %s (%s), seed=%d", row, row_labels[row], seed)
            result = train(row_cfg, source, aux, target, target_val, run_dir)
            if result.epochs:
                maps.append(result.epochs[-1]["target_map"])
                accuracies.append(result.epochs[-1]["pseudo_accuracy"])
        summary["rows"][row] = {
            "label": row_labels[row],
            **get_row_flags(row),
            "target_map": maps,
            "median_map": median(maps) if maps else None,
            "median_pseudo_accuracy": median(accuracies) if accuracies else None,
        }

    out_path.mkdir(parents=True, exist_ok=True)
    with open(out_path / SUMMARY_FILE, "w", encoding="utf-8", newline="\n") as f:
        json.dump(summary, f, indent=2)
        f.write("\n")
    return summary
