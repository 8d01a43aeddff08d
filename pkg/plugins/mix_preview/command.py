"""
mix-preview - 导出混合样本供目视检查

输出:
    <out>/clips/<源id>+<目标id>.clp   混合片段 (CLP1)
    <out>/annotations.csv             标注 + 来源 / 置信度 / 是否计入损失
    <out>/png/*.png                   --png 时的关键帧预览
"""

import argparse
from pathlib import Path

from core.cli import settings_from_args
from core.clipstore import DomainTag, write_clip
from core.importers.annotation_importer import AnnotationRecord, write_mixed_csv
from core.managers.dataset_manager import DatasetManager
from core.mixer import MixConfig, aim_mix
from core.model import feature_dim, init_params, load_model
from core.plugin_loader import CommandPlugin
from core.trainer import check_box_pixels, make_rng_streams, pseudo_label
from core.ui.preview_renderer import save_preview_png
from core.utils.logger import get_logger

logger = get_logger(__name__)


class MixPreviewCommand(CommandPlugin):
    name = "mix-preview"
    description = "导出混合样本（片段 + 带来源标记的标注 CSV，可选 PNG）"
    log_to_out = True

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--source", required=True, help="源域数据集目录")
        parser.add_argument("--target", required=True, help="目标域数据集目录")
        parser.add_argument("--out", required=True, help="输出目录")
        parser.add_argument("--count", type=int, default=8, help="导出的混合样本数")
        parser.add_argument("--model", default=None, help="生成伪标签的教师模型（缺省用随机初始化）")
        parser.add_argument("--no-resize", action="store_true", help="关闭大实例缩小")
        parser.add_argument("--png", action="store_true", help="同时导出关键帧 PNG")

    def execute(self, args: argparse.Namespace) -> int:
        overrides = {"enable_resize": False} if args.no_resize else {}
        cfg, _ = settings_from_args(args, train_overrides=overrides)
        source = DatasetManager(args.source).load(DomainTag.SOURCE)
        target = DatasetManager(args.target).load(DomainTag.TARGET)
        check_box_pixels(source)
        check_box_pixels(target)
        rngs = make_rng_streams(cfg.seed)

        if args.model:
            teacher, spec = load_model(args.model)
            pool_grid = spec.pool_grid
        else:
            C = source.samples[0].clip.C
            pool_grid = cfg.pool_grid
            teacher = init_params(feature_dim(pool_grid, C), cfg.hidden_dim, source.num_classes, rngs["init"])

        out = Path(args.out)
        mix_cfg = MixConfig.from_train_config(cfg)
        rows = []
        count = min(args.count, len(source)) if len(target) else 0
        for i in range(count):
            src = source.samples[i]
            tgt = target.samples[i % len(target)]
            if not src.annotations:
                continue
            pseudo = pseudo_label(teacher, tgt.clip, tgt.boxes, pool_grid)
            mixed = aim_mix(src, tgt, pseudo, rngs["instance_select"], mix_cfg)
            write_clip(mixed.clip, out / "clips" / f"{mixed.sample_id}.clp")

            W, H = mixed.clip.W, mixed.clip.H
            confidences = iter(mixed.confidences)
            for ann in mixed.annotations:
                conf = None if ann.origin.is_source else next(confidences)
                rows.append((AnnotationRecord.from_annotation(mixed.sample_id, ann, W, H), ann.origin, conf, True))
            for ann, conf in zip(mixed.discarded, mixed.discarded_confidences):
                rows.append((AnnotationRecord.from_annotation(mixed.sample_id, ann, W, H), ann.origin, conf, False))

            if args.png:
                save_preview_png(mixed, out / "png" / f"{mixed.sample_id}.png")
            logger.debug(
                "%s: %d 条标注, 丢弃 %d, 缩小=%s",
                mixed.sample_id, len(mixed.annotations), mixed.discarded_count, mixed.downscaled,
            )

        out.mkdir(parents=True, exist_ok=True)
        with open(out / "annotations.csv", "w", encoding="utf-8", newline="") as f:
            write_mixed_csv(rows, f)
        logger.info("混合预览已写入 %s", out)
        return 0
