"""
数据集目录管理器 - 负责加载和保存 clipstore 目录结构

目录结构:
    <root>/
    ├── clips/<sample_id>.clp   # CLP1 片段
    ├── annotations.csv         # 归一化坐标标注
    ├── classes.txt             # 每行一个类名，行号即 class_id
    └── meta.json               # 域标记、labels_hidden、类别数

使用方法:
    from core.managers.dataset_manager import DatasetManager

    manager = DatasetManager("data/source")
    ds = manager.load()
    DatasetManager("data/copy").save(ds)
"""

import json
from pathlib import Path
from typing import Dict, List, Optional, Union

from ..clipstore import DatasetIndex, DomainTag, Sample, read_clip, write_clip
from ..errors import AnnotationFormatError, DatasetLayoutError
from ..importers.annotation_importer import (
    AnnotationRecord,
    parse_annotation_csv,
    write_annotation_csv,
)
from ..utils.logger import get_logger

logger = get_logger(__name__)


class DatasetManager:
    """
    clipstore 目录管理器

    功能:
    - 从目录加载 DatasetIndex（片段 + 标注 + 类名 + 元数据）
    - 将 DatasetIndex 写回目录（结果逐字节确定）
    """

    CLIPS_DIR = "clips"
    ANNOTATIONS_FILE = "annotations.csv"
    CLASSES_FILE = "classes.txt"
    META_FILE = "meta.json"
    CLIP_SUFFIX = ".clp"

    def __init__(self, root: Union[str, Path]):
        """
        Args:
            root: 数据集根目录
        """
        self.root = Path(root)

    # ==================== 加载 ====================

    def load(self, domain_tag: Optional[DomainTag] = None) -> DatasetIndex:
        """
        加载数据集

        Args:
            domain_tag: 覆盖 meta.json 中的域标记（例如把目标域训练集当作 oracle 源域）

        Returns:
            DatasetIndex

        Raises:
            DatasetLayoutError: 目录或必要文件缺失
            AnnotationFormatError: 标注文件格式错误或引用了不存在的片段
        """
        if not self.root.is_dir():
            raise DatasetLayoutError(f"数据集目录不存在: {self.root}")

        class_names = self._load_classes()
        meta = self._load_meta()
        tag = domain_tag or DomainTag(meta.get("domain", DomainTag.SOURCE.value))
        labels_hidden = bool(meta.get("labels_hidden", False)) and tag is DomainTag.TARGET

        records = self._load_records()
        grouped: Dict[str, List[AnnotationRecord]] = {}
        for record in records:
            grouped.setdefault(record.sample_id, []).append(record)

        clip_dir = self.root / self.CLIPS_DIR
        if not clip_dir.is_dir():
            raise DatasetLayoutError(f"缺少片段目录: {clip_dir}")
        sample_ids = sorted(p.stem for p in clip_dir.glob(f"*{self.CLIP_SUFFIX}"))

        unknown = sorted(set(grouped) - set(sample_ids))
        if unknown:
            raise AnnotationFormatError(f"标注引用了不存在的片段: {', '.join(unknown[:5])}")

        samples = []
        for sample_id in sample_ids:
            clip = read_clip(clip_dir / f"{sample_id}{self.CLIP_SUFFIX}")
            annotations = [
                r.to_annotation(clip.W, clip.H, tag.origin) for r in grouped.get(sample_id, [])
            ]
            samples.append(Sample(clip, tuple(annotations), sample_id))

        ds = DatasetIndex(
            tuple(samples),
            domain_tag=tag,
            num_classes=len(class_names),
            class_names=tuple(class_names),
            labels_hidden=labels_hidden,
        )
        logger.info(
            "加载数据集 %s: %d 个样本, %d 条标注 (%s)",
            self.root, len(ds), ds.num_annotations, tag.value,
        )
        return ds

    def _load_classes(self) -> List[str]:
        path = self.root / self.CLASSES_FILE
        if not path.exists():
            raise DatasetLayoutError(f"缺少类别文件: {path}")
        with open(path, "r", encoding="utf-8") as f:
            names = [line.strip() for line in f if line.strip()]
        if not names:
            raise DatasetLayoutError(f"类别文件为空: {path}")
        return names

    def _load_meta(self) -> Dict:
        path = self.root / self.META_FILE
        if not path.exists():
            return {}
        try:
            with open(path, "r", encoding="utf-8") as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            raise DatasetLayoutError(f"meta.json 格式错误: {e}")

    def _load_records(self) -> List[AnnotationRecord]:
        path = self.root / self.ANNOTATIONS_FILE
        if not path.exists():
            raise DatasetLayoutError(f"缺少标注文件: {path}")
        with open(path, "r", encoding="utf-8", newline="") as f:
            return parse_annotation_csv(f)

    # ==================== 保存 ====================

    def save(self, ds: DatasetIndex) -> None:
        """将数据集写入目录（已存在的同名文件会被覆盖）"""
        clip_dir = self.root / self.CLIPS_DIR
        clip_dir.mkdir(parents=True, exist_ok=True)

        records = []
        for sample in ds.samples:
            write_clip(sample.clip, clip_dir / f"{sample.sample_id}{self.CLIP_SUFFIX}")
            records.extend(
                AnnotationRecord.from_annotation(sample.sample_id, ann, sample.clip.W, sample.clip.H)
                for ann in sample.annotations
            )

        with open(self.root / self.ANNOTATIONS_FILE, "w", encoding="utf-8", newline="") as f:
            write_annotation_csv(records, f)

        with open(self.root / self.CLASSES_FILE, "w", encoding="utf-8", newline="\n") as f:
            f.write("\n".join(ds.class_names) + "\n")

        meta = {
            "domain": ds.domain_tag.value,
            "labels_hidden": ds.labels_hidden,
            "num_classes": ds.num_classes,
            "num_samples": len(ds),
        }
        with open(self.root / self.META_FILE, "w", encoding="utf-8", newline="\n") as f:
            json.dump(meta, f, ensure_ascii=False, indent=2, sort_keys=True)
            f.write("\n")

        logger.info("保存数据集 %s: %d 个样本, %d 条标注", self.root, len(ds), ds.num_annotations)
