"""
片段存储 - 片段/标注/数据集的数据模型与 CLP1 二进制格式

CLP1 文件格式（小端）：
    b"CLP1" | u32 T | u32 H | u32 W | u32 C | u32 key_index | T·H·W·C 字节负载
负载按行优先、通道在后排列。

数据集操作：
- cap_per_class: 按类别上限截取标注（每类最多 cap 个）
- extend_source: 主源域 + 辅助源域拼接
- class_histogram: 每类标注计数
"""

import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    BadMagicError,
    ClassSpaceError,
    ClipDimsError,
    TruncatedClipError,
)
from .geometry import Box
from .utils.logger import get_logger

logger = get_logger(__name__)

CLIP_MAGIC = b"CLP1"
_CLIP_HEADER = struct.Struct("<4s5I")

# 单个片段负载上限，超过视为维度溢出
MAX_CLIP_BYTES = 1 << 31


class Origin(Enum):
    """标注来源域"""
    SOURCE_PRIMARY = "source_primary"
    SOURCE_AUXILIARY = "source_auxiliary"
    TARGET = "target"

    @property
    def is_source(self) -> bool:
        return self is not Origin.TARGET


class DomainTag(Enum):
    """数据集所属域"""
    SOURCE = "source"
    AUXILIARY = "auxiliary"
    TARGET = "target"

    @property
    def origin(self) -> Origin:
        return {
            DomainTag.SOURCE: Origin.SOURCE_PRIMARY,
            DomainTag.AUXILIARY: Origin.SOURCE_AUXILIARY,
            DomainTag.TARGET: Origin.TARGET,
        }[self]


@dataclass(frozen=True, eq=False)
class Clip:
    """
    视频片段

    data: T×H×W×C uint8 张量；关键帧位于片段中间 (key_index = T // 2)
    """

    data: np.ndarray
    key_index: int = -1

    def __post_init__(self):
        if self.data.ndim != 4 or self.data.dtype != np.uint8:
            raise ClipDimsError(f"片段必须是 T×H×W×C uint8 张量，实际: {self.data.shape} {self.data.dtype}")
        T, _, _, C = self.data.shape
        if T < 1 or C not in (1, 3):
            raise ClipDimsError(f"片段维度非法: T={T}, C={C}")
        if self.key_index < 0:
            object.__setattr__(self, "key_index", T // 2)
        if not 0 <= self.key_index < T:
            raise ClipDimsError(f"关键帧下标越界: {self.key_index} (T={T})")

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def H(self) -> int:
        return self.data.shape[1]

    @property
    def W(self) -> int:
        return self.data.shape[2]

    @property
    def C(self) -> int:
        return self.data.shape[3]

    @property
    def key_frame(self) -> np.ndarray:
        return self.data[self.key_index]

    def same_bytes(self, other: "Clip") -> bool:
        return (
            self.key_index == other.key_index
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True)
class Annotation:
    """单个动作实例标注"""

    box: Box
    class_id: int
    instance_id: int
    origin: Origin = Origin.SOURCE_PRIMARY

    def with_box(self, box: Box) -> "Annotation":
        return replace(self, box=box)

    def with_label(self, class_id: int, origin: Optional[Origin] = None) -> "Annotation":
        return replace(self, class_id=class_id, origin=origin or self.origin)


@dataclass(frozen=True, eq=False)
class Sample:
    """一个训练样本：片段 + 关键帧标注"""

    clip: Clip
    annotations: Tuple[Annotation, ...]
    sample_id: str

    def __post_init__(self):
        object.__setattr__(self, "annotations", tuple(self.annotations))
        for ann in self.annotations:
            if not ann.box.within(self.clip.W, self.clip.H):
                raise ClipDimsError(
                    f"样本 {self.sample_id} 的框 {ann.box.as_tuple()} 超出画面 "
                    f"{self.clip.W}×{self.clip.H}"
                )

    def with_annotations(self, annotations: Sequence[Annotation]) -> "Sample":
        return Sample(self.clip, tuple(annotations), self.sample_id)

    @property
    def boxes(self) -> List[Box]:
        return [a.box for a in self.annotations]


@dataclass(frozen=True, eq=False)
class DatasetIndex:
    """
    数据集索引（构造后不可变）

    Attributes:
        samples: 有序样本列表
        domain_tag: 所属域
        num_classes: 类别数
        class_names: 类别名称（行号即 class_id）
        labels_hidden: 目标域训练集标记，训练器只使用其中的框
        class_counts: 每类标注计数（构造时计算）
    """

    samples: Tuple[Sample, ...]
    domain_tag: DomainTag
    num_classes: int
    class_names: Tuple[str, ...] = ()
    labels_hidden: bool = False
    class_counts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if not self.class_names:
            object.__setattr__(
                self, "class_names", tuple(f"class_{k}" for k in range(self.num_classes))
            )
        if len(self.class_names) != self.num_classes:
            raise ClassSpaceError(
                f"类别名数量 {len(self.class_names)} 与类别数 {self.num_classes} 不一致"
            )
        for sample in self.samples:
            for ann in sample.annotations:
                if not 0 <= ann.class_id < self.num_classes:
                    raise ClassSpaceError(
                        f"样本 {sample.sample_id} 的类别 {ann.class_id} 超出 [0, {self.num_classes})"
                    )
        counts = _count_classes(self.samples, self.num_classes)
        counts.setflags(write=False)
        object.__setattr__(self, "class_counts", counts)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def num_annotations(self) -> int:
        return int(self.class_counts.sum())

    def histogram_consistent(self) -> bool:
        return bool(np.array_equal(_count_classes(self.samples, self.num_classes), self.class_counts))

    def derive(self, samples: Sequence[Sample], **changes) -> "DatasetIndex":
        """以新的样本列表构造同域数据集"""
        params = dict(
            domain_tag=self.domain_tag,
            num_classes=self.num_classes,
            class_names=self.class_names,
            labels_hidden=self.labels_hidden,
        )
        params.update(changes)
        return DatasetIndex(tuple(samples), **params)


def _count_classes(samples: Sequence[Sample], num_classes: int) -> np.ndarray:
    counts = np.zeros(num_classes, dtype=np.int64)
    for sample in samples:
        for ann in sample.annotations:
            counts[ann.class_id] += 1
    return counts


# ==================== CLP1 读写 ====================

def write_clip(clip: Clip, path: Union[str, Path]) -> None:
    """将片段写为 CLP1 文件"""
    T, H, W, C = clip.data.shape
    header = _CLIP_HEADER.pack(CLIP_MAGIC, T, H, W, C, clip.key_index)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(clip.data).tobytes())


def decode_clip(payload: bytes) -> Clip:
    """
    解析 CLP1 字节串

    Raises:
        BadMagicError: 魔数错误
        TruncatedClipError: 文件头或负载不完整
        ClipDimsError: 维度为 0、通道数非法或负载大小溢出
    """
    if len(payload) < 4:
        raise TruncatedClipError("文件过短，缺少魔数")
    if payload[:4] != CLIP_MAGIC:
        raise BadMagicError(f"魔数错误: {payload[:4]!r}，期望 {CLIP_MAGIC!r}")
    if len(payload) < _CLIP_HEADER.size:
        raise TruncatedClipError("文件头不完整")

    _, T, H, W, C, key_index = _CLIP_HEADER.unpack_from(payload)
    if min(T, H, W, C) == 0:
        raise ClipDimsError(f"维度不能为 0: T={T}, H={H}, W={W}, C={C}")
    expected = T * H * W * C
    if expected > MAX_CLIP_BYTES:
        raise ClipDimsError(f"维度乘积溢出: {T}×{H}×{W}×{C} = {expected} 字节")

    body = payload[_CLIP_HEADER.size:]
    if len(body) < expected:
        raise TruncatedClipError(f"负载被截断: 期望 {expected} 字节，实际 {len(body)} 字节")

    data = np.frombuffer(body, dtype=np.uint8, count=expected).reshape(T, H, W, C).copy()
    return Clip(data, key_index)


def read_clip(path: Union[str, Path]) -> Clip:
    """读取 CLP1 文件"""
    with open(path, "rb") as f:
        return decode_clip(f.read())


# ==================== 数据集操作 ====================

def class_histogram(ds: DatasetIndex) -> np.ndarray:
    """每类标注计数（长度为 num_classes 的整数数组）"""
    return _count_classes(ds.samples, ds.num_classes)


def cap_per_class(ds: DatasetIndex, cap: int, rng: np.random.Generator) -> DatasetIndex:
    """
    每类最多保留 cap 个标注

    超出上限的类别用 rng 无放回均匀抽取 cap 个；不超过上限的类别全部保留。
    失去全部标注的样本被移除，原本就没有标注的样本保留。

    Args:
        ds: 原数据集
        cap: 每类上限 (>= 1)
        rng: 随机数发生器
    """
    if cap < 1:
        raise ValueError(f"类别上限必须 >= 1: {cap}")

    positions: Dict[int, List[Tuple[int, int]]] = {}
    for si, sample in enumerate(ds.samples):
        for ai, ann in enumerate(sample.annotations):
            positions.setdefault(ann.class_id, []).append((si, ai))

    dropped = set()
    for class_id in sorted(positions):
        slots = positions[class_id]
        if len(slots) <= cap:
            continue
        keep = set(rng.choice(len(slots), size=cap, replace=False).tolist())
        dropped.update(slot for k, slot in enumerate(slots) if k not in keep)

    if not dropped:
        return ds

    samples = []
    for si, sample in enumerate(ds.samples):
        kept = [ann for ai, ann in enumerate(sample.annotations) if (si, ai) not in dropped]
        if sample.annotations and not kept:
            continue
        samples.append(sample if len(kept) == len(sample.annotations) else sample.with_annotations(kept))

    capped = ds.derive(samples)
    logger.info(
        "类别截取 cap=%d: 标注 %d -> %d, 样本 %d -> %d",
        cap, ds.num_annotations, capped.num_annotations, len(ds), len(capped),
    )
    return capped


def extend_source(primary: DatasetIndex, auxiliary: DatasetIndex) -> DatasetIndex:
    """
    主源域与辅助源域拼接

    辅助域标注统一标记为 SOURCE_AUXILIARY，主源域标注保持原来源标记。

    Raises:
        ClassSpaceError: 两个数据集类别数不同
    """
    if primary.num_classes != auxiliary.num_classes:
        raise ClassSpaceError(
            f"类别数不一致: 主源域 {primary.num_classes}，辅助源域 {auxiliary.num_classes}"
        )
    aux_samples = [
        s.with_annotations([a.with_label(a.class_id, Origin.SOURCE_AUXILIARY) for a in s.annotations])
        for s in auxiliary.samples
    ]
    primary_samples = [
        s if all(a.origin.is_source for a in s.annotations)
        else s.with_annotations([a.with_label(a.class_id, Origin.SOURCE_PRIMARY) for a in s.annotations])
        for s in primary.samples
    ]
    extended = primary.derive(primary_samples + aux_samples, domain_tag=DomainTag.SOURCE, labels_hidden=False)
    logger.info("扩展源域: 主源域 %d + 辅助源域 %d = %d 个样本", len(primary), len(auxiliary), len(extended))
    return extended
