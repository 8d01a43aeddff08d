"""
实例级跨域混合采样

流程（每对 源样本 / 目标样本）：
    1. select_instances      随机选取 ceil(n/2) 个源实例
    2. build_mask            扩展选中框 → 关键帧栅格化 → 沿时间复制
    3. apply_downscale_rule  掩码面积超过阈值时源片段缩小一半居中粘贴
    4. mix_clips             x_M = M·x_S + (1-M)·x_T
    5. mix_labels            源标签保留真值，目标框使用伪标签，被覆盖过多的目标框丢弃

被丢弃的目标框仍留在像素中，只是不参与损失。
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .clipstore import Annotation, Clip, Origin, Sample
from .errors import EmptySelectionError, LabelAlignmentError, NoSourceInstancesError, ShapeMismatchError
from .geometry import Box, Mask3D, coverage, expand_box, rasterize, replicate_mask, resize_box_half, round_half_away
from .utils.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class MixConfig:
    """混合采样参数"""

    expand_factor: float = 0.2
    discard_threshold: float = 0.4
    downscale_area_ratio: float = 0.5
    enable_resize: bool = True

    @classmethod
    def from_train_config(cls, cfg) -> "MixConfig":
        return cls(
            expand_factor=cfg.expand_factor,
            discard_threshold=cfg.discard_threshold,
            downscale_area_ratio=cfg.downscale_area_ratio,
            enable_resize=cfg.enable_resize,
        )


@dataclass(frozen=True)
class PseudoLabel:
    """教师对一个目标框的预测：argmax 类别与最大概率"""

    class_id: int
    confidence: float


@dataclass(frozen=True, eq=False)
class MixedSample:
    """
    混合样本

    Attributes:
        clip: 混合片段
        annotations: 选中的源标注（真值）+ 保留的目标标注（伪标签）
        confidences: 与 annotations 中目标来源标注一一对应的教师置信度
        discarded: 被粘贴区域覆盖过多而丢弃的目标标注（伪标签）
        pasted_boxes: 扩展（可能已缩放）后的选中源框
        downscaled: 是否触发了源片段缩小
    """

    clip: Clip
    annotations: Tuple[Annotation, ...]
    confidences: Tuple[float, ...]
    discarded: Tuple[Annotation, ...] = ()
    pasted_boxes: Tuple[Box, ...] = ()
    downscaled: bool = False
    source_id: str = ""
    target_id: str = ""
    discarded_confidences: Tuple[float, ...] = field(default=(), repr=False)

    @property
    def discarded_count(self) -> int:
        return len(self.discarded)

    @property
    def sample_id(self) -> str:
        return f"{self.source_id}+{self.target_id}"

    @property
    def source_annotations(self) -> List[Annotation]:
        return [a for a in self.annotations if a.origin.is_source]

    @property
    def target_annotations(self) -> List[Annotation]:
        return [a for a in self.annotations if not a.origin.is_source]


def select_instances(annotations: Sequence[Annotation], rng: np.random.Generator) -> List[Annotation]:
    """
    无放回均匀选取 ceil(n/2) 个实例，结果保持原有顺序

    Raises:
        EmptySelectionError: 标注列表为空
    """
    n = len(annotations)
    if n == 0:
        raise EmptySelectionError("没有可选取的源实例")
    k = math.ceil(n / 2)
    chosen = np.sort(rng.choice(n, size=k, replace=False))
    return [annotations[i] for i in chosen]


def expanded_boxes(boxes: Sequence[Box], expand_factor: float, W: int, H: int) -> List[Box]:
    return [expand_box(b, expand_factor, W, H) for b in boxes]


def build_mask(boxes: Sequence[Box], expand_factor: float, T: int, H: int, W: int) -> Mask3D:
    """扩展 → 关键帧栅格化 → 复制到全部 T 帧"""
    mask2d = rasterize(expanded_boxes(boxes, expand_factor, W, H), W, H)
    return replicate_mask(mask2d, T)


def downscale_clip(clip: Clip) -> Clip:
    """
    每帧 2×2 平均池化（奇数尺寸补零），居中粘贴到全零画面

    粘贴区域与 resize_box_half 作用于整帧框的结果一致。
    """
    T, H, W, C = clip.data.shape
    h2, w2 = math.ceil(H / 2), math.ceil(W / 2)
    padded = np.zeros((T, 2 * h2, 2 * w2, C), dtype=np.float64)
    padded[:, :H, :W, :] = clip.data
    pooled = padded.reshape(T, h2, 2, w2, 2, C).mean(axis=(2, 4))
    pooled = np.floor(pooled + 0.5).astype(np.uint8)

    oy, ox = round_half_away(H / 4.0), round_half_away(W / 4.0)
    out = np.zeros_like(clip.data)
    out[:, oy:oy + h2, ox:ox + w2, :] = pooled
    return Clip(out, clip.key_index)


def apply_downscale_rule(
    source: Sample,
    selected: Sequence[Annotation],
    mask: Mask3D,
    cfg: MixConfig,
) -> Tuple[Sample, List[Annotation], Mask3D, bool]:
    """
    关键帧掩码面积占比超过 downscale_area_ratio 时缩小源片段

    触发时：源片段每帧缩小一半居中粘贴；全部源框（含未选中）经 resize_box_half 变换；
    掩码由变换后的选中框重建。未触发时原样返回。

    Returns:
        (源样本', 选中标注', 掩码', 是否触发)
    """
    clip = source.clip
    ratio = float(mask[clip.key_index].sum()) / float(clip.H * clip.W)
    if not cfg.enable_resize or ratio <= cfg.downscale_area_ratio:
        return source, list(selected), mask, False

    W, H = clip.W, clip.H
    resized = {
        id(a): a.with_box(resize_box_half(a.box, W, H)) for a in source.annotations
    }
    new_source = Sample(
        downscale_clip(clip),
        tuple(resized[id(a)] for a in source.annotations),
        source.sample_id,
    )
    new_selected = [resized[id(a)] for a in selected]
    new_mask = build_mask([a.box for a in new_selected], cfg.expand_factor, clip.T, H, W)
    logger.debug("%s: 掩码占比 %.3f > %s，源片段缩小", source.sample_id, ratio, cfg.downscale_area_ratio)
    return new_source, new_selected, new_mask, True


def mix_clips(x_s: Clip, x_t: Clip, mask: Mask3D) -> Clip:
    """
    逐体素选择：M=1 取源，M=0 取目标，不做插值

    Raises:
        ShapeMismatchError: 片段或掩码尺寸不一致
    """
    if x_s.data.shape != x_t.data.shape:
        raise ShapeMismatchError(f"源/目标片段尺寸不一致: {x_s.data.shape} vs {x_t.data.shape}")
    if mask.shape != x_s.data.shape[:3]:
        raise ShapeMismatchError(f"掩码尺寸 {mask.shape} 与片段 {x_s.data.shape[:3]} 不一致")
    mixed = np.where(mask[..., np.newaxis].astype(bool), x_s.data, x_t.data)
    return Clip(mixed, x_t.key_index)


def mix_labels(
    selected_source: Sequence[Annotation],
    targets: Sequence[Annotation],
    pseudo: Sequence[PseudoLabel],
    pasted_boxes: Sequence[Box],
    cfg: MixConfig,
) -> Tuple[List[Annotation], List[float], List[Annotation], List[float]]:
    """
    合并源标注与目标伪标注

    目标框被粘贴区域覆盖比例 <= discard_threshold 时保留（恰好等于阈值保留），
    否则丢弃。零面积目标框无法计算覆盖率，视为丢弃。

    Returns:
        (标注, 保留目标框置信度, 丢弃的目标标注, 丢弃目标框置信度)

    Raises:
        LabelAlignmentError: 伪标签数量与目标标注数量不一致
    """
    if len(pseudo) != len(targets):
        raise LabelAlignmentError(f"伪标签数量 {len(pseudo)} 与目标框数量 {len(targets)} 不一致")

    annotations = list(selected_source)
    kept_conf: List[float] = []
    discarded: List[Annotation] = []
    discarded_conf: List[float] = []
    for ann, label in zip(targets, pseudo):
        relabelled = ann.with_label(label.class_id, Origin.TARGET)
        if ann.box.area > 0 and coverage(ann.box, pasted_boxes) <= cfg.discard_threshold:
            annotations.append(relabelled)
            kept_conf.append(float(label.confidence))
        else:
            discarded.append(relabelled)
            discarded_conf.append(float(label.confidence))
    return annotations, kept_conf, discarded, discarded_conf


def aim_mix(
    source: Sample,
    target: Sample,
    pseudo: Sequence[PseudoLabel],
    rng: np.random.Generator,
    cfg: Optional[MixConfig] = None,
) -> MixedSample:
    """
    生成一个混合样本

    Args:
        source: 源域样本（至少一个标注）
        target: 目标域样本，仅使用其框
        pseudo: 与 target.annotations 对齐的教师伪标签
        rng: 实例选取随机源
        cfg: 混合参数

    Raises:
        NoSourceInstancesError: 源样本没有标注，调用方改用纯目标片段
    """
    cfg = cfg or MixConfig()
    if not source.annotations:
        raise NoSourceInstancesError(f"源样本 {source.sample_id} 没有实例")
    clip = source.clip

    selected = select_instances(source.annotations, rng)
    mask = build_mask([a.box for a in selected], cfg.expand_factor, clip.T, clip.H, clip.W)
    source, selected, mask, downscaled = apply_downscale_rule(source, selected, mask, cfg)

    mixed_clip = mix_clips(source.clip, target.clip, mask)
    pasted = expanded_boxes([a.box for a in selected], cfg.expand_factor, clip.W, clip.H)
    annotations, confidences, discarded, discarded_conf = mix_labels(
        selected, target.annotations, pseudo, pasted, cfg
    )
    return MixedSample(
        clip=mixed_clip,
        annotations=tuple(annotations),
        confidences=tuple(confidences),
        discarded=tuple(discarded),
        pasted_boxes=tuple(pasted),
        downscaled=downscaled,
        source_id=source.sample_id,
        target_id=target.sample_id,
        discarded_confidences=tuple(discarded_conf),
    )
