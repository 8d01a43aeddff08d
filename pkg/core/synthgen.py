"""
合成双域基准生成器 - 可控域偏移的动作检测数据

每个动作实例是一个带纹理的矩形：
- 纹理为正弦光栅，类别决定空间频率（框内周期数）、朝向与逐帧漂移速度，
  因此时间池化后的特征才能区分类别；
- 背景为各域自己的近似均匀灰度；
- 域偏移是光度变换（背景亮度、对比度、噪声、实例上的不均匀光照斜坡），
  不涉及几何变化。光照斜坡的方向与强度逐实例随机，和类别无关。

源域类别计数服从幂律 (c+1)^(-gamma)，gamma=0 时各类数量最多相差 1。
各划分（源域 / 目标训练 / 目标验证 / 辅助源域）使用由 seed 派生的独立子流，
每个片段再拥有自己的子流，因此逐片段并行生成不改变结果。
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .clipstore import Annotation, Clip, DatasetIndex, DomainTag, Sample
from .errors import BenchmarkConfigError
from .geometry import Box, iou
from .utils.logger import get_logger
from .workers.task_pool import TaskPool

logger = get_logger(__name__)

# 放置单个实例框的最大尝试次数
_PLACEMENT_ATTEMPTS = 200

# 漂移速度（周期/帧）：慢速 / 快速
_VELOCITIES = (0.02, 0.07)

# 每种方向的纹理变体数：周期数 3 × 速度 2
_VARIANTS_PER_AXIS = 3 * len(_VELOCITIES)
MAX_CLASSES = 2 * _VARIANTS_PER_AXIS


@dataclass(frozen=True)
class DomainShift:
    """光度域偏移参数"""

    background_delta: float = 0.0
    contrast_scale: float = 1.0
    noise_sigma: float = 4.0
    lighting_ramp: float = 0.0

    def halfway(self, other: "DomainShift") -> "DomainShift":
        return DomainShift(
            (self.background_delta + other.background_delta) / 2.0,
            (self.contrast_scale + other.contrast_scale) / 2.0,
            (self.noise_sigma + other.noise_sigma) / 2.0,
            (self.lighting_ramp + other.lighting_ramp) / 2.0,
        )


@dataclass(frozen=True)
class BenchmarkConfig:
    """
    合成基准配置（扁平字段，便于写在共享 key = value 配置文件里）
    """

    num_classes: int = 6
    clips_per_domain: int = 200
    val_clips: int = 100
    aux_clips: int = 0
    T: int = 8
    H: int = 64
    W: int = 64
    C: int = 3
    instances_per_clip: Tuple[int, ...] = (1, 3)
    box_min: int = 14
    box_max: int = 24
    max_overlap_iou: float = 0.1
    background_mean: float = 90.0
    instance_amplitude: float = 70.0
    source_noise_sigma: float = 4.0
    shift_background_delta: float = 20.0
    shift_contrast_scale: float = 0.8
    shift_noise_sigma: float = 10.0
    shift_lighting_ramp: float = 70.0
    long_tail_gamma: float = 0.5
    target_gamma: float = 0.0
    large_instance_prob: float = 0.15
    primary_missing_classes: Tuple[int, ...] = ()
    seed: int = 42

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.num_classes < 2:
            raise BenchmarkConfigError(f"num_classes 必须 >= 2: {self.num_classes}")
        if self.num_classes > MAX_CLASSES:
            raise BenchmarkConfigError(
                f"num_classes 最多 {MAX_CLASSES}（可区分的纹理数）: {self.num_classes}"
            )
        if self.T < 3:
            raise BenchmarkConfigError(f"T 必须 >= 3: {self.T}")
        if self.shift_lighting_ramp < 0:
            raise BenchmarkConfigError(f"shift_lighting_ramp 必须 >= 0: {self.shift_lighting_ramp}")
        if self.C not in (1, 3):
            raise BenchmarkConfigError(f"C 必须是 1 或 3: {self.C}")
        if self.clips_per_domain < 1 or self.val_clips < 0 or self.aux_clips < 0:
            raise BenchmarkConfigError("片段数量非法")
        if len(self.instances_per_clip) != 2:
            raise BenchmarkConfigError(f"instances_per_clip 需要两个值 (min,max): {self.instances_per_clip}")
        lo, hi = self.instances_per_clip
        if not 1 <= lo <= hi:
            raise BenchmarkConfigError(f"instances_per_clip 范围非法: {self.instances_per_clip}")
        if not 2 <= self.box_min <= self.box_max:
            raise BenchmarkConfigError(f"框尺寸范围非法: [{self.box_min}, {self.box_max}]")
        if self.box_max > min(self.H, self.W):
            raise BenchmarkConfigError(
                f"boxes cannot fit: box_max={self.box_max} 大于画面 {self.W}×{self.H}"
            )
        if self.long_tail_gamma < 0 or self.target_gamma < 0:
            raise BenchmarkConfigError("long-tail 指数必须 >= 0")
        if not 0.0 <= self.large_instance_prob <= 1.0:
            raise BenchmarkConfigError(f"large_instance_prob 超出 [0,1]: {self.large_instance_prob}")
        missing = set(self.primary_missing_classes)
        if any(not 0 <= c < self.num_classes for c in missing):
            raise BenchmarkConfigError(f"primary_missing_classes 越界: {self.primary_missing_classes}")
        if len(missing) >= self.num_classes:
            raise BenchmarkConfigError("主源域不能缺失全部类别")

    @property
    def source_shift(self) -> DomainShift:
        return DomainShift(0.0, 1.0, self.source_noise_sigma)

    @property
    def target_shift(self) -> DomainShift:
        return DomainShift(
            self.shift_background_delta,
            self.shift_contrast_scale,
            self.shift_noise_sigma,
            self.shift_lighting_ramp,
        )

    @property
    def auxiliary_shift(self) -> DomainShift:
        return self.source_shift.halfway(self.target_shift)


@dataclass(frozen=True)
class ClassTexture:
    """类别到纹理参数的映射"""

    cycles: int
    velocity: float
    vertical: bool

    @classmethod
    def for_class(cls, class_id: int) -> "ClassTexture":
        if not 0 <= class_id < MAX_CLASSES:
            raise BenchmarkConfigError(f"类别 {class_id} 没有对应纹理 (最多 {MAX_CLASSES} 类)")
        return cls(
            cycles=1 + class_id % 3,
            velocity=_VELOCITIES[(class_id // 3) % 2],
            vertical=class_id >= _VARIANTS_PER_AXIS,
        )

    @property
    def name(self) -> str:
        speed = "slow" if self.velocity == _VELOCITIES[0] else "fast"
        axis = "y" if self.vertical else "x"
        return f"grating{self.cycles}_{speed}_{axis}"


@dataclass(frozen=True)
class _SplitSpec:
    prefix: str
    domain: DomainTag
    num_clips: int
    shift: DomainShift
    class_weights: np.ndarray
    allow_large: bool
    labels_hidden: bool


def class_names(num_classes: int) -> Tuple[str, ...]:
    return tuple(f"c{c}_{ClassTexture.for_class(c).name}" for c in range(num_classes))


def power_law_weights(num_classes: int, gamma: float, excluded: Sequence[int] = ()) -> np.ndarray:
    """类别权重 (c+1)^(-gamma)，excluded 中的类别权重为 0"""
    weights = np.arange(1, num_classes + 1, dtype=np.float64) ** (-gamma)
    weights[list(excluded)] = 0.0
    return weights / weights.sum()


def allocate_counts(total: int, weights: np.ndarray) -> np.ndarray:
    """最大余数法把 total 个实例分配给各类别（gamma=0 时各类最多相差 1）"""
    raw = weights * total
    counts = np.floor(raw).astype(np.int64)
    remainder = total - int(counts.sum())
    if remainder > 0:
        # 余数相同按类别号升序
        order = sorted(range(len(weights)), key=lambda k: (-(raw[k] - counts[k]), k))
        for k in order[:remainder]:
            counts[k] += 1
    return counts


def _place_boxes(cfg: BenchmarkConfig, rng: np.random.Generator, allow_large: bool) -> List[Box]:
    if allow_large and rng.random() < cfg.large_instance_prob:
        w = int(rng.integers(int(0.72 * cfg.W), int(0.85 * cfg.W) + 1))
        h = int(rng.integers(int(0.72 * cfg.H), int(0.85 * cfg.H) + 1))
        x1 = int(rng.integers(0, cfg.W - w + 1))
        y1 = int(rng.integers(0, cfg.H - h + 1))
        return [Box(x1, y1, x1 + w, y1 + h)]

    lo, hi = cfg.instances_per_clip
    count = int(rng.integers(lo, hi + 1))
    boxes: List[Box] = []
    for _ in range(count):
        for _attempt in range(_PLACEMENT_ATTEMPTS):
            w = int(rng.integers(cfg.box_min, cfg.box_max + 1))
            h = int(rng.integers(cfg.box_min, cfg.box_max + 1))
            x1 = int(rng.integers(0, cfg.W - w + 1))
            y1 = int(rng.integers(0, cfg.H - h + 1))
            candidate = Box(x1, y1, x1 + w, y1 + h)
            if all(iou(candidate, b) <= cfg.max_overlap_iou for b in boxes):
                boxes.append(candidate)
                break
        else:
            raise BenchmarkConfigError(
                f"boxes cannot fit: 无法在 {cfg.W}×{cfg.H} 画面中放下 {count} 个"
                f"重叠度 <= {cfg.max_overlap_iou} 的实例"
            )
    return boxes


def _render_clip(
    cfg: BenchmarkConfig,
    boxes: Sequence[Box],
    labels: Sequence[int],
    shift: DomainShift,
    rng: np.random.Generator,
) -> Clip:
    T, H, W, C = cfg.T, cfg.H, cfg.W, cfg.C
    key = T // 2
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)

    gx, gy = rng.uniform(-10.0, 10.0, size=2)
    offset = rng.uniform(-8.0, 8.0)
    background = cfg.background_mean + offset + gx * (xx / W - 0.5) + gy * (yy / H - 0.5)
    frames = np.repeat(background[np.newaxis], T, axis=0)

    t_offsets = (np.arange(T) - key)[:, np.newaxis, np.newaxis]
    lighting = np.zeros((H, W), dtype=np.float64)
    for box, label in zip(boxes, labels):
        texture = ClassTexture.for_class(label)
        x1, y1, x2, y2 = (int(v) for v in box.as_tuple())
        amplitude = cfg.instance_amplitude * rng.uniform(0.9, 1.1)
        phase = rng.uniform(-0.1, 0.1)
        if texture.vertical:
            u = (yy[y1:y2, x1:x2] - y1 + 0.5) / (y2 - y1)
        else:
            u = (xx[y1:y2, x1:x2] - x1 + 0.5) / (x2 - x1)
        cycles = texture.cycles * u[np.newaxis] + texture.velocity * t_offsets + phase
        frames[:, y1:y2, x1:x2] = 128.0 + amplitude * np.sin(2.0 * math.pi * cycles)
        if shift.lighting_ramp > 0:
            rx, ry = rng.uniform(-shift.lighting_ramp, shift.lighting_ramp, size=2)
            lx = (xx[y1:y2, x1:x2] - x1 + 0.5) / (x2 - x1) - 0.5
            ly = (yy[y1:y2, x1:x2] - y1 + 0.5) / (y2 - y1) - 0.5
            lighting[y1:y2, x1:x2] = rx * lx + ry * ly

    frames = 128.0 + shift.contrast_scale * (frames - 128.0) + shift.background_delta
    frames = frames + lighting[np.newaxis]
    video = np.repeat(frames[..., np.newaxis], C, axis=3)
    video = video + rng.normal(0.0, shift.noise_sigma, size=video.shape)
    data = np.clip(np.floor(video + 0.5), 0, 255).astype(np.uint8)
    return Clip(data, key)


def _generate_split(cfg: BenchmarkConfig, spec: _SplitSpec, seq: np.random.SeedSequence, pool: TaskPool) -> DatasetIndex:
    label_seq, clips_seq = seq.spawn(2)
    clip_seqs = clips_seq.spawn(spec.num_clips)
    layout_seqs, render_seqs = zip(*(s.spawn(2) for s in clip_seqs)) if clip_seqs else ((), ())

    layouts = [
        _place_boxes(cfg, np.random.default_rng(s), spec.allow_large) for s in layout_seqs
    ]

    total = sum(len(boxes) for boxes in layouts)
    counts = allocate_counts(total, spec.class_weights)
    labels = np.repeat(np.arange(cfg.num_classes), counts)
    labels = np.random.default_rng(label_seq).permutation(labels)

    per_clip_labels: List[List[int]] = []
    cursor = 0
    for boxes in layouts:
        per_clip_labels.append([int(v) for v in labels[cursor:cursor + len(boxes)]])
        cursor += len(boxes)

    def render(i: int) -> Sample:
        clip = _render_clip(
            cfg, layouts[i], per_clip_labels[i], spec.shift, np.random.default_rng(render_seqs[i])
        )
        annotations = tuple(
            Annotation(box, label, instance_id, spec.domain.origin)
            for instance_id, (box, label) in enumerate(zip(layouts[i], per_clip_labels[i]))
        )
        return Sample(clip, annotations, f"{spec.prefix}_{i:05d}")

    samples = pool.map(render, range(spec.num_clips))
    ds = DatasetIndex(
        tuple(samples),
        domain_tag=spec.domain,
        num_classes=cfg.num_classes,
        class_names=class_names(cfg.num_classes),
        labels_hidden=spec.labels_hidden,
    )
    logger.info(
        "生成 %s: %d 个片段, 类别计数 %s", spec.prefix, len(ds), ds.class_counts.tolist()
    )
    return ds


def _split_specs(cfg: BenchmarkConfig) -> List[_SplitSpec]:
    target_weights = power_law_weights(cfg.num_classes, cfg.target_gamma)
    missing = sorted(set(cfg.primary_missing_classes))
    if missing:
        aux_excluded = [c for c in range(cfg.num_classes) if c not in missing]
    else:
        aux_excluded = []
    return [
        _SplitSpec("src", DomainTag.SOURCE, cfg.clips_per_domain, cfg.source_shift,
                   power_law_weights(cfg.num_classes, cfg.long_tail_gamma, missing), True, False),
        _SplitSpec("tgt", DomainTag.TARGET, cfg.clips_per_domain, cfg.target_shift,
                   target_weights, False, True),
        _SplitSpec("val", DomainTag.TARGET, cfg.val_clips, cfg.target_shift,
                   target_weights, False, False),
        _SplitSpec("aux", DomainTag.AUXILIARY, cfg.aux_clips, cfg.auxiliary_shift,
                   power_law_weights(cfg.num_classes, 0.0, aux_excluded), False, False),
    ]


@dataclass(frozen=True)
class BenchmarkSplits:
    source: DatasetIndex
    target_train: DatasetIndex
    target_val: DatasetIndex
    auxiliary: Optional[DatasetIndex] = None


def generate_splits(cfg: BenchmarkConfig, workers: int = 1) -> BenchmarkSplits:
    """
    生成全部划分（含可选的辅助源域）

    Args:
        cfg: 基准配置
        workers: 逐片段渲染的线程数，不影响结果
    """
    seqs = np.random.SeedSequence(cfg.seed).spawn(4)
    specs = _split_specs(cfg)
    pool = TaskPool(workers)
    source, target_train, target_val, auxiliary = (
        _generate_split(cfg, spec, seq, pool) if spec.num_clips > 0 or spec.domain is not DomainTag.AUXILIARY
        else None
        for spec, seq in zip(specs, seqs)
    )
    return BenchmarkSplits(source, target_train, target_val, auxiliary)


def gen_benchmark(cfg: BenchmarkConfig, workers: int = 1) -> Tuple[DatasetIndex, DatasetIndex, DatasetIndex]:
    """生成 (源域, 目标训练集, 目标验证集)"""
    splits = generate_splits(cfg, workers)
    return splits.source, splits.target_train, splits.target_val


def nearest_centroid_accuracy(
    train: DatasetIndex, test: DatasetIndex, pool_grid: int = 8
) -> float:
    """
    基准可学性检查：在 train 上计算各类特征质心，按最近质心给 test 实例分类

    Returns:
        test 上的分类准确率；test 没有实例时返回 0
    """
    from .model import extract_features

    def collect(ds: DatasetIndex) -> Tuple[np.ndarray, np.ndarray]:
        feats, labels = [], []
        for sample in ds.samples:
            for ann in sample.annotations:
                feats.append(extract_features(sample.clip, ann.box, pool_grid))
                labels.append(ann.class_id)
        dim = pool_grid * pool_grid * (ds.samples[0].clip.C if ds.samples else 1)
        return np.asarray(feats).reshape(-1, dim), np.asarray(labels, dtype=np.int64)

    train_x, train_y = collect(train)
    test_x, test_y = collect(test)
    if len(test_y) == 0:
        return 0.0

    present = np.unique(train_y)
    centroids = np.stack([train_x[train_y == c].mean(axis=0) for c in present])
    distances = ((test_x[:, np.newaxis, :] - centroids[np.newaxis]) ** 2).sum(axis=2)
    predicted = present[np.argmin(distances, axis=1)]
    return float(np.mean(predicted == test_y))
