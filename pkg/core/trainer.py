"""
自训练循环 - 混合采样 + 均值教师

每个训练步:
    1. 教师对目标框给出伪标签（argmax + 置信度）
    2. 源/目标样本逐对混合（受 enable_mix / enable_pseudo / enable_resize 控制）
    3. L_S: 原始源片段上的真值交叉熵（单位权重）
    4. L_M: 混合片段上的交叉熵，每个片段乘以 λ（置信度达到阈值的目标实例比例）
    5. ℓ = L_S + L_M → SGD (Nesterov) → 教师 EMA → t += 1

随机数按用途拆分为独立的计数器流（Philox），并行度不影响结果。
"""

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .clipstore import Annotation, DatasetIndex, Origin, Sample, cap_per_class, extend_source
from .errors import (
    ClassSpaceError,
    ConfigError,
    DataError,
    DegenerateBoxError,
    NonFiniteError,
    NoSourceInstancesError,
    ShapeMismatchError,
)
from .evaluator import accuracy_of, confusion_matrix, evaluate
from .geometry import Box, pixel_span
from .mixer import MixConfig, MixedSample, PseudoLabel, aim_mix
from .model import (
    ModelParams,
    ema_update,
    extract_features,
    feature_dim,
    forward,
    init_params,
    loss_and_grad_arrays,
    save_model,
    stack_features,
)
from .utils.logger import get_logger
from .workers.task_pool import TaskPool

logger = get_logger(__name__)

RNG_STREAMS = ("init", "batch_order", "target_order", "instance_select", "cap", "jitter")
LAMBDA_SCOPES = ("clip", "batch")

METRICS_FILE = "metrics.jsonl"
FINAL_MODEL_FILE = "final.mdl1"
TEACHER_MODEL_FILE = "teacher.mdl1"


@dataclass(frozen=True)
class TrainConfig:
    """
    训练配置

    学习率：前 warmup_epochs 个 epoch 从 lr_base/10 线性升到 lr_base，
    之后余弦衰减到 lr_base·lr_final_ratio。
    """

    lr_base: float = 1.25e-2
    lr_final_ratio: float = 0.01
    warmup_epochs: int = 1
    momentum: float = 0.9
    nesterov: bool = True
    weight_decay: float = 1e-7
    epochs: int = 20
    batch_size: int = 8
    ema_alpha: float = 0.99
    conf_threshold: float = 0.9
    expand_factor: float = 0.2
    discard_threshold: float = 0.4
    downscale_area_ratio: float = 0.5
    class_cap: int = 5000
    seed: int = 42
    enable_mix: bool = True
    enable_pseudo: bool = True
    enable_resize: bool = True
    hidden_dim: int = 64
    pool_grid: int = 8
    lambda_scope: str = "clip"
    target_box_jitter: float = 0.0
    workers: int = 1
    eval_iou_threshold: float = 0.5

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.lr_base > 0, f"lr_base 必须 > 0: {self.lr_base}"),
            (0 < self.lr_final_ratio <= 1, f"lr_final_ratio 必须在 (0,1]: {self.lr_final_ratio}"),
            (self.warmup_epochs >= 0, f"warmup_epochs 必须 >= 0: {self.warmup_epochs}"),
            (0 <= self.momentum < 1, f"momentum 必须在 [0,1): {self.momentum}"),
            (self.weight_decay >= 0, f"weight_decay 必须 >= 0: {self.weight_decay}"),
            (self.epochs >= 0, f"epochs 必须 >= 0: {self.epochs}"),
            (self.batch_size >= 1, f"batch_size 必须 >= 1: {self.batch_size}"),
            (0 <= self.ema_alpha <= 1, f"ema_alpha 必须在 [0,1]: {self.ema_alpha}"),
            (0 <= self.conf_threshold <= 1, f"conf_threshold 必须在 [0,1]: {self.conf_threshold}"),
            (self.expand_factor >= 0, f"expand_factor 必须 >= 0: {self.expand_factor}"),
            (0 <= self.discard_threshold <= 1, f"discard_threshold 必须在 [0,1]: {self.discard_threshold}"),
            (0 < self.downscale_area_ratio <= 1, f"downscale_area_ratio 必须在 (0,1]: {self.downscale_area_ratio}"),
            (self.class_cap >= 1, f"class_cap 必须 >= 1: {self.class_cap}"),
            (self.hidden_dim >= 1, f"hidden_dim 必须 >= 1: {self.hidden_dim}"),
            (self.pool_grid >= 1, f"pool_grid 必须 >= 1: {self.pool_grid}"),
            (self.lambda_scope in LAMBDA_SCOPES, f"lambda_scope 必须是 {LAMBDA_SCOPES} 之一: {self.lambda_scope}"),
            (0 <= self.target_box_jitter <= 0.5, f"target_box_jitter 必须在 [0,0.5]: {self.target_box_jitter}"),
            (self.workers >= 1, f"workers 必须 >= 1: {self.workers}"),
            (0 < self.eval_iou_threshold <= 1, f"eval_iou_threshold 必须在 (0,1]: {self.eval_iou_threshold}"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    def with_ablation(self, enable_mix: bool, enable_pseudo: bool, enable_resize: bool) -> "TrainConfig":
        return dataclasses.replace(
            self, enable_mix=enable_mix, enable_pseudo=enable_pseudo, enable_resize=enable_resize
        )


@dataclass(frozen=True)
class StepMetrics:
    step: int
    loss: float
    loss_source: float
    loss_mixed: float
    lambdas: Tuple[float, ...]
    discarded: int
    kept: int
    lr: float
    downscaled: int
    pseudo_labels: Tuple[int, ...] = ()
    pseudo_truth: Tuple[int, ...] = ()


def make_rng_streams(seed: int) -> Dict[str, np.random.Generator]:
    """按用途派生独立的 Philox 随机流"""
    children = np.random.SeedSequence(seed).spawn(len(RNG_STREAMS))
    return {name: np.random.Generator(np.random.Philox(child)) for name, child in zip(RNG_STREAMS, children)}


@dataclass
class TrainState:
    """
    Attributes:
        student: 学生参数 θ
        teacher: 教师参数 θ'
        buffers: 动量缓冲
        step: 已完成的训练步数 t
        steps_per_epoch: 学习率调度使用
        rngs: 各用途随机流
        lambda_history: 每步的 λ 列表
    """

    student: ModelParams
    teacher: ModelParams
    buffers: ModelParams
    step: int = 0
    steps_per_epoch: int = 1
    rngs: Dict[str, np.random.Generator] = field(default_factory=dict, repr=False)
    lambda_history: List[Tuple[float, ...]] = field(default_factory=list, repr=False)
    pool: Optional[TaskPool] = field(default=None, repr=False)

    @classmethod
    def initial(
        cls,
        params: ModelParams,
        rngs: Dict[str, np.random.Generator],
        steps_per_epoch: int = 1,
        workers: int = 1,
    ) -> "TrainState":
        """教师初始化为学生的精确副本，动量缓冲为 0"""
        return cls(
            student=params,
            teacher=params.copy(),
            buffers=params.zeros_like(),
            steps_per_epoch=steps_per_epoch,
            rngs=rngs,
            pool=TaskPool(workers),
        )


@dataclass
class TrainResult:
    student: ModelParams
    teacher: ModelParams
    epochs: List[Dict] = field(default_factory=list)
    lambda_history: List[Tuple[float, ...]] = field(default_factory=list)
    steps: int = 0


# ==================== 组件 ====================

def pseudo_label(teacher: ModelParams, clip, boxes: Sequence[Box], pool_grid: int = 8) -> List[PseudoLabel]:
    """
    教师伪标签：每个框取 argmax 类别（同分取最小类别号）与对应概率
    """
    if not boxes:
        return []
    feats = np.stack([extract_features(clip, b, pool_grid) for b in boxes])
    probs = forward(teacher, feats)
    labels = np.argmax(probs, axis=1)
    return [PseudoLabel(int(k), float(probs[i, k])) for i, k in enumerate(labels)]


def compute_lambda(confidences: Sequence[float], threshold: float) -> float:
    """置信度 >= threshold 的比例；列表为空时为 1.0"""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"阈值必须在 [0,1]: {threshold}")
    if len(confidences) == 0:
        return 1.0
    return float(np.count_nonzero(np.asarray(confidences) >= threshold)) / len(confidences)


def lr_at(step: int, steps_per_epoch: int, cfg: TrainConfig) -> float:
    """预热 + 余弦调度"""
    base = cfg.lr_base
    final = base * cfg.lr_final_ratio
    warm = cfg.warmup_epochs * steps_per_epoch
    total = cfg.epochs * steps_per_epoch
    if step < warm:
        return base / 10.0 + (base - base / 10.0) * step / warm
    remaining = total - warm
    u = (step - warm) / max(1, remaining - 1)
    u = min(1.0, max(0.0, u))
    return final + (base - final) * (1.0 + math.cos(math.pi * u)) / 2.0


def sgd_update(
    params: ModelParams,
    grads: ModelParams,
    buffers: ModelParams,
    lr: float,
    cfg: TrainConfig,
) -> Tuple[ModelParams, ModelParams]:
    """
    带权重衰减的动量 SGD

    g = grads + wd·θ;  v = m·v + g
    Nesterov: θ -= lr·(g + m·v)，否则 θ -= lr·v

    Raises:
        NonFiniteError: 梯度包含 NaN/Inf
    """
    if not grads.is_finite():
        raise NonFiniteError(f"梯度包含 NaN/Inf (lr={lr})")
    g = grads.combine(params, lambda gr, p: gr + cfg.weight_decay * p)
    v = buffers.combine(g, lambda b, gr: cfg.momentum * b + gr)
    if cfg.nesterov:
        step = g.combine(v, lambda gr, b: gr + cfg.momentum * b)
    else:
        step = v
    return params.combine(step, lambda p, s: p - lr * s), v


def _has_pixels(box: Box, W: int, H: int) -> bool:
    c0, c1 = pixel_span(box.x1, box.x2, W)
    r0, r1 = pixel_span(box.y1, box.y2, H)
    return c1 > c0 and r1 > r0


def check_box_pixels(ds: DatasetIndex) -> None:
    """
    每个标注框在画面内至少覆盖一个像素

    Raises:
        DegenerateBoxError: 第一个没有像素的框
    """
    for sample in ds.samples:
        W, H = sample.clip.W, sample.clip.H
        for ann in sample.annotations:
            if not _has_pixels(ann.box, W, H):
                raise DegenerateBoxError(
                    f"{ds.domain_tag.value} 样本 {sample.sample_id} 的标注框没有像素: {ann.box.as_tuple()}"
                )


def jitter_targets(samples: Sequence[Sample], fraction: float, rng: np.random.Generator) -> List[Sample]:
    """
    目标框加均匀噪声（每个坐标最多 fraction 倍框宽/高），裁剪到画面；
    扰动后没有像素的框保持原样
    """
    if fraction <= 0:
        return list(samples)
    jittered = []
    for sample in samples:
        W, H = sample.clip.W, sample.clip.H
        anns = []
        for ann in sample.annotations:
            b = ann.box
            d = rng.uniform(-fraction, fraction, size=4) * np.array([b.width, b.height, b.width, b.height])
            x1, x2 = sorted((b.x1 + d[0], b.x2 + d[2]))
            y1, y2 = sorted((b.y1 + d[1], b.y2 + d[3]))
            moved = Box(float(x1), float(y1), float(x2), float(y2)).clamp(W, H)
            anns.append(ann.with_box(moved) if _has_pixels(moved, W, H) else ann)
        jittered.append(sample.with_annotations(anns))
    return jittered


def _target_only(target: Sample, pseudo: Sequence[PseudoLabel]) -> MixedSample:
    """不混合：目标片段 + 全部目标框的伪标签"""
    annotations = tuple(a.with_label(p.class_id, Origin.TARGET) for a, p in zip(target.annotations, pseudo))
    return MixedSample(
        clip=target.clip,
        annotations=annotations,
        confidences=tuple(p.confidence for p in pseudo),
        source_id="",
        target_id=target.sample_id,
    )


@dataclass
class _PairTerms:
    """一对源/目标样本对损失的贡献（特征已提取）"""

    source_feats: np.ndarray
    source_labels: np.ndarray
    mixed_feats: np.ndarray
    mixed_labels: np.ndarray
    confidences: Tuple[float, ...]
    discarded: int
    kept: int
    downscaled: bool
    pseudo_labels: Tuple[int, ...]
    pseudo_truth: Tuple[int, ...]


def _features_of(clip, annotations: Sequence[Annotation], pool_grid: int, dim: int) -> Tuple[np.ndarray, np.ndarray]:
    usable = [a for a in annotations if _has_pixels(a.box, clip.W, clip.H)]
    feats = stack_features((extract_features(clip, a.box, pool_grid) for a in usable), dim)
    return feats, np.array([a.class_id for a in usable], dtype=np.int64)


def _prepare_pair(
    state: TrainState,
    source: Sample,
    target: Sample,
    rng: np.random.Generator,
    cfg: TrainConfig,
) -> _PairTerms:
    G, D = cfg.pool_grid, state.student.input_dim
    source_feats, source_labels = _features_of(source.clip, source.annotations, G, D)

    targets = [a for a in target.annotations if _has_pixels(a.box, target.clip.W, target.clip.H)]
    target = target.with_annotations(targets)
    pseudo = pseudo_label(state.teacher, target.clip, target.boxes, G)

    mixed: Optional[MixedSample] = None
    if cfg.enable_mix:
        try:
            mixed = aim_mix(source, target, pseudo, rng, MixConfig.from_train_config(cfg))
        except NoSourceInstancesError:
            mixed = _target_only(target, pseudo) if cfg.enable_pseudo else None
        if mixed is not None and not cfg.enable_pseudo:
            mixed = dataclasses.replace(mixed, annotations=tuple(mixed.source_annotations), confidences=())
    elif cfg.enable_pseudo:
        mixed = _target_only(target, pseudo)

    if mixed is None:
        mixed_feats, mixed_labels = np.zeros((0, D)), np.zeros(0, dtype=np.int64)
        confidences, discarded, kept, downscaled = (), 0, 0, False
    else:
        mixed_feats, mixed_labels = _features_of(mixed.clip, mixed.annotations, G, D)
        confidences = mixed.confidences
        discarded, kept = mixed.discarded_count, len(mixed.confidences)
        downscaled = mixed.downscaled

    return _PairTerms(
        source_feats=source_feats,
        source_labels=source_labels,
        mixed_feats=mixed_feats,
        mixed_labels=mixed_labels,
        confidences=tuple(confidences),
        discarded=discarded,
        kept=kept,
        downscaled=downscaled,
        pseudo_labels=tuple(p.class_id for p in pseudo),
        pseudo_truth=tuple(a.class_id for a in targets),
    )


def train_step(
    state: TrainState,
    source_batch: Sequence[Sample],
    target_batch: Sequence[Sample],
    cfg: TrainConfig,
) -> Tuple[TrainState, StepMetrics]:
    """
    一个训练步（第 i 个源样本与第 i mod |目标批| 个目标样本配对）

    Returns:
        (更新后的状态, 本步指标)

    Raises:
        NonFiniteError: 损失或梯度出现 NaN/Inf
    """
    if not source_batch or not target_batch:
        raise DataError("训练批次不能为空")
    pool = state.pool or TaskPool(cfg.workers)

    targets = jitter_targets(target_batch, cfg.target_box_jitter, state.rngs["jitter"])
    seeds = state.rngs["instance_select"].integers(0, 2**63 - 1, size=len(source_batch), dtype=np.int64)
    jobs = [
        (src, targets[i % len(targets)], np.random.Generator(np.random.Philox(int(seeds[i]))))
        for i, src in enumerate(source_batch)
    ]
    terms: List[_PairTerms] = pool.map(lambda job: _prepare_pair(state, *job, cfg), jobs)

    student = state.student
    grads = student.zeros_like()

    source_feats = np.concatenate([t.source_feats for t in terms])
    source_labels = np.concatenate([t.source_labels for t in terms])
    loss_source = 0.0
    if len(source_labels):
        loss_source, grads = loss_and_grad_arrays(student, source_feats, source_labels, np.ones(len(source_labels)))

    clips = [t for t in terms if len(t.mixed_labels)]
    if cfg.lambda_scope == "batch":
        shared = compute_lambda([c for t in clips for c in t.confidences], cfg.conf_threshold)
        lambdas = [shared] * len(clips)
    else:
        lambdas = [compute_lambda(t.confidences, cfg.conf_threshold) for t in clips]

    def clip_term(t: _PairTerms) -> Tuple[float, ModelParams]:
        return loss_and_grad_arrays(student, t.mixed_feats, t.mixed_labels, np.ones(len(t.mixed_labels)))

    loss_mixed = 0.0
    for lam, (loss_c, grad_c) in zip(lambdas, pool.map(clip_term, clips)):
        scale = lam / len(clips)
        loss_mixed += scale * loss_c
        grads = grads.combine(grad_c, lambda g, gc: g + scale * gc)

    loss = loss_source + loss_mixed
    if not math.isfinite(loss):
        raise NonFiniteError(f"第 {state.step} 步损失非有限: L_S={loss_source}, L_M={loss_mixed}")

    lr = lr_at(state.step, state.steps_per_epoch, cfg)
    state.student, state.buffers = sgd_update(student, grads, state.buffers, lr, cfg)
    state.teacher = ema_update(state.teacher, state.student, cfg.ema_alpha)
    state.lambda_history.append(tuple(lambdas))

    metrics = StepMetrics(
        step=state.step,
        loss=loss,
        loss_source=loss_source,
        loss_mixed=loss_mixed,
        lambdas=tuple(lambdas),
        discarded=sum(t.discarded for t in terms),
        kept=sum(t.kept for t in terms),
        lr=lr,
        downscaled=sum(t.downscaled for t in terms),
        pseudo_labels=tuple(k for t in terms for k in t.pseudo_labels),
        pseudo_truth=tuple(k for t in terms for k in t.pseudo_truth),
    )
    state.step += 1
    return state, metrics


# ==================== 训练主循环 ====================

def _check_datasets(datasets: Sequence[DatasetIndex]) -> None:
    for ds in datasets:
        if len(ds) == 0:
            raise DataError(f"{ds.domain_tag.value} 数据集为空")
    classes = {ds.num_classes for ds in datasets}
    if len(classes) != 1:
        raise ClassSpaceError(f"数据集类别数不一致: {sorted(classes)}")
    shapes = {s.clip.data.shape[1:] for ds in datasets for s in ds.samples}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"片段尺寸不一致 (H,W,C): {sorted(shapes)}")
    for ds in datasets:
        check_box_pixels(ds)


def _epoch_summary(
    epoch: int,
    step_metrics: Sequence[StepMetrics],
    eval_ds: DatasetIndex,
    state: TrainState,
    cfg: TrainConfig,
) -> Dict:
    result = evaluate(state.student, eval_ds, cfg.pool_grid, cfg.eval_iou_threshold, cfg.workers)
    lambdas = [lam for m in step_metrics for lam in m.lambdas]
    discarded = sum(m.discarded for m in step_metrics)
    kept = sum(m.kept for m in step_metrics)
    counts, _ = confusion_matrix(
        [k for m in step_metrics for k in m.pseudo_labels],
        [k for m in step_metrics for k in m.pseudo_truth],
        eval_ds.num_classes,
    )
    return {
        "epoch": epoch,
        "target_map": result.map,
        "per_class_ap": result.to_dict(eval_ds.class_names)["per_class_ap"],
        "mean_lambda": float(np.mean(lambdas)) if lambdas else None,
        "discard_rate": discarded / (discarded + kept) if discarded + kept else 0.0,
        "lr": step_metrics[-1].lr if step_metrics else lr_at(0, state.steps_per_epoch, cfg),
        "loss": float(np.mean([m.loss for m in step_metrics])) if step_metrics else None,
        "pseudo_accuracy": accuracy_of(counts),
        "confusion": counts.tolist(),
    }


def train(
    cfg: TrainConfig,
    source: DatasetIndex,
    aux: Optional[DatasetIndex],
    target: DatasetIndex,
    target_val: Optional[DatasetIndex] = None,
    out_dir: Optional[Union[str, Path]] = None,
) -> TrainResult:
    """
    完整训练

    Args:
        cfg: 训练配置
        source: 有标签源域
        aux: 可选辅助源域，与源域拼接
        target: 目标域训练集（只使用框）
        target_val: 每个 epoch 评估用的目标域验证集，缺省时在 target 上评估
        out_dir: 输出目录（metrics.jsonl / final.mdl1 / teacher.mdl1）

    Returns:
        TrainResult，student 为最终学生参数
    """
    cfg.validate()
    datasets = [source, target] + [d for d in (aux, target_val) if d is not None]
    _check_datasets(datasets)

    logger.info(
        "训练配置: epochs=%d batch=%d ema_alpha=%s conf_threshold=%s mix=%s pseudo=%s resize=%s lambda_scope=%s",
        cfg.epochs, cfg.batch_size, cfg.ema_alpha, cfg.conf_threshold,
        cfg.enable_mix, cfg.enable_pseudo, cfg.enable_resize, cfg.lambda_scope,
    )

    rngs = make_rng_streams(cfg.seed)
    train_source = extend_source(source, aux) if aux is not None else source
    train_source = cap_per_class(train_source, cfg.class_cap, rngs["cap"])
    if len(train_source) == 0:
        raise DataError("截取后源域为空")

    C = source.samples[0].clip.C
    params = init_params(feature_dim(cfg.pool_grid, C), cfg.hidden_dim, source.num_classes, rngs["init"])
    steps_per_epoch = math.ceil(len(train_source) / cfg.batch_size)
    state = TrainState.initial(params, rngs, steps_per_epoch, cfg.workers)

    eval_ds = target_val if target_val is not None else target
    out_path = Path(out_dir) if out_dir is not None else None
    metrics_file = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        metrics_file = open(out_path / METRICS_FILE, "w", encoding="utf-8", newline="\n")

    epochs: List[Dict] = []
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = rngs["batch_order"].permutation(len(train_source))
            target_order = rngs["target_order"].permutation(len(target))
            cursor = 0
            step_metrics: List[StepMetrics] = []
            for b in range(steps_per_epoch):
                idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                source_batch = [train_source.samples[i] for i in idx]
                target_batch = [
                    target.samples[target_order[(cursor + k) % len(target)]] for k in range(len(source_batch))
                ]
                cursor += len(source_batch)
                state, metrics = train_step(state, source_batch, target_batch, cfg)
                step_metrics.append(metrics)

            summary = _epoch_summary(epoch, step_metrics, eval_ds, state, cfg)
            epochs.append(summary)
            logger.info(
                "epoch %d/%d: loss=%.4f mAP=%.4f mean_lambda=%s discard_rate=%.3f pseudo_acc=%.3f lr=%.6f",
                epoch, cfg.epochs, summary["loss"], summary["target_map"], summary["mean_lambda"],
                summary["discard_rate"], summary["pseudo_accuracy"], summary["lr"],
            )
            if metrics_file is not None:
                metrics_file.write(json.dumps(summary) + "\n")
                metrics_file.flush()
    finally:
        if metrics_file is not None:
            metrics_file.close()

    if out_path is not None:
        save_model(out_path / FINAL_MODEL_FILE, state.student, cfg.pool_grid, C)
        save_model(out_path / TEACHER_MODEL_FILE, state.teacher, cfg.pool_grid, C)
        logger.info("模型已保存到 %s", out_path)

    return TrainResult(state.student, state.teacher, epochs, list(state.lambda_history), state.step)
