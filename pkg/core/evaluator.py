"""
检测式评估 - 每类平均精度 (AP@IoU)、mAP 与伪标签混淆矩阵

评估协议：对真值框逐框分类，每个 (框, 类别) 产生一条预测，分数为模型概率；
框定位精确，因此 AP 衡量的是各类别的排序质量。没有真值的类别不计入 mAP。
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .clipstore import DatasetIndex
from .errors import LabelAlignmentError, NoGroundTruthError
from .geometry import Box, iou
from .model import ModelParams, extract_features, forward, stack_features
from .workers.task_pool import TaskPool


@dataclass(frozen=True)
class Prediction:
    sample_id: str
    box: Box
    class_id: int
    score: float

    def __post_init__(self):
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"预测分数必须在 [0,1]: {self.score}")


@dataclass(frozen=True)
class GroundTruth:
    sample_id: str
    box: Box
    class_id: int


@dataclass
class EvalResult:
    """
    Attributes:
        per_class_ap: 有真值的类别 → AP
        map: per_class_ap 的算术平均；没有任何真值时为 0.0
        support: 每类真值数量（长度 K）
    """

    per_class_ap: Dict[int, float]
    map: float
    support: List[int] = field(default_factory=list)

    def to_dict(self, class_names: Optional[Sequence[str]] = None) -> Dict:
        def name(k: int) -> str:
            return class_names[k] if class_names else str(k)

        return {
            "map": self.map,
            "per_class_ap": {name(k): ap for k, ap in sorted(self.per_class_ap.items())},
            "support": {name(k): n for k, n in enumerate(self.support)},
        }


def average_precision(
    preds: Sequence[Prediction],
    gts: Sequence[GroundTruth],
    class_id: int,
    iou_threshold: float = 0.5,
) -> float:
    """
    单类平均精度（不插值）

    预测按分数降序稳定排序（同分保持输入顺序）；每个预测匹配同一样本中
    IoU 最大且尚未匹配的同类真值，IoU >= 阈值即为真正例。
    AP = Σ(每个真正例所在名次的精度) / 真值数

    Raises:
        NoGroundTruthError: 该类别没有真值
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"IoU 阈值必须在 (0,1]: {iou_threshold}")

    gt_by_sample: Dict[str, List[Box]] = {}
    for gt in gts:
        if gt.class_id == class_id:
            gt_by_sample.setdefault(gt.sample_id, []).append(gt.box)
    num_gt = sum(len(v) for v in gt_by_sample.values())
    if num_gt == 0:
        raise NoGroundTruthError(class_id)

    ranked = sorted((p for p in preds if p.class_id == class_id), key=lambda p: -p.score)
    matched = {sid: [False] * len(boxes) for sid, boxes in gt_by_sample.items()}
    true_positives = 0
    total = 0.0
    for rank, pred in enumerate(ranked, start=1):
        candidates = gt_by_sample.get(pred.sample_id, [])
        best, best_iou = -1, -1.0
        for j, box in enumerate(candidates):
            if matched[pred.sample_id][j]:
                continue
            overlap = iou(pred.box, box)
            if overlap > best_iou:
                best, best_iou = j, overlap
        if best >= 0 and best_iou >= iou_threshold:
            matched[pred.sample_id][best] = True
            true_positives += 1
            total += true_positives / rank
    return total / num_gt


def mean_ap(
    preds: Sequence[Prediction],
    gts: Sequence[GroundTruth],
    num_classes: int,
    iou_threshold: float = 0.5,
    workers: int = 1,
) -> EvalResult:
    """逐类计算 AP（可并行），没有真值的类别被排除"""
    support = [0] * num_classes
    for gt in gts:
        support[gt.class_id] += 1

    def class_ap(k: int) -> Optional[float]:
        try:
            return average_precision(preds, gts, k, iou_threshold)
        except NoGroundTruthError:
            return None

    aps = TaskPool(workers).map(class_ap, range(num_classes))
    per_class = {k: ap for k, ap in enumerate(aps) if ap is not None}
    score = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return EvalResult(per_class, score, support)


def confusion_matrix(pseudo: Sequence[int], truth: Sequence[int], num_classes: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    混淆矩阵：(i, j) = 真实类别 i、伪标签 j 的实例数

    Returns:
        (计数矩阵, 行归一化矩阵)；空行保持为 0

    Raises:
        LabelAlignmentError: 两个列表长度不一致
    """
    if len(pseudo) != len(truth):
        raise LabelAlignmentError(f"伪标签 {len(pseudo)} 个，真值 {len(truth)} 个")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (np.asarray(truth, dtype=np.int64), np.asarray(pseudo, dtype=np.int64)), 1)
    rows = counts.sum(axis=1, keepdims=True)
    normalized = np.divide(counts, rows, out=np.zeros(counts.shape), where=rows > 0)
    return counts, normalized


def accuracy_of(counts: np.ndarray) -> float:
    total = counts.sum()
    return float(np.trace(counts) / total) if total else 0.0


def ground_truths(ds: DatasetIndex) -> List[GroundTruth]:
    return [
        GroundTruth(s.sample_id, a.box, a.class_id)
        for s in ds.samples
        for a in s.annotations
    ]


def _sample_probabilities(params: ModelParams, sample, pool_grid: int) -> np.ndarray:
    feats = stack_features(
        (extract_features(sample.clip, a.box, pool_grid) for a in sample.annotations),
        params.input_dim,
    )
    if len(feats) == 0:
        return np.zeros((0, params.num_classes))
    return forward(params, feats)


def predict_boxes(params: ModelParams, ds: DatasetIndex, pool_grid: int = 8, workers: int = 1) -> List[Prediction]:
    """每个真值框对每个类别产生一条预测，分数为模型概率"""
    probs = TaskPool(workers).map(lambda s: _sample_probabilities(params, s, pool_grid), ds.samples)
    predictions = []
    for sample, p in zip(ds.samples, probs):
        for ann, row in zip(sample.annotations, p):
            predictions.extend(
                Prediction(sample.sample_id, ann.box, k, float(min(1.0, max(0.0, row[k]))))
                for k in range(len(row))
            )
    return predictions


def predict_labels(params: ModelParams, ds: DatasetIndex, pool_grid: int = 8, workers: int = 1) -> Tuple[List[int], List[int]]:
    """逐框 argmax 预测，返回 (预测类别, 真实类别)"""
    probs = TaskPool(workers).map(lambda s: _sample_probabilities(params, s, pool_grid), ds.samples)
    predicted, truth = [], []
    for sample, p in zip(ds.samples, probs):
        if len(p):
            predicted.extend(int(k) for k in np.argmax(p, axis=1))
        truth.extend(a.class_id for a in sample.annotations)
    return predicted, truth


def evaluate(
    params: ModelParams,
    ds: DatasetIndex,
    pool_grid: int = 8,
    iou_threshold: float = 0.5,
    workers: int = 1,
) -> EvalResult:
    """在数据集真值框上评估模型，返回每类 AP 与 mAP"""
    return mean_ap(
        predict_boxes(params, ds, pool_grid, workers),
        ground_truths(ds),
        ds.num_classes,
        iou_threshold,
        workers,
    )
