"""
关键帧标注传播 - 用检测框把关键帧真值扩展到普通帧

对每个非关键帧，取不晚于它的最近关键帧的标注，与该帧的检测框按 IoU
从高到低贪心一对一匹配；IoU >= iou_min 的检测框继承 class_id / instance_id，
未匹配的检测框丢弃。关键帧保留原始真值。

CSV 约定：sample_id 写作 "<序列名>@<帧号>"，坐标沿用归一化值。
"""

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple

import numpy as np

from .clipstore import Annotation, Origin
from .errors import AnnotationFormatError, DataError, MissingKeyframeError
from .geometry import Box, iou
from .importers.annotation_importer import AnnotationRecord, parse_annotation_csv, write_annotation_csv
from .utils.logger import get_logger
from .workers.task_pool import TaskPool

logger = get_logger(__name__)

FRAME_SEPARATOR = "@"

Frames = Dict[int, List[Annotation]]


@dataclass(frozen=True)
class FrameDetections:
    """单帧的未标注检测框"""

    frame_index: int
    boxes: Tuple[Box, ...] = ()


@dataclass
class LinearTracks:
    """合成直线轨迹：关键帧真值、带抖动的检测框，以及每个检测框的真实 instance_id"""

    keyframes: Frames
    detections: List[FrameDetections]
    detection_ids: Dict[int, List[int]] = field(default_factory=dict)


def iou_matrix(rows: Sequence[Box], cols: Sequence[Box]) -> np.ndarray:
    matrix = np.zeros((len(rows), len(cols)))
    for i, a in enumerate(rows):
        for j, b in enumerate(cols):
            matrix[i, j] = iou(a, b)
    return matrix


def greedy_iou_match(ious: np.ndarray, iou_min: float) -> List[Tuple[int, int]]:
    """
    按 IoU 降序贪心一对一匹配，同 IoU 时按 (行, 列) 顺序

    Returns:
        (行下标, 列下标) 列表，按匹配先后排列
    """
    if ious.size == 0:
        return []
    order = np.argsort(-ious.reshape(-1), kind="stable")
    num_cols = ious.shape[1]
    used_rows, used_cols = set(), set()
    matches = []
    for flat in order:
        i, j = divmod(int(flat), num_cols)
        if ious[i, j] < iou_min:
            break
        if i in used_rows or j in used_cols:
            continue
        used_rows.add(i)
        used_cols.add(j)
        matches.append((i, j))
    return matches


def propagate_annotations(
    keyframes: Frames,
    detections: Sequence[FrameDetections],
    iou_min: float = 0.5,
) -> Frames:
    """
    传播关键帧标注

    Args:
        keyframes: 关键帧号 → 真值标注
        detections: 按帧号递增排列的检测结果
        iou_min: 最小匹配 IoU

    Returns:
        帧号 → 标注；关键帧原样保留，非关键帧只含匹配成功的检测框

    Raises:
        MissingKeyframeError: 某个检测帧之前没有关键帧
    """
    if not 0.0 <= iou_min <= 1.0:
        raise ValueError(f"iou_min 必须在 [0,1]: {iou_min}")
    key_indices = sorted(keyframes)
    output: Frames = {k: list(keyframes[k]) for k in key_indices}

    previous = None
    for frame in detections:
        if previous is not None and frame.frame_index <= previous:
            raise DataError(f"检测帧号必须递增: {previous} -> {frame.frame_index}")
        previous = frame.frame_index
        if frame.frame_index in keyframes:
            continue

        anchor = _latest_keyframe(key_indices, frame.frame_index)
        reference = keyframes[anchor]
        matches = greedy_iou_match(iou_matrix([a.box for a in reference], frame.boxes), iou_min)
        by_detection = sorted(matches, key=lambda m: m[1])
        output[frame.frame_index] = [reference[i].with_box(frame.boxes[j]) for i, j in by_detection]
    return dict(sorted(output.items()))


def _latest_keyframe(key_indices: Sequence[int], frame_index: int) -> int:
    pos = int(np.searchsorted(key_indices, frame_index, side="right")) - 1
    if pos < 0:
        raise MissingKeyframeError(f"帧 {frame_index} 之前没有关键帧")
    return key_indices[pos]


# ==================== 序列级 / CSV ====================

def split_sample_id(sample_id: str) -> Tuple[str, int]:
    """'<序列名>@<帧号>' → (序列名, 帧号)"""
    sequence, sep, frame = sample_id.rpartition(FRAME_SEPARATOR)
    if not sep or not sequence:
        raise AnnotationFormatError(f"sample_id 应为 '<序列名>@<帧号>': {sample_id}")
    try:
        return sequence, int(frame)
    except ValueError:
        raise AnnotationFormatError(f"帧号不是整数: {sample_id}")


def _record_box(record: AnnotationRecord) -> Box:
    return Box(record.x1, record.y1, record.x2, record.y2)


def group_keyframes(records: Iterable[AnnotationRecord]) -> Dict[str, Frames]:
    grouped: Dict[str, Frames] = {}
    for r in records:
        sequence, frame = split_sample_id(r.sample_id)
        grouped.setdefault(sequence, {}).setdefault(frame, []).append(
            Annotation(_record_box(r), r.class_id, r.instance_id, Origin.TARGET)
        )
    return grouped


def group_detections(records: Iterable[AnnotationRecord]) -> Dict[str, List[FrameDetections]]:
    frames: Dict[str, Dict[int, List[Box]]] = {}
    for r in records:
        sequence, frame = split_sample_id(r.sample_id)
        frames.setdefault(sequence, {}).setdefault(frame, []).append(_record_box(r))
    return {
        seq: [FrameDetections(k, tuple(boxes)) for k, boxes in sorted(by_frame.items())]
        for seq, by_frame in frames.items()
    }


def propagate_sequences(
    keyframes: Dict[str, Frames],
    detections: Dict[str, List[FrameDetections]],
    iou_min: float = 0.5,
    workers: int = 1,
) -> Dict[str, Frames]:
    """逐序列传播（序列之间并行）"""
    sequences = sorted(set(keyframes) | set(detections))
    missing = [s for s in sequences if s not in keyframes and detections.get(s)]
    if missing:
        raise MissingKeyframeError(f"序列没有关键帧: {', '.join(missing[:5])}")

    results = TaskPool(workers).map(
        lambda s: propagate_annotations(keyframes.get(s, {}), detections.get(s, []), iou_min),
        sequences,
    )
    return dict(zip(sequences, results))


def propagate_csv(
    keyframe_stream: TextIO,
    detection_stream: TextIO,
    out_stream: TextIO,
    iou_min: float = 0.5,
    workers: int = 1,
) -> int:
    """
    读取关键帧 CSV 与检测框 CSV（class_id 允许 -1），写出稠密标注 CSV

    Returns:
        写出的标注条数
    """
    keyframes = group_keyframes(parse_annotation_csv(keyframe_stream))
    detections = group_detections(parse_annotation_csv(detection_stream, allow_unlabeled=True))
    propagated = propagate_sequences(keyframes, detections, iou_min, workers)

    records = [
        AnnotationRecord(f"{seq}{FRAME_SEPARATOR}{frame}", *a.box.as_tuple(), a.class_id, a.instance_id)
        for seq, frames in propagated.items()
        for frame, annotations in frames.items()
        for a in annotations
    ]
    write_annotation_csv(records, out_stream)
    logger.info("传播完成: %d 个序列, 输出 %d 条标注", len(propagated), len(records))
    return len(records)


# ==================== 合成轨迹 ====================

def make_linear_tracks(
    rng: np.random.Generator,
    num_tracks: int = 3,
    num_frames: int = 30,
    key_interval: int = 10,
    W: int = 320,
    H: int = 240,
    box_size: Tuple[int, int] = (30, 60),
    max_speed: float = 2.0,
    jitter: float = 0.1,
    num_classes: int = 6,
) -> LinearTracks:
    """
    匀速直线运动的合成轨迹

    关键帧为 0, key_interval, 2·key_interval, ...；
    每帧检测框 = 真值框 + 最多 jitter 倍框宽/高的均匀噪声，帧内顺序随机。
    """
    sizes = rng.uniform(box_size[0], box_size[1], size=(num_tracks, 2))
    starts = rng.uniform(0, 1, size=(num_tracks, 2)) * (np.array([W, H]) - sizes)
    velocities = rng.uniform(-max_speed, max_speed, size=(num_tracks, 2))
    classes = rng.integers(0, num_classes, size=num_tracks)

    keyframes: Frames = {}
    detections: List[FrameDetections] = []
    detection_ids: Dict[int, List[int]] = {}
    for t in range(num_frames):
        truth = []
        for k in range(num_tracks):
            x, y = np.clip(starts[k] + velocities[k] * t, 0, np.array([W, H]) - sizes[k])
            truth.append(Box(float(x), float(y), float(x + sizes[k, 0]), float(y + sizes[k, 1])))

        if t % key_interval == 0:
            keyframes[t] = [
                Annotation(b, int(classes[k]), k, Origin.TARGET) for k, b in enumerate(truth)
            ]
            continue

        boxes, ids = [], []
        for k in rng.permutation(num_tracks):
            b = truth[k]
            d = rng.uniform(-jitter, jitter, size=4) * np.array([b.width, b.height, b.width, b.height])
            boxes.append(Box(b.x1 + d[0], b.y1 + d[1], b.x2 + d[2], b.y2 + d[3]).clamp(W, H))
            ids.append(int(k))
        detections.append(FrameDetections(t, tuple(boxes)))
        detection_ids[t] = ids
    return LinearTracks(keyframes, detections, detection_ids)


def propagation_accuracy(tracks: LinearTracks, propagated: Frames) -> Optional[float]:
    """非关键帧上传播出的框中 instance_id 正确的比例；没有传播框时返回 None"""
    truth = {
        (frame.frame_index, box.as_tuple()): tracks.detection_ids[frame.frame_index][j]
        for frame in tracks.detections
        for j, box in enumerate(frame.boxes)
    }
    total = correct = 0
    for frame_index, annotations in propagated.items():
        if frame_index in tracks.keyframes:
            continue
        for a in annotations:
            total += 1
            correct += truth.get((frame_index, a.box.as_tuple())) == a.instance_id
    return correct / total if total else None
