"""
框几何工具 - 轴对齐框运算、重叠度量、缩放变换与掩码栅格化

约定：
    框使用半开像素区间，像素 (i, j) 在框内当且仅当
    x1 <= j < x2 且 y1 <= i < y2，因此面积恰为 (x2-x1)*(y2-y1)。
    掩码按 T×H×W（行优先图像）存储。

所有函数均为纯函数，可在任意线程中并发调用。
"""

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np

from .errors import DegenerateBoxError

# 2D 掩码: H×W uint8；3D 掩码: T×H×W uint8
Mask2D = np.ndarray
Mask3D = np.ndarray


@dataclass(frozen=True)
class Box:
    """轴对齐像素框 (x1, y1, x2, y2)"""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise DegenerateBoxError(
                f"框坐标顺序非法: ({self.x1}, {self.y1}, {self.x2}, {self.y2})"
            )

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def clamp(self, W: float, H: float) -> "Box":
        """裁剪到画面 [0,W]×[0,H]"""
        x1 = min(max(self.x1, 0.0), W)
        y1 = min(max(self.y1, 0.0), H)
        x2 = min(max(self.x2, x1), W)
        y2 = min(max(self.y2, y1), H)
        return Box(x1, y1, x2, y2)

    def translate(self, dx: float, dy: float) -> "Box":
        return Box(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)

    def within(self, W: float, H: float) -> bool:
        return 0 <= self.x1 and 0 <= self.y1 and self.x2 <= W and self.y2 <= H


def round_half_away(value: float) -> int:
    """四舍五入（远离零），坐标非负时等价于 round-half-up"""
    return int(math.copysign(math.floor(abs(value) + 0.5), value))


def intersection_area(a: Box, b: Box) -> float:
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def iou(a: Box, b: Box) -> float:
    """
    交并比

    Returns:
        交集面积 / 并集面积；并集为 0 时返回 0
    """
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def coverage(target: Box, sources: Sequence[Box]) -> float:
    """
    目标框被源框并集覆盖的比例

    采用坐标压缩精确计算 target ∩ union(sources) 的面积，
    对任意实数坐标都是精确值（不依赖像素网格）。

    Args:
        target: 被覆盖的框，面积必须为正
        sources: 覆盖框列表

    Returns:
        覆盖面积 / target 面积，范围 [0, 1]

    Raises:
        DegenerateBoxError: target 面积为 0
    """
    if target.area <= 0:
        raise DegenerateBoxError(f"零面积目标框: {target.as_tuple()}")

    clipped = []
    for s in sources:
        x1, x2 = max(s.x1, target.x1), min(s.x2, target.x2)
        y1, y2 = max(s.y1, target.y1), min(s.y2, target.y2)
        if x2 > x1 and y2 > y1:
            clipped.append((x1, y1, x2, y2))
    if not clipped:
        return 0.0

    xs = sorted({target.x1, target.x2, *(c[0] for c in clipped), *(c[2] for c in clipped)})
    ys = sorted({target.y1, target.y2, *(c[1] for c in clipped), *(c[3] for c in clipped)})
    xs_arr = np.asarray(xs)
    ys_arr = np.asarray(ys)

    covered = np.zeros((len(ys) - 1, len(xs) - 1), dtype=bool)
    for x1, y1, x2, y2 in clipped:
        c0, c1 = np.searchsorted(xs_arr, x1), np.searchsorted(xs_arr, x2)
        r0, r1 = np.searchsorted(ys_arr, y1), np.searchsorted(ys_arr, y2)
        covered[r0:r1, c0:c1] = True

    cell_area = np.outer(np.diff(ys_arr), np.diff(xs_arr))
    area = float(cell_area[covered].sum())
    return min(1.0, area / target.area)


def expand_box(b: Box, factor: float, W: float, H: float) -> Box:
    """
    以中心为基准扩展框，宽高各增长 factor（每侧 factor/2），然后裁剪到画面

    Args:
        b: 原始框
        factor: 总增长比例，0.2 表示宽高各增长 20%
        W, H: 画面宽高
    """
    if factor < 0:
        raise ValueError(f"扩展比例不能为负: {factor}")
    dx = b.width * factor / 2.0
    dy = b.height * factor / 2.0
    return Box(b.x1 - dx, b.y1 - dy, b.x2 + dx, b.y2 + dy).clamp(W, H)


def resize_box_half(b: Box, W: float, H: float) -> Box:
    """
    画面缩小一半并居中粘贴后的框坐标

    x' = [W/4] + [x/2]，y' = [H/4] + [y/2]，[·] 为四舍五入取整。
    """
    ox = round_half_away(W / 4.0)
    oy = round_half_away(H / 4.0)
    return Box(
        ox + round_half_away(b.x1 / 2.0),
        oy + round_half_away(b.y1 / 2.0),
        ox + round_half_away(b.x2 / 2.0),
        oy + round_half_away(b.y2 / 2.0),
    )


def pixel_span(lo: float, hi: float, limit: int) -> Tuple[int, int]:
    """半开区间 [lo, hi) 覆盖的整数像素下标范围，裁剪到 [0, limit]"""
    start = min(max(math.ceil(lo), 0), limit)
    stop = min(max(math.ceil(hi), start), limit)
    return start, stop


def rasterize(boxes: Iterable[Box], W: int, H: int) -> Mask2D:
    """
    将框并集栅格化为 H×W 二值掩码

    cell (i, j) = 1 当且仅当它落在任意一个框内。
    """
    mask = np.zeros((H, W), dtype=np.uint8)
    for b in boxes:
        c0, c1 = pixel_span(b.x1, b.x2, W)
        r0, r1 = pixel_span(b.y1, b.y2, H)
        mask[r0:r1, c0:c1] = 1
    return mask


def replicate_mask(mask2d: Mask2D, T: int) -> Mask3D:
    """沿时间轴复制关键帧掩码，得到 T×H×W 掩码"""
    return np.repeat(mask2d[np.newaxis, :, :], T, axis=0)
