"""
混合样本预览 - 把混合片段的关键帧渲染为 PNG，并按来源给标注框着色

颜色:
    源域（主）    绿色
    源域（辅助）  青色
    目标域保留框  黄色
    目标域丢弃框  红色

只绘制矩形，不绘制文字，不需要 QApplication。

依赖:
    pip install PySide6
"""

from pathlib import Path
from typing import Dict, Union

import numpy as np

from ..clipstore import Origin
from ..mixer import MixedSample

ORIGIN_COLORS: Dict[str, tuple] = {
    Origin.SOURCE_PRIMARY.value: (0, 200, 0),
    Origin.SOURCE_AUXILIARY.value: (0, 200, 200),
    Origin.TARGET.value: (230, 200, 0),
    "discarded": (220, 30, 30),
}


def render_key_frame(mixed: MixedSample, scale: int = 4):
    """
    渲染关键帧

    Args:
        mixed: 混合样本
        scale: 放大倍数（最近邻）

    Returns:
        QImage (RGB32)
    """
    # 延迟导入，未安装 PySide6 时其他命令不受影响
    from PySide6.QtCore import QRectF, Qt
    from PySide6.QtGui import QColor, QImage, QPainter, QPen

    frame = mixed.clip.key_frame
    if frame.shape[2] == 1:
        frame = np.repeat(frame, 3, axis=2)
    frame = np.ascontiguousarray(frame, dtype=np.uint8)
    H, W = frame.shape[:2]

    image = QImage(frame.data, W, H, 3 * W, QImage.Format_RGB888).copy()
    image = image.convertToFormat(QImage.Format_RGB32)
    if scale > 1:
        image = image.scaled(W * scale, H * scale, Qt.IgnoreAspectRatio, Qt.FastTransformation)

    painter = QPainter(image)
    try:
        def draw(box, color_key: str) -> None:
            pen = QPen(QColor(*ORIGIN_COLORS[color_key]))
            pen.setWidth(max(1, scale // 2))
            painter.setPen(pen)
            painter.drawRect(QRectF(box.x1 * scale, box.y1 * scale, box.width * scale, box.height * scale))

        for ann in mixed.discarded:
            draw(ann.box, "discarded")
        for ann in mixed.annotations:
            draw(ann.box, ann.origin.value)
    finally:
        painter.end()
    return image


def save_preview_png(mixed: MixedSample, path: Union[str, Path], scale: int = 4) -> None:
    """渲染并保存 PNG"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    image = render_key_frame(mixed, scale)
    if not image.save(str(path), "PNG"):
        raise OSError(f"无法写入 PNG: {path}")
