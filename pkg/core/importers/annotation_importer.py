"""
标注 CSV 导入器 - 解析 / 写出 AVA 风格的关键帧标注

每行一个实例：
    sample_id,x1,y1,x2,y2,class_id,instance_id
坐标归一化到 [0,1]，加载片段时再按片段宽高换算为像素坐标；写出时保留 6 位小数。
首行为表头时自动跳过。

使用示例:
    from core.importers.annotation_importer import parse_annotation_csv

    with open("annotations.csv", encoding="utf-8") as f:
        records = parse_annotation_csv(f)
"""

import csv
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, TextIO, Tuple

from ..clipstore import Annotation, Origin
from ..errors import AnnotationFormatError
from ..geometry import Box

CSV_HEADER = ("sample_id", "x1", "y1", "x2", "y2", "class_id", "instance_id")
MIXED_CSV_HEADER = CSV_HEADER + ("origin", "confidence", "kept")

# 未标注的检测框（传播输入）使用的类别号
UNLABELED_CLASS = -1


def _to_pixels(value: float, size: int) -> float:
    """归一化坐标换算为像素；6 位小数的舍入误差范围内吸附到整数像素"""
    pixels = value * size
    nearest = round(pixels)
    if abs(pixels - nearest) <= 5e-7 * size + 1e-9:
        return float(nearest)
    return round(pixels, 6)


@dataclass(frozen=True)
class AnnotationRecord:
    """CSV 中的一行（归一化坐标）"""

    sample_id: str
    x1: float
    y1: float
    x2: float
    y2: float
    class_id: int
    instance_id: int

    def to_annotation(self, W: int, H: int, origin: Origin = Origin.SOURCE_PRIMARY) -> Annotation:
        """按片段尺寸换算为像素坐标标注"""
        box = Box(
            _to_pixels(self.x1, W),
            _to_pixels(self.y1, H),
            _to_pixels(self.x2, W),
            _to_pixels(self.y2, H),
        )
        return Annotation(box, self.class_id, self.instance_id, origin)

    @classmethod
    def from_annotation(cls, sample_id: str, ann: Annotation, W: int, H: int) -> "AnnotationRecord":
        b = ann.box
        return cls(sample_id, b.x1 / W, b.y1 / H, b.x2 / W, b.y2 / H, ann.class_id, ann.instance_id)

    def to_row(self) -> List[str]:
        return [
            self.sample_id,
            f"{self.x1:.6f}",
            f"{self.y1:.6f}",
            f"{self.x2:.6f}",
            f"{self.y2:.6f}",
            str(self.class_id),
            str(self.instance_id),
        ]


class AnnotationCsvImporter:
    """
    标注 CSV 解析器

    逐行校验：列数、数值格式、坐标范围 [0,1]、x1<=x2 / y1<=y2、类别号。
    任何错误都携带记录起始处的 1-based 物理行号；表头只能是第一条非空记录。
    """

    def __init__(self, allow_unlabeled: bool = False):
        """
        Args:
            allow_unlabeled: 是否允许 class_id = -1（检测器输出的未标注框）
        """
        self.allow_unlabeled = allow_unlabeled
        self.records: List[AnnotationRecord] = []

    def parse_all(self, stream: Iterable[str]) -> List[AnnotationRecord]:
        self.records = []
        reader = csv.reader(stream)
        seen_record = False
        last_line = 0
        for row in reader:
            # 记录可能跨多个物理行（引号内换行），报告起始行
            line_no, last_line = last_line + 1, reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if not seen_record:
                seen_record = True
                if row[0].strip() == CSV_HEADER[0]:
                    continue
            self.records.append(self._parse_row(row, line_no))
        return self.records

    def _parse_row(self, row: Sequence[str], line_no: int) -> AnnotationRecord:
        if len(row) != len(CSV_HEADER):
            raise AnnotationFormatError(
                f"malformed record: expected {len(CSV_HEADER)} fields, got {len(row)}", line_no
            )
        sample_id = row[0].strip()
        if not sample_id:
            raise AnnotationFormatError("malformed record: empty sample_id", line_no)

        try:
            x1, y1, x2, y2 = (float(v) for v in row[1:5])
            class_id = int(row[5])
            instance_id = int(row[6])
        except ValueError as e:
            raise AnnotationFormatError(f"malformed record: {e}", line_no)

        for name, value in (("x1", x1), ("y1", y1), ("x2", x2), ("y2", y2)):
            if not 0.0 <= value <= 1.0:
                raise AnnotationFormatError(
                    f"normalized coordinate {name}={value} outside [0,1]", line_no
                )
        if x1 > x2:
            raise AnnotationFormatError("x1>x2", line_no)
        if y1 > y2:
            raise AnnotationFormatError("y1>y2", line_no)

        min_class = UNLABELED_CLASS if self.allow_unlabeled else 0
        if class_id < min_class:
            raise AnnotationFormatError(f"invalid class_id {class_id}", line_no)

        return AnnotationRecord(sample_id, x1, y1, x2, y2, class_id, instance_id)

    def get_summary(self) -> str:
        samples = {r.sample_id for r in self.records}
        return f"{len(self.records)} 条标注, {len(samples)} 个样本"


def parse_annotation_csv(stream: Iterable[str], allow_unlabeled: bool = False) -> List[AnnotationRecord]:
    """便捷函数：解析标注 CSV 文本流"""
    return AnnotationCsvImporter(allow_unlabeled).parse_all(stream)


def write_annotation_csv(records: Iterable[AnnotationRecord], stream: TextIO) -> None:
    """写出标注 CSV（含表头，坐标 6 位小数）"""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for record in records:
        writer.writerow(record.to_row())


def write_mixed_csv(
    rows: Iterable[Tuple[AnnotationRecord, Origin, Optional[float], bool]],
    stream: TextIO,
) -> None:
    """
    写出混合样本标注（附带来源、教师置信度、是否计入损失）

    Args:
        rows: (记录, 来源, 置信度或 None, 是否保留) 序列
    """
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(MIXED_CSV_HEADER)
    for record, origin, confidence, kept in rows:
        conf = "" if confidence is None else f"{confidence:.6f}"
        writer.writerow(record.to_row() + [origin.value, conf, "1" if kept else "0"])
