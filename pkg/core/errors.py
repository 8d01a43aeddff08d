"""
异常定义 - MixForge 全部错误类型

分为三类：
- DataError: 数据/配置问题，CLI 退出码 2
- TrainingError: 运行期失败（如数值发散），CLI 退出码 3
- 信号类异常: 调用方预期会捕获并降级处理，不代表失败
"""

from typing import Optional


class MixForgeError(Exception):
    """所有 MixForge 异常的基类"""


class UsageError(MixForgeError):
    """命令行用法错误（退出码 1）"""


# ==================== 数据 / 配置错误 (退出码 2) ====================

class DataError(MixForgeError):
    """数据或配置不一致"""


class ConfigError(DataError):
    """配置文件或配置项非法"""


class BenchmarkConfigError(ConfigError):
    """合成基准配置无法满足（例如实例框放不下）"""


class AnnotationFormatError(DataError):
    """标注 CSV 格式错误，携带 1-based 行号"""

    def __init__(self, message: str, line_no: Optional[int] = None):
        if line_no is not None:
            message = f"{message} at line {line_no}"
        super().__init__(message)
        self.line_no = line_no


class ClipFormatError(DataError):
    """CLP1 片段文件格式错误"""


class BadMagicError(ClipFormatError):
    """文件头魔数不是 CLP1 / MDL1"""


class TruncatedClipError(ClipFormatError):
    """负载字节数少于文件头声明"""


class ClipDimsError(ClipFormatError):
    """维度非法或乘积溢出"""


class DegenerateBoxError(DataError):
    """零面积标注框"""


class ClassSpaceError(DataError):
    """数据集之间类别数不一致"""


class LabelAlignmentError(DataError):
    """伪标签列表与目标标注未一一对齐"""


class ShapeMismatchError(DataError):
    """参数 / 片段 / 掩码维度不匹配"""


class MissingKeyframeError(DataError):
    """检测帧之前没有任何关键帧"""


class DatasetLayoutError(DataError):
    """数据集目录结构缺失文件"""


# ==================== 运行期错误 (退出码 3) ====================

class TrainingError(MixForgeError):
    """训练过程失败"""


class NonFiniteError(TrainingError):
    """参数、梯度或损失出现 NaN/Inf"""


# ==================== 信号类异常 ====================

class EmptySelectionError(MixForgeError):
    """实例列表为空，无法抽样（上游应跳过混合）"""


class NoSourceInstancesError(MixForgeError):
    """源样本没有任何实例，调用方退化为纯目标片段 + 伪标签"""


class NoGroundTruthError(MixForgeError):
    """某类别没有真值，AP 无定义（该类不计入 mAP）"""

    def __init__(self, class_id: int):
        super().__init__(f"类别 {class_id} 没有真值标注")
        self.class_id = class_id
