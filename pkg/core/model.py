"""
桌面级动作分类器 - 实例特征提取 + 单隐层网络 + 均值教师 EMA

网络结构:
    h = relu(W1·f + b1)
    z = W2·h + b2
    p = softmax(z)

梯度由反向传播解析推导，不依赖自动微分。

MDL1 模型文件（小端）：
    b"MDL1" | u32 D | u32 hidden_dim | u32 K | u32 G | u32 C | W1, b1, W2, b2 (float32)
"""

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, List, Sequence, Tuple, Union

import numpy as np

from .clipstore import Clip
from .errors import BadMagicError, DegenerateBoxError, NonFiniteError, ShapeMismatchError, TruncatedClipError
from .geometry import Box, pixel_span

MODEL_MAGIC = b"MDL1"
_MODEL_HEADER = struct.Struct("<4s5I")

PARAM_NAMES = ("W1", "b1", "W2", "b2")


@dataclass
class ModelParams:
    """
    网络参数

    W1: hidden_dim×D, b1: hidden_dim, W2: K×hidden_dim, b2: K
    """

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def num_classes(self) -> int:
        return self.W2.shape[0]

    def arrays(self) -> Tuple[np.ndarray, ...]:
        return (self.W1, self.b1, self.W2, self.b2)

    def shapes(self) -> Tuple[Tuple[int, ...], ...]:
        return tuple(a.shape for a in self.arrays())

    def copy(self) -> "ModelParams":
        return ModelParams(*(a.copy() for a in self.arrays()))

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "ModelParams":
        return ModelParams(*(fn(a) for a in self.arrays()))

    def combine(self, other: "ModelParams", fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "ModelParams":
        """逐参数二元运算，形状必须一致"""
        if self.shapes() != other.shapes():
            raise ShapeMismatchError(f"参数形状不一致: {self.shapes()} vs {other.shapes()}")
        return ModelParams(*(fn(a, b) for a, b in zip(self.arrays(), other.arrays())))

    def zeros_like(self) -> "ModelParams":
        return self.map(np.zeros_like)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def equals(self, other: "ModelParams") -> bool:
        return self.shapes() == other.shapes() and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )


@dataclass(frozen=True)
class ModelSpec:
    """模型文件头中记录的维度"""

    input_dim: int
    hidden_dim: int
    num_classes: int
    pool_grid: int
    channels: int


def feature_dim(pool_grid: int, channels: int) -> int:
    return pool_grid * pool_grid * channels


def init_params(input_dim: int, hidden_dim: int, num_classes: int, rng: np.random.Generator) -> ModelParams:
    """Glorot 均匀初始化权重 s = sqrt(6/(fan_in+fan_out))，偏置为 0"""
    s1 = np.sqrt(6.0 / (input_dim + hidden_dim))
    s2 = np.sqrt(6.0 / (hidden_dim + num_classes))
    return ModelParams(
        W1=rng.uniform(-s1, s1, size=(hidden_dim, input_dim)),
        b1=np.zeros(hidden_dim),
        W2=rng.uniform(-s2, s2, size=(num_classes, hidden_dim)),
        b2=np.zeros(num_classes),
    )


# ==================== 特征提取 ====================

@lru_cache(maxsize=512)
def _pool_matrix(length: int, grid: int) -> np.ndarray:
    """
    面积加权平均池化矩阵 (grid×length)：把 length 个像素均分为 grid 段，
    每行是落入该段的像素覆盖比例，行和为 1
    """
    edges = np.arange(grid + 1) * (length / grid)
    lo = np.maximum(np.arange(length)[np.newaxis, :], edges[:-1, np.newaxis])
    hi = np.minimum(np.arange(length)[np.newaxis, :] + 1, edges[1:, np.newaxis])
    matrix = np.clip(hi - lo, 0.0, None) / (length / grid)
    matrix.setflags(write=False)
    return matrix


def extract_features(clip: Clip, box: Box, pool_grid: int = 8) -> np.ndarray:
    """
    实例特征：裁剪框区域 → 每帧按通道平均池化到 G×G → 时间平均 → 归一化到 [-0.5, 0.5]

    Args:
        clip: 视频片段
        box: 实例框（像素坐标）
        pool_grid: 池化网格 G

    Returns:
        长度 G·G·C 的特征向量（通道在后展开）

    Raises:
        DegenerateBoxError: 框在画面内覆盖的像素为 0
    """
    c0, c1 = pixel_span(box.x1, box.x2, clip.W)
    r0, r1 = pixel_span(box.y1, box.y2, clip.H)
    if c1 <= c0 or r1 <= r0:
        raise DegenerateBoxError(f"零面积特征框: {box.as_tuple()}")

    # 时间平均与空间池化都是线性运算，可以先做时间平均
    crop = clip.data[:, r0:r1, c0:c1, :].mean(axis=0, dtype=np.float64)
    pooled = np.einsum(
        "gi,ijc,kj->gkc", _pool_matrix(r1 - r0, pool_grid), crop, _pool_matrix(c1 - c0, pool_grid)
    )
    return pooled.reshape(-1) / 255.0 - 0.5


# ==================== 前向 / 损失 / 梯度 ====================

def _check_finite(p: ModelParams) -> None:
    if not p.is_finite():
        raise NonFiniteError("模型参数包含 NaN/Inf")


def _forward_pass(p: ModelParams, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if X.shape[-1] != p.input_dim:
        raise ShapeMismatchError(f"特征维度 {X.shape[-1]} 与模型输入维度 {p.input_dim} 不一致")
    z1 = X @ p.W1.T + p.b1
    h = np.maximum(z1, 0.0)
    logits = h @ p.W2.T + p.b2
    return z1, h, logits


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def forward(p: ModelParams, f: np.ndarray) -> np.ndarray:
    """
    类别概率

    Args:
        p: 模型参数
        f: 单个特征 (D,) 或一批特征 (N, D)

    Returns:
        (K,) 或 (N, K) 概率，按最大值平移后做 softmax
    """
    _check_finite(p)
    _, _, logits = _forward_pass(p, np.asarray(f, dtype=np.float64))
    return np.exp(_log_softmax(logits))


def loss_and_grad_arrays(
    p: ModelParams, X: np.ndarray, labels: np.ndarray, weights: np.ndarray
) -> Tuple[float, ModelParams]:
    """
    加权平均交叉熵及其解析梯度

    loss = Σ w_i · (-log p_i[y_i]) / Σ w_i
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(weights < 0):
        raise ValueError("样本权重不能为负")
    total = weights.sum()
    if total <= 0:
        raise ValueError("样本权重之和为 0")
    if np.any(labels < 0) or np.any(labels >= p.num_classes):
        raise ValueError(f"标签超出 [0, {p.num_classes})")
    _check_finite(p)

    z1, h, logits = _forward_pass(p, X)
    log_probs = _log_softmax(logits)
    rows = np.arange(len(labels))
    scale = weights / total
    loss = float(-(scale * log_probs[rows, labels]).sum())

    dlogits = np.exp(log_probs)
    dlogits[rows, labels] -= 1.0
    dlogits *= scale[:, np.newaxis]

    dW2 = dlogits.T @ h
    db2 = dlogits.sum(axis=0)
    dz1 = (dlogits @ p.W2) * (z1 > 0)
    dW1 = dz1.T @ X
    db1 = dz1.sum(axis=0)
    return loss, ModelParams(dW1, db1, dW2, db2)


def loss_and_grad(
    p: ModelParams, batch: Sequence[Tuple[np.ndarray, int, float]]
) -> Tuple[float, ModelParams]:
    """
    Args:
        batch: (特征, 标签, 权重) 列表

    Returns:
        (标量损失, 与参数同形的梯度)
    """
    if not batch:
        raise ValueError("空批次")
    X = np.stack([np.asarray(f, dtype=np.float64) for f, _, _ in batch])
    labels = np.array([y for _, y, _ in batch], dtype=np.int64)
    weights = np.array([w for _, _, w in batch], dtype=np.float64)
    return loss_and_grad_arrays(p, X, labels, weights)


def ema_update(teacher: ModelParams, student: ModelParams, alpha: float) -> ModelParams:
    """
    均值教师更新 θ'_t = α·θ'_{t-1} + (1-α)·θ_t

    Raises:
        ShapeMismatchError: 教师与学生形状不一致
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha 必须在 [0,1]: {alpha}")
    if alpha == 0.0:
        return teacher.combine(student, lambda t, s: s.copy())
    if alpha == 1.0:
        return teacher.combine(student, lambda t, s: t.copy())
    return teacher.combine(student, lambda t, s: alpha * t + (1.0 - alpha) * s)


# ==================== MDL1 读写 ====================

def save_model(path: Union[str, Path], params: ModelParams, pool_grid: int, channels: int) -> None:
    """写出 MDL1 模型文件（参数以 float32 存储）"""
    if params.input_dim != feature_dim(pool_grid, channels):
        raise ShapeMismatchError(
            f"输入维度 {params.input_dim} 与 G={pool_grid}, C={channels} 不一致"
        )
    header = _MODEL_HEADER.pack(
        MODEL_MAGIC, params.input_dim, params.hidden_dim, params.num_classes, pool_grid, channels
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header)
        for array in params.arrays():
            f.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def load_model(path: Union[str, Path]) -> Tuple[ModelParams, ModelSpec]:
    """
    读取 MDL1 模型文件

    Raises:
        BadMagicError: 魔数错误
        TruncatedClipError: 文件不完整
    """
    with open(path, "rb") as f:
        payload = f.read()
    if payload[:4] != MODEL_MAGIC:
        raise BadMagicError(f"模型魔数错误: {payload[:4]!r}，期望 {MODEL_MAGIC!r}")
    if len(payload) < _MODEL_HEADER.size:
        raise TruncatedClipError("模型文件头不完整")

    _, D, hidden, K, G, C = _MODEL_HEADER.unpack_from(payload)
    if D != feature_dim(G, C):
        raise ShapeMismatchError(f"模型文件维度不一致: D={D}, G={G}, C={C}")
    shapes = [(hidden, D), (hidden,), (K, hidden), (K,)]
    sizes = [int(np.prod(s)) for s in shapes]
    body = payload[_MODEL_HEADER.size:]
    if len(body) < 4 * sum(sizes):
        raise TruncatedClipError(f"模型参数被截断: 期望 {4 * sum(sizes)} 字节，实际 {len(body)}")

    flat = np.frombuffer(body, dtype="<f4", count=sum(sizes)).astype(np.float64)
    arrays: List[np.ndarray] = []
    offset = 0
    for shape, size in zip(shapes, sizes):
        arrays.append(flat[offset:offset + size].reshape(shape).copy())
        offset += size
    return ModelParams(*arrays), ModelSpec(D, hidden, K, G, C)


def stack_features(features: Iterable[np.ndarray], dim: int) -> np.ndarray:
    """把特征列表堆叠为 (N, D)，空列表返回 (0, D)"""
    features = list(features)
    if not features:
        return np.zeros((0, dim))
    return np.stack(features)
