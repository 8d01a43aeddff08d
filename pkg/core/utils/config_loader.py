"""
配置加载器 - 负责读取命令注册表 (JSON) 与训练/生成配置 (key = value)
"""

import dataclasses
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Type, TypeVar, Union

from ..errors import ConfigError

T = TypeVar("T")

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


class ConfigLoader:
    """JSON 注册表与扁平 key = value 配置加载器"""

    @staticmethod
    def load_json(config_path: Union[str, Path]) -> Dict[str, Any]:
        """
        加载 JSON 配置文件

        Raises:
            ConfigError: 文件不存在或 JSON 格式错误
        """
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"配置文件不存在: {config_path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"JSON 格式错误 {config_path}: {e}")

    @staticmethod
    def load_command_registry(config_path: Union[str, Path]) -> List[Dict[str, Any]]:
        """
        加载命令注册表

        支持两种格式：直接数组或 {"commands": [...]} 对象，无效条目被跳过。
        """
        data = ConfigLoader.load_json(config_path)
        if isinstance(data, list):
            entries = data
        elif isinstance(data, dict) and "commands" in data:
            entries = data["commands"]
        else:
            raise ConfigError("命令注册表格式错误：应为数组或包含 'commands' 键的对象")
        return [e for e in entries if ConfigLoader.validate_command_entry(e)]

    @staticmethod
    def validate_command_entry(entry: Dict[str, Any]) -> bool:
        """必须包含 name 与 action.module_path / action.class_name"""
        if not isinstance(entry, dict) or "name" not in entry:
            return False
        action = entry.get("action", {})
        return bool(action.get("module_path")) and bool(action.get("class_name"))

    @staticmethod
    def parse_kv(text: str, source: str = "<config>") -> Dict[str, str]:
        """
        解析扁平 key = value 文本

        '#' 开头为注释，空行忽略；重复键和缺少 '=' 的行报错。
        """
        values: Dict[str, str] = {}
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}: 第 {line_no} 行缺少 '=': {raw.strip()}")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                raise ConfigError(f"{source}: 第 {line_no} 行键名为空")
            if key in values:
                raise ConfigError(f"{source}: 第 {line_no} 行重复的键 '{key}'")
            values[key] = value
        return values

    @staticmethod
    def load_kv(config_path: Union[str, Path]) -> Dict[str, str]:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"配置文件不存在: {config_path}")
        with open(path, "r", encoding="utf-8") as f:
            return ConfigLoader.parse_kv(f.read(), str(path))

    @staticmethod
    def build(config_type: Type[T], values: Dict[str, Any]) -> T:
        """
        按 dataclass 字段默认值的类型转换字符串并构造配置对象

        Args:
            config_type: TrainConfig / BenchmarkConfig 等 dataclass
            values: 键值对，值可以是字符串或已转换的对象

        Raises:
            ConfigError: 未知键或值无法转换
        """
        fields = {f.name: f for f in dataclasses.fields(config_type) if f.init}
        kwargs = {}
        for key, raw in values.items():
            if key not in fields:
                raise ConfigError(f"unknown key '{key}' for {config_type.__name__}")
            kwargs[key] = _coerce(key, raw, _default_of(fields[key]))
        try:
            return config_type(**kwargs)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{config_type.__name__} 配置非法: {e}")


def _default_of(field: dataclasses.Field) -> Any:
    if field.default is not dataclasses.MISSING:
        return field.default
    if field.default_factory is not dataclasses.MISSING:  # type: ignore[misc]
        return field.default_factory()  # type: ignore[misc]
    return None


def _coerce(key: str, raw: Any, default: Any) -> Any:
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(f"非法布尔值 '{raw}'")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [item.strip() for item in text.split(",") if item.strip()]
            sample = default[0] if default else 0
            cast = type(sample) if isinstance(sample, (int, float)) else str
            return tuple(cast(item) for item in items)
        return text
    except ValueError as e:
        raise ConfigError(f"配置项 '{key}' 的值 '{raw}' 无法转换: {e}")


def split_settings(values: Dict[str, Any]) -> Tuple[Dict[str, Any], Dict[str, Any]]:
    """
    将共享配置拆分为 (训练配置键, 生成配置键)

    同名键（如 seed）同时进入两边；两边都不认识的键报错。
    """
    from ..synthgen import BenchmarkConfig
    from ..trainer import TrainConfig

    train_keys = {f.name for f in dataclasses.fields(TrainConfig) if f.init}
    bench_keys = {f.name for f in dataclasses.fields(BenchmarkConfig) if f.init}
    train_values, bench_values = {}, {}
    for key, value in values.items():
        if key not in train_keys and key not in bench_keys:
            raise ConfigError(f"unknown key '{key}'")
        if key in train_keys:
            train_values[key] = value
        if key in bench_keys:
            bench_values[key] = value
    return train_values, bench_values


def load_settings(
    config_path: Optional[Union[str, Path]] = None,
    train_overrides: Optional[Dict[str, Any]] = None,
    bench_overrides: Optional[Dict[str, Any]] = None,
):
    """
    加载共享配置文件并应用命令行覆盖

    优先级：命令行 > 配置文件 > dataclass 默认值

    Returns:
        (TrainConfig, BenchmarkConfig)
    """
    from ..synthgen import BenchmarkConfig
    from ..trainer import TrainConfig

    values = ConfigLoader.load_kv(config_path) if config_path else {}
    train_values, bench_values = split_settings(values)
    train_values.update({k: v for k, v in (train_overrides or {}).items() if v is not None})
    bench_values.update({k: v for k, v in (bench_overrides or {}).items() if v is not None})
    return ConfigLoader.build(TrainConfig, train_values), ConfigLoader.build(BenchmarkConfig, bench_values)
