"""
插件加载器 - 按命令注册表动态加载子命令插件

每个子命令是 plugins/<命令>/command.py 中的一个 CommandPlugin 子类，
由 config/commands.json 的 action.module_path / action.class_name 指定。
"""

import argparse
import importlib
import importlib.util
import sys
from pathlib import Path
from typing import Any, Dict, Optional

from .errors import ConfigError

PROJECT_ROOT = Path(__file__).parent.parent
PLUGINS_DIR = PROJECT_ROOT / "plugins"


class CommandPlugin:
    """
    子命令插件基类

    子类实现:
        add_arguments(parser)  声明本命令的参数
        execute(args) -> int   执行并返回退出码
    """

    name: str = ""
    description: str = ""
    # --out 为目录时在其下写 logs/operation.log
    log_to_out: bool = False

    def __init__(self, name: str = "", description: str = "", **params: Any):
        self.name = name or self.name
        self.description = description or self.description
        self.params = params

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        pass

    def execute(self, args: argparse.Namespace) -> int:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"<{type(self).__name__} '{self.name}'>"


def load_plugin(
    module_path: str,
    class_name: str,
    plugin_params: Optional[Dict[str, Any]] = None,
) -> CommandPlugin:
    """
    动态加载插件模块并实例化 CommandPlugin

    加载策略：
    1. 作为模块路径直接导入（已在 plugins 目录下时）
    2. 添加 plugins. 前缀后导入
    3. 从 plugins 目录下的文件路径导入

    Args:
        module_path: 模块路径，例如 "train.command" 或 "plugins.train.command"
        class_name: 类名，例如 "TrainCommand"
        plugin_params: 传递给构造函数的参数

    Raises:
        ConfigError: 模块不存在、类不存在或不是 CommandPlugin 子类
    """
    module_full_path = _resolve_module_path(module_path)
    try:
        module = _import_module_dynamically(module_full_path)
    except ImportError as e:
        raise ConfigError(f"加载插件失败 '{module_path}.{class_name}': {e}")

    plugin_class = getattr(module, class_name, None)
    if plugin_class is None:
        raise ConfigError(f"模块 '{module_path}' 中不存在类 '{class_name}'")
    if not isinstance(plugin_class, type) or not issubclass(plugin_class, CommandPlugin):
        raise ConfigError(f"'{class_name}' 必须是 CommandPlugin 的子类，实际类型: {type(plugin_class)}")
    return plugin_class(**(plugin_params or {}))


def _resolve_module_path(module_path: str) -> str:
    """.py 文件路径转模块路径，去掉 plugins/ 前缀"""
    if module_path.endswith(".py"):
        module_path = str(Path(module_path).with_suffix("")).replace("/", ".").replace("\\", ".")
    if module_path.startswith("plugins/"):
        module_path = module_path[len("plugins/"):]
    return module_path


def _import_module_dynamically(module_path: str) -> Any:
    if str(PROJECT_ROOT) not in sys.path:
        sys.path.insert(0, str(PROJECT_ROOT))

    candidates = [module_path]
    if not module_path.startswith("plugins."):
        candidates.append(f"plugins.{module_path}")
    for candidate in candidates:
        try:
            return importlib.import_module(candidate)
        except ModuleNotFoundError as e:
            # 只吞掉"模块本身不存在"，插件内部的导入错误照常抛出
            if e.name is None or not candidate.startswith(e.name):
                raise

    relative = module_path[len("plugins."):] if module_path.startswith("plugins.") else module_path
    file_path = PLUGINS_DIR / f"{relative.replace('.', '/')}.py"
    if file_path.exists():
        return _import_from_file(file_path, module_path)
    raise ModuleNotFoundError(f"无法找到模块: {module_path}")


def _import_from_file(file_path: Path, module_name: str) -> Any:
    spec = importlib.util.spec_from_file_location(module_name, file_path)
    if spec is None or spec.loader is None:
        raise ImportError(f"无法从文件加载模块: {file_path}")
    module = importlib.util.module_from_spec(spec)
    sys.modules[spec.name] = module
    spec.loader.exec_module(module)
    return module
