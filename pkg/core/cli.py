"""
命令行入口 - 按 config/commands.json 注册表构建子命令并分发

退出码:
    0  成功
    1  用法错误（未知子命令 / 参数）
    2  数据或配置错误
    3  运行时错误（训练发散等）
"""

import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from .errors import DataError, MixForgeError, TrainingError, UsageError
from .plugin_loader import PROJECT_ROOT, CommandPlugin, load_plugin
from .utils.config_loader import ConfigLoader, load_settings
from .utils.logger import get_logger, setup_logging

logger = get_logger(__name__)

COMMANDS_FILE = PROJECT_ROOT / "config" / "commands.json"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


class CliArgumentParser(argparse.ArgumentParser):
    """参数错误抛出 UsageError 而不是直接退出"""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage().strip()}")


def add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="随机种子（覆盖配置文件）")
    parser.add_argument("--config", default=None, help="共享 key = value 配置文件")
    parser.add_argument("--workers", type=int, default=None, help="并行线程数")
    parser.add_argument("-v", "--verbose", action="store_true", help="输出调试日志")


def build_parser(registry_path: Optional[Union[str, Path]] = None) -> Tuple[CliArgumentParser, Dict[str, CommandPlugin]]:
    """
    读取命令注册表并构建解析器

    Returns:
        (解析器, 子命令名 → 插件实例)

    Raises:
        ConfigError: 注册表或插件无法加载
    """
    entries = ConfigLoader.load_command_registry(registry_path or COMMANDS_FILE)
    parser = CliArgumentParser(prog="mixforge", description="实例级跨域混合采样 + 均值教师自训练")
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=CliArgumentParser)

    plugins: Dict[str, CommandPlugin] = {}
    for entry in entries:
        action = entry["action"]
        plugin = load_plugin(
            action["module_path"],
            action["class_name"],
            {"name": entry["name"], "description": entry.get("description", ""), **entry.get("params", {})},
        )
        sub = subparsers.add_parser(entry["name"], help=plugin.description, description=plugin.description)
        add_common_arguments(sub)
        plugin.add_arguments(sub)
        plugins[entry["name"]] = plugin
    return parser, plugins


def settings_from_args(
    args: argparse.Namespace,
    train_overrides: Optional[Dict[str, Any]] = None,
    bench_overrides: Optional[Dict[str, Any]] = None,
):
    """
    配置文件 + 命令行覆盖 → (TrainConfig, BenchmarkConfig)

    --seed 同时作用于两者，--workers 只作用于训练配置。
    """
    shared = {"seed": args.seed}
    return load_settings(
        args.config,
        {**shared, "workers": args.workers, **(train_overrides or {})},
        {**shared, **(bench_overrides or {})},
    )


def _log_dir_for(plugin: CommandPlugin, args: argparse.Namespace) -> Optional[str]:
    out = getattr(args, "out", None)
    return out if out and plugin.log_to_out else None


def run(argv: Optional[Sequence[str]] = None, registry_path: Optional[Union[str, Path]] = None) -> int:
    """
    解析参数并执行子命令

    Returns:
        进程退出码
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    setup_logging()
    try:
        parser, plugins = build_parser(registry_path)
    except DataError as e:
        logger.error("%s", e)
        return EXIT_DATA

    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help / --version
        return int(e.code or 0)

    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    plugin = plugins[args.command]
    setup_logging(_log_dir_for(plugin, args), args.verbose)
    try:
        return int(plugin.execute(args) or EXIT_OK)
    except UsageError as e:
        logger.error("%s", e)
        return EXIT_USAGE
    except DataError as e:
        logger.error("%s", e)
        return EXIT_DATA
    except FileNotFoundError as e:
        logger.error("文件不存在: %s", e.filename or e)
        return EXIT_DATA
    except TrainingError as e:
        logger.error("训练失败: %s", e)
        return EXIT_RUNTIME
    except MixForgeError as e:
        logger.error("%s", e)
        return EXIT_RUNTIME
    except Exception as e:  # noqa: BLE001
        logger.exception("未预期的错误: %s", e)
        return EXIT_RUNTIME


def main(argv: Optional[List[str]] = None) -> None:
    sys.exit(run(argv))
