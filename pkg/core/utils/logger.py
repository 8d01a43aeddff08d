"""
日志工具 - 控制台 + 文件双通道日志

控制台沿用 "[Info] ..." 风格的标签格式输出到 stderr；
指定 log_dir 时额外写入 <log_dir>/logs/operation.log，关键操作留痕。
"""

import logging
import sys
from pathlib import Path
from typing import Optional, Union

ROOT_LOGGER_NAME = "mixforge"

_LEVEL_TAGS = {
    logging.DEBUG: "Debug",
    logging.INFO: "Info",
    logging.WARNING: "Warning",
    logging.ERROR: "Error",
    logging.CRITICAL: "Critical",
}


class _TagFormatter(logging.Formatter):
    """将级别名转换为 [Info] / [Warning] 标签"""

    def format(self, record: logging.LogRecord) -> str:
        record.tag = _LEVEL_TAGS.get(record.levelno, record.levelname)
        return super().format(record)


def get_logger(name: str) -> logging.Logger:
    """获取 mixforge 命名空间下的子 logger"""
    if name.startswith(ROOT_LOGGER_NAME):
        return logging.getLogger(name)
    return logging.getLogger(f"{ROOT_LOGGER_NAME}.{name}")


def setup_logging(log_dir: Optional[Union[str, Path]] = None, verbose: bool = False) -> logging.Logger:
    """
    初始化日志系统（可重复调用，每次会替换已有 handler）

    Args:
        log_dir: 日志根目录，为 None 时只输出到控制台
        verbose: 是否输出 DEBUG 级别

    Returns:
        根 logger
    """
    root = logging.getLogger(ROOT_LOGGER_NAME)
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()

    level = logging.DEBUG if verbose else logging.INFO
    root.setLevel(level)
    root.propagate = False

    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(_TagFormatter("[%(tag)s] %(message)s"))
    root.addHandler(console)

    if log_dir is not None:
        log_path = Path(log_dir) / "logs" / "operation.log"
        log_path.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_path, encoding="utf-8")
        file_handler.setFormatter(
            _TagFormatter("%(asctime)s [%(tag)s] %(name)s: %(message)s")
        )
        root.addHandler(file_handler)

    return root
