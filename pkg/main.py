"""
MixForge - 实例级跨域混合采样 + 均值教师自训练
==============================================

项目目录结构：
MixForge/
├── main.py                    # 程序入口
├── config/
│   ├── commands.json         # 子命令注册表
│   └── default.conf          # 共享 key = value 配置
├── core/                      # 几何、片段存储、混合、模型、训练、评估、传播
├── plugins/                   # 每个子目录一个子命令 (command.py)
└── requirements.txt          # 依赖文件

启动方式：
    python main.py gen-data --out data
    python main.py train --source data/source --target data/target_train --out runs/adapted

依赖安装：
    pip install -r requirements.txt
"""

import sys
from pathlib import Path

# 确保能导入 core 与 plugins 模块
sys.path.insert(0, str(Path(__file__).parent))

from core.cli import run


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
