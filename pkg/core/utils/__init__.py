# core.utils 模块
