# core 模块 - MixForge 核心算法与存储
