# core.ui 模块 - 混合样本预览渲染
