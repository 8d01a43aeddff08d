# strategies 包 - 消融实验开关组合定义
