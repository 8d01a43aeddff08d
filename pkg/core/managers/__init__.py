# managers 包 - 数据集目录管理器
