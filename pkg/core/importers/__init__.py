# importers 包 - 标注文件导入器
