# propagate 子命令插件
