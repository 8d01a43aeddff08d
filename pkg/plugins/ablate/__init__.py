# ablate 子命令插件
