# eval 子命令插件
