# stats 子命令插件
