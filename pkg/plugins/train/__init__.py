# train 子命令插件
