# plugins 包 - 每个子目录是一个子命令插件 (command.py)
