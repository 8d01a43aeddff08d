# mix_preview 子命令插件
