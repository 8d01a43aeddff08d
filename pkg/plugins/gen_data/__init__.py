# gen_data 子命令插件
