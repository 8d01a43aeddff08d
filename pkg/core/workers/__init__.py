# workers 包 - 后台线程池
