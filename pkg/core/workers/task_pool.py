"""
线程池 - 基于 QThreadPool 的有序并行 map

特性：
- workers <= 1 时直接在当前线程顺序执行，不需要 Qt
- 每个任务写入自己的结果槽位，合并按输入顺序进行，并行度不改变结果
- 任一任务抛出异常时，等待全部任务结束后重新抛出第一个（按输入顺序）异常

依赖:
    pip install PySide6
"""

from typing import Any, Callable, Iterable, List, Optional, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def _make_task_class():
    # 延迟导入，单线程运行时不需要 Qt
    from PySide6.QtCore import QRunnable

    class _SlotTask(QRunnable):
        """执行 fn(item) 并写入 results[slot]"""

        def __init__(self, fn: Callable[[Any], Any], item: Any, slot: int, results: List, errors: List):
            super().__init__()
            self.fn = fn
            self.item = item
            self.slot = slot
            self.results = results
            self.errors = errors
            # Python 侧持有任务引用，不交给 Qt 删除
            self.setAutoDelete(False)

        def run(self) -> None:
            try:
                self.results[self.slot] = self.fn(self.item)
            except BaseException as e:  # noqa: B902 - 跨线程传递给调用方
                self.errors[self.slot] = e

    return _SlotTask


class TaskPool:
    """
    有序并行执行器

    使用示例:
        pool = TaskPool(workers=4)
        features = pool.map(extract, samples)
    """

    def __init__(self, workers: int = 1):
        """
        Args:
            workers: 最大线程数，<= 1 表示顺序执行
        """
        self.workers = max(1, int(workers))
        self._pool = None
        self._task_class = None

    def _ensure_pool(self):
        if self._pool is None:
            from PySide6.QtCore import QThreadPool

            self._pool = QThreadPool()
            self._pool.setMaxThreadCount(self.workers)
            self._task_class = _make_task_class()
        return self._pool

    def map(self, fn: Callable[[T], R], items: Iterable[T]) -> List[R]:
        """
        对每个元素执行 fn，按输入顺序返回结果列表
        """
        items = list(items)
        if self.workers <= 1 or len(items) <= 1:
            return [fn(item) for item in items]

        pool = self._ensure_pool()
        results: List[Optional[R]] = [None] * len(items)
        errors: List[Optional[BaseException]] = [None] * len(items)
        tasks = [self._task_class(fn, item, slot, results, errors) for slot, item in enumerate(items)]
        for task in tasks:
            pool.start(task)
        pool.waitForDone()

        for error in errors:
            if error is not None:
                raise error
        return results  # type: ignore[return-value]
