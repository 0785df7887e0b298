from __future__ import annotations

import asyncio
from typing import Callable, Iterable, TypeVar

from app.core.logging import get_logger

logger = get_logger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class ShardQueue:
    """In-process job queue with fixed concurrency for embarrassingly parallel work.

    Jobs are plain callables run on worker threads; results are collected by
    input index so the reduction order never depends on scheduling.
    """

    def __init__(self, *, concurrency: int = 2) -> None:
        self.concurrency = max(1, int(concurrency))
        self._queue: asyncio.Queue[tuple[int, Callable[[], object]]] | None = None
        self._workers: list[asyncio.Task[None]] = []
        self._results: dict[int, object] = {}
        self._errors: dict[int, BaseException] = {}

    async def _worker(self, idx: int) -> None:
        assert self._queue is not None
        while True:
            slot, job = await self._queue.get()
            try:
                self._results[slot] = await asyncio.to_thread(job)
            except Exception as e:
                logger.warning("worker %d job %d failed: %s", idx, slot, e, extra={"shard": slot})
                self._errors[slot] = e
            finally:
                self._queue.task_done()

    async def _run(self, jobs: list[Callable[[], object]]) -> None:
        self._queue = asyncio.Queue()
        self._results.clear()
        self._errors.clear()
        for slot, job in enumerate(jobs):
            self._queue.put_nowait((slot, job))
        for i in range(min(self.concurrency, max(1, len(jobs)))):
            self._workers.append(asyncio.create_task(self._worker(i)))
        await self._queue.join()
        for t in self._workers:
            t.cancel()
        self._workers.clear()

    def map_ordered(self, fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
        """Apply ``fn`` to every item concurrently; return results in input order.

        The first failing item (by input index) is re-raised after all jobs finish.
        """
        items = list(items)
        if self.concurrency == 1:
            return [fn(item) for item in items]
        jobs = [(lambda item=item: fn(item)) for item in items]
        asyncio.run(self._run(jobs))
        if self._errors:
            first = min(self._errors)
            raise self._errors[first]
        return [self._results[i] for i in range(len(items))]  # type: ignore[misc]
