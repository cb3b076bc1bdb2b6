"""
Bounded parallel execution of independent items
"""

import asyncio
from typing import Awaitable, Callable, List, Sequence, TypeVar

import structlog

T = TypeVar("T")
R = TypeVar("R")

logger = structlog.get_logger(__name__)


async def _run_bounded(items: Sequence[T], fn: Callable[[int, T], R], threads: int) -> List[R]:
    semaphore = asyncio.Semaphore(max(1, threads))

    async def _one(index: int, item: T) -> R:
        async with semaphore:
            return await asyncio.to_thread(fn, index, item)

    tasks: List[Awaitable[R]] = [_one(i, item) for i, item in enumerate(items)]
    # gather は入力順で結果を返すので、書き込み側は順序を気にしなくてよい
    return await asyncio.gather(*tasks)


def run_items(items: Sequence[T], fn: Callable[[int, T], R], threads: int = 1) -> List[R]:
    """
    fn(index, item) を最大 threads 並列で実行し、入力順の結果リストを返す。

    threads == 1 の場合はイベントループを使わず逐次実行する。
    """
    if not items:
        return []
    if threads <= 1:
        return [fn(i, item) for i, item in enumerate(items)]
    logger.debug("parallel_run", items=len(items), threads=threads)
    return asyncio.run(_run_bounded(items, fn, threads))
