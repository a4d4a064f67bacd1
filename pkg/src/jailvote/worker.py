"""Thread pool for per-facility, per-block and per-resample work.

Results come back in INPUT order whatever the completion order, and every
reduction over them happens after collection, so outputs do not depend on
the thread count.
"""

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, Sequence, TypeVar

from rich.console import Console
from rich.progress import (
    BarColumn,
    MofNCompleteColumn,
    Progress,
    SpinnerColumn,
    TextColumn,
    TimeElapsedColumn,
)

logger = logging.getLogger(__name__)

console = Console(stderr=True)

T = TypeVar("T")
R = TypeVar("R")


def run_pool(
    items: Sequence[T],
    fn: Callable[[T], R],
    threads: int = 1,
    description: str | None = None,
) -> list[R]:
    """Map `fn` over `items` on up to `threads` worker threads.

    threads <= 1 runs inline. When `description` is given a rich progress
    bar is shown. The first exception raised by `fn` propagates after the
    pool shuts down.
    """
    results: list[R | None] = [None] * len(items)
    if not items:
        return []

    progress = None
    if description is not None:
        progress = Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            MofNCompleteColumn(),
            TimeElapsedColumn(),
            console=console,
            transient=True,
        )

    def _advance(task) -> None:
        if progress is not None:
            progress.advance(task)

    if progress is not None:
        progress.start()
    try:
        task = progress.add_task(description, total=len(items)) if progress else None
        if threads <= 1 or len(items) == 1:
            for i, item in enumerate(items):
                results[i] = fn(item)
                _advance(task)
        else:
            with ThreadPoolExecutor(max_workers=threads) as executor:
                futures = {executor.submit(fn, item): i for i, item in enumerate(items)}
                for future in as_completed(futures):
                    results[futures[future]] = future.result()
                    _advance(task)
    finally:
        if progress is not None:
            progress.stop()

    logger.debug("run_pool %s: %d items on %d threads", description or "", len(items), threads)
    return results  # type: ignore[return-value]
