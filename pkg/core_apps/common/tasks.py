from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, TypeVar

from loguru import logger

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(func: Callable[[T], R], items: Iterable[T], workers: int = 1) -> List[R]:
    """Map func over items, returning results in input order.

    workers <= 1 runs in-process; that path is the bit-reproducible one.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]

    try:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(func, items))
    except Exception as e:
        logger.error(f"Worker pool failed on {len(items)} items: {str(e)}")
        raise
