"""
Bounded parallel map for batch commands.

Results come back in input order. A failing item does not stop the others:
its exception is returned in place of the result so the caller can log it
and carry on.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Sequence, Tuple, TypeVar, Union

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

Outcome = Tuple[T, Union[R, BaseException]]


def _guard(fn: Callable[[T], R], item: T) -> Union[R, BaseException]:
    try:
        return fn(item)
    except Exception as e:  # reported per item by the caller
        return e


def map_items(fn: Callable[[T], R], items: Sequence[T], jobs: int = 1) -> List[Outcome]:
    if jobs <= 1 or len(items) <= 1:
        return [(item, _guard(fn, item)) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        results = list(pool.map(lambda item: _guard(fn, item), items))
    return list(zip(items, results))


def failures(outcomes: Sequence[Outcome]) -> List[Tuple[object, BaseException]]:
    return [(item, res) for item, res in outcomes if isinstance(res, BaseException)]
