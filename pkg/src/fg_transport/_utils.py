"""
Utilities
"""

__author__ = 'fg-transport developers'
__license__ = 'LGPL-3.0-or-later'
# SPDX-License-Identifier: LGPL-3.0-or-later

import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from functools import _lru_cache_wrapper, lru_cache, wraps
from typing import Iterator, List, Optional
from weakref import ReferenceType, ref


class CacheManager(List[_lru_cache_wrapper]):
    """
    Cached functions created by lru_cache_method(), cleared together.
    """
    def clear_all(self) -> None:
        """Invoke `cache_clear` on all functions in the list"""
        for wrapper in self:
            wrapper.cache_clear()


def lru_cache_method(cache_manager: Optional[CacheManager] = None, maxsize: int = 128, typed: bool = False):
    """
    LRU cache for methods, keyed on a weak reference to self.

    For results that depend only on the object state, like the variable
    ordering of a factor graph, invalidated by methods decorated with
    lru_cache_clear(). The weak key lets cached graphs be collected.
    """

    def wrapper(method):

        @lru_cache(maxsize, typed)
        def cached_method(self_ref: ReferenceType, *args, **kwargs):
            self = self_ref()
            assert self is not None
            return method(self, *args, **kwargs)

        @wraps(method)
        def inner(self, *args, **kwargs):
            return cached_method(ref(self), *args, **kwargs)  # type: ignore

        if cache_manager is not None:
            cache_manager.append(cached_method)

        return inner

    return wrapper


def lru_cache_clear(cache_manager: CacheManager):
    """
    Decorator for methods that invalidate the caches of @p cache_manager.
    """

    def wrapper(method):

        @wraps(method)
        def inner(self, *args, **kwargs):
            cache_manager.clear_all()
            return method(self, *args, **kwargs)

        return inner

    return wrapper


@dataclass
class Stopwatch:
    """
    Elapsed wall time, filled by stopwatch() on exit.
    """
    elapsed: float = field(default=0.0)


@contextmanager
def stopwatch() -> Iterator[Stopwatch]:
    """
    Measure the wall time spent inside a with block.
    """
    watch = Stopwatch()
    start = time.perf_counter()
    try:
        yield watch
    finally:
        watch.elapsed = time.perf_counter() - start


def clamp(value: float, limit: float) -> float:
    """Clamp value to [-limit, limit]"""
    return max(-limit, min(limit, value))


def sign(value: float) -> int:
    """Sign with sign(0) = +1"""
    return -1 if value < 0.0 else 1


def is_finite(*values: float) -> bool:
    """True if all values are finite"""
    return all(math.isfinite(v) for v in values)
