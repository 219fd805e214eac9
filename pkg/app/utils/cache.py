import hashlib
import threading
from typing import Any, Callable, Dict, Hashable, Optional
import numpy as np
import logging

from app.utils.metrics import metrics

logger = logging.getLogger(__name__)


def generate_array_hash(arr: np.ndarray) -> str:
    """Stable key for an array (dtype, shape and bytes)"""
    arr = np.ascontiguousarray(arr)
    digest = hashlib.md5(arr.tobytes())
    digest.update(str((arr.dtype.str, arr.shape)).encode())
    return digest.hexdigest()


class SimpleCache:
    """Small in-memory cache with least-used eviction, safe to share between threads"""

    def __init__(self, max_size: int = 1000, name: str = "cache"):
        self.cache: Dict[Hashable, Any] = {}
        self.max_size = max_size
        self.name = name
        self.access_count: Dict[Hashable, int] = {}
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def get(self, key: Hashable) -> Optional[Any]:
        with self._lock:
            value = self.cache.get(key)
            if value is not None:
                self.access_count[key] += 1
                self.hits += 1
            else:
                self.misses += 1
        if value is None:
            metrics.record_cache_miss(self.name)
        else:
            metrics.record_cache_hit(self.name)
        return value

    def set(self, key: Hashable, value: Any) -> None:
        """Set value in cache, evicting the least used entry when full"""
        with self._lock:
            if key not in self.cache and len(self.cache) >= self.max_size:
                lru_key = min(self.access_count, key=self.access_count.get)
                del self.cache[lru_key]
                del self.access_count[lru_key]
                logger.debug(f"{self.name}: evicted {lru_key}")
            self.cache[key] = value
            self.access_count.setdefault(key, 0)

    def __contains__(self, key: Hashable) -> bool:
        return key in self.cache

    def clear(self) -> None:
        with self._lock:
            self.cache.clear()
            self.access_count.clear()

    def size(self) -> int:
        return len(self.cache)


class FlowCache(SimpleCache):
    """
    Deterministic flows Φ(z^{(j)}) of the ancestor pool, keyed by ancestor index

    Flows are computed lazily through `loader` the first time an index is
    touched by a chain, so a step pays one flow per distinct index rather
    than one per MCMC iteration. Unbounded by default: a pool of N ancestors
    never holds more than N entries.
    """

    def __init__(self, loader: Callable[[int], np.ndarray], max_size: Optional[int] = None):
        super().__init__(max_size=max_size or np.iinfo(np.int64).max, name="flow")
        self.loader = loader
        self.evaluations = 0

    def flow(self, index: int) -> np.ndarray:
        value = self.get(index)
        if value is None:
            value = self.loader(index)
            self.evaluations += 1
            metrics.record_flow_evaluation()
            self.set(index, value)
        return value

    def put(self, index: int, value: np.ndarray) -> None:
        """Store a flow computed elsewhere (e.g. while predicting drifter locations)"""
        if index not in self.cache:
            self.evaluations += 1
            metrics.record_flow_evaluation()
        self.set(index, value)
