from functools import wraps
import time
import logging

from app.utils.metrics import metrics

logger = logging.getLogger(__name__)


def timed(name: str = None):
    """
    Decorator recording the wall clock of each call into the metrics collector

    Usage:
        @timed("kalman_filter")
        def kalman_filter(...):
            ...
    """
    def decorator(func):
        label = name or func.__name__

        @wraps(func)
        def wrapper(*args, **kwargs):
            start = time.perf_counter()
            try:
                return func(*args, **kwargs)
            finally:
                elapsed = time.perf_counter() - start
                metrics.record_duration(label, elapsed)
                logger.debug(f"{label} took {elapsed * 1000:.2f}ms")
        return wrapper
    return decorator


class Stopwatch:
    """Context manager exposing elapsed seconds as `.seconds`"""

    def __enter__(self):
        self._start = time.perf_counter()
        self.seconds = 0.0
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self._start
        return False
