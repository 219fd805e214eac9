"""
Metrics tracking for filter runs and the HTTP surface
"""
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Tuple
from datetime import datetime, timezone

UTC = timezone.utc
import os
import threading
import logging

logger = logging.getLogger(__name__)

COUNTERS = ("filter_steps", "proposals", "acceptances", "index_moves", "flow_evaluations", "zero_acceptance_steps")


@dataclass(frozen=True)
class WorkerCounts:
    """Counter increments of one task, tagged with the process that ran it"""
    pid: int
    counts: Dict[str, int]


class MetricsCollector:
    """Process-wide in-memory counters"""

    def __init__(self):
        self._lock = threading.Lock()
        self.reset()

    def reset(self):
        self.filter_steps: int = 0
        self.proposals: int = 0
        self.acceptances: int = 0
        self.index_moves: int = 0
        self.flow_evaluations: int = 0
        self.zero_acceptance_steps: int = 0
        self.cache_stats: Dict[str, Dict[str, int]] = {}
        self.method_seconds: Dict[str, List[float]] = {}
        self.errors: Dict[str, int] = {"total": 0}
        self.requests_total: int = 0
        self.start_time: datetime = datetime.now(UTC)

    def record_filter_step(self, proposals: int, accepted: int, index_moves: int):
        with self._lock:
            self.filter_steps += 1
            self.proposals += proposals
            self.acceptances += accepted
            self.index_moves += index_moves
            if accepted == 0:
                self.zero_acceptance_steps += 1

    def record_flow_evaluation(self):
        with self._lock:
            self.flow_evaluations += 1

    def record_cache_hit(self, name: str = "default"):
        with self._lock:
            self.cache_stats.setdefault(name, {"hits": 0, "misses": 0})["hits"] += 1

    def record_cache_miss(self, name: str = "default"):
        with self._lock:
            self.cache_stats.setdefault(name, {"hits": 0, "misses": 0})["misses"] += 1

    def record_duration(self, method: str, seconds: float):
        """Record wall clock of one call of `method`"""
        with self._lock:
            samples = self.method_seconds.setdefault(method, [])
            samples.append(seconds)
            # Keep only last 1000 entries
            if len(samples) > 1000:
                del samples[:-1000]

    def record_error(self, error_type: str = "other"):
        with self._lock:
            self.errors["total"] += 1
            self.errors[error_type] = self.errors.get(error_type, 0) + 1

    def record_request(self):
        with self._lock:
            self.requests_total += 1

    def counts(self) -> Dict[str, int]:
        """Flat snapshot of the filter and error counters"""
        with self._lock:
            out = {name: getattr(self, name) for name in COUNTERS}
            out.update({f"errors.{k}": v for k, v in self.errors.items()})
        return out

    def merge(self, counts: Dict[str, int]):
        with self._lock:
            for key, value in counts.items():
                if key.startswith("errors."):
                    name = key.split(".", 1)[1]
                    self.errors[name] = self.errors.get(name, 0) + value
                else:
                    setattr(self, key, getattr(self, key) + value)

    def absorb(self, worker: WorkerCounts):
        """Fold in counts recorded by a worker process; counts from this process are already here"""
        if worker.pid != os.getpid():
            self.merge(worker.counts)

    def get_summary(self) -> Dict:
        uptime = (datetime.now(UTC) - self.start_time).total_seconds()
        acceptance_rate = self.acceptances / self.proposals if self.proposals else 0.0
        caches = {}
        for name, stats in self.cache_stats.items():
            total = stats["hits"] + stats["misses"]
            caches[name] = {**stats, "hit_rate": stats["hits"] / total if total else 0.0}
        timings = {
            method: {
                "calls": len(samples),
                "average_ms": 1000 * sum(samples) / len(samples),
                "total_s": sum(samples),
            }
            for method, samples in self.method_seconds.items() if samples
        }
        return {
            "uptime_seconds": uptime,
            "requests_total": self.requests_total,
            "filter": {
                "steps": self.filter_steps,
                "proposals": self.proposals,
                "acceptances": self.acceptances,
                "acceptance_rate": acceptance_rate,
                "index_moves": self.index_moves,
                "flow_evaluations": self.flow_evaluations,
                "zero_acceptance_steps": self.zero_acceptance_steps,
            },
            "cache": caches,
            "timing": timings,
            "errors": dict(self.errors),
        }

    def log_summary(self):
        summary = self.get_summary()
        logger.info("=== Metrics Summary ===")
        logger.info(f"Uptime: {summary['uptime_seconds']:.0f}s")
        logger.info(f"Filter steps: {summary['filter']['steps']}")
        logger.info(f"Acceptance rate: {summary['filter']['acceptance_rate']:.2%}")
        logger.info(f"Flow evaluations: {summary['filter']['flow_evaluations']}")
        for method, t in summary["timing"].items():
            logger.info(f"{method}: {t['calls']} calls, avg {t['average_ms']:.2f}ms")
        logger.info(f"Errors: {summary['errors']['total']}")
        logger.info("=====================")


# Global metrics collector
metrics = MetricsCollector()


def counted_call(fn: Callable[..., Any], *args, **kwargs) -> Tuple[Any, WorkerCounts]:
    """Run fn and return its value with the counter increments it caused in this process"""
    before = metrics.counts()
    value = fn(*args, **kwargs)
    after = metrics.counts()
    delta = {k: v - before.get(k, 0) for k, v in after.items() if v != before.get(k, 0)}
    return value, WorkerCounts(pid=os.getpid(), counts=delta)
