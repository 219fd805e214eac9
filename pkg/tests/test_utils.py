import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from app.utils.cache import SimpleCache
from app.utils.helpers import batch_means_se
from app.utils.metrics import MetricsCollector, WorkerCounts, counted_call, metrics
from app.utils.rng import make_rng


def test_batch_means_matches_iid_error_for_independent_draws():
    """Test batch means recover σ/sqrt(n) on independent draws"""
    chain = make_rng(0).standard_normal((40_000, 2))
    np.testing.assert_allclose(batch_means_se(chain), 1.0 / np.sqrt(40_000), rtol=0.5)


def test_batch_means_widens_for_correlated_chains():
    """Test an AR(1) chain gets a larger standard error than the i.i.d. formula"""
    rng = make_rng(1)
    noise = rng.standard_normal(40_000)
    chain = np.empty_like(noise)
    chain[0] = noise[0]
    for i in range(1, chain.size):
        chain[i] = 0.9 * chain[i - 1] + noise[i]
    iid = chain.std(ddof=1) / np.sqrt(chain.size)
    # integrated autocorrelation time (1 + 0.9) / (1 - 0.9) = 19
    assert batch_means_se(chain)[0] == pytest.approx(np.sqrt(19.0) * iid, rel=0.5)


def test_batch_means_short_chains():
    """Test short chains fall back to the i.i.d. formula and single rows give 0"""
    chain = np.array([[1.0], [3.0], [5.0]])
    assert batch_means_se(chain)[0] == pytest.approx(2.0 / np.sqrt(3.0))
    assert batch_means_se(np.ones((1, 3))).tolist() == [0.0, 0.0, 0.0]


def test_cache_shared_between_threads():
    """Test concurrent get/set keeps the size bound and the hit/miss totals"""
    cache = SimpleCache(max_size=16, name="threaded")

    def work(offset):
        for i in range(500):
            key = (offset + i) % 40
            if cache.get(key) is None:
                cache.set(key, key * 2)

    with ThreadPoolExecutor(max_workers=8) as pool:
        list(pool.map(work, range(8)))
    assert cache.size() <= 16
    assert cache.hits + cache.misses == 8 * 500
    for key in list(cache.cache):
        assert cache.cache[key] == key * 2


def test_counted_call_returns_increments():
    """Test counted_call reports the counters a call added in this process"""
    value, worker = counted_call(metrics.record_filter_step, 10, 4, 2)
    assert value is None
    assert worker.pid == os.getpid()
    assert worker.counts == {"filter_steps": 1, "proposals": 10, "acceptances": 4, "index_moves": 2}


def test_absorb_merges_counts_from_other_processes_only():
    """Test counts from this process are not added twice"""
    collector = MetricsCollector()
    collector.absorb(WorkerCounts(pid=os.getpid(), counts={"filter_steps": 3}))
    assert collector.filter_steps == 0
    collector.absorb(WorkerCounts(pid=-1, counts={"filter_steps": 3, "errors.total": 1, "errors.FlowBlowUpError": 1}))
    summary = collector.get_summary()
    assert summary["filter"]["steps"] == 3
    assert summary["errors"] == {"total": 1, "FlowBlowUpError": 1}
