import numpy as np
import pytest
from scipy import stats

from dualmem.dual_memory import (
    CadenceError,
    DualMemory,
    MemoryPolicy,
    Mode,
    SinglePERMemory,
    SinglePSMMMemory,
    StaleHandleError,
    make_memory,
)
from dualmem.priority import PriorityParams, stored_priority
from dualmem.replay_core import InsufficientDataError, Transition


def tr(k, dim=2):
    return Transition(np.full(dim, float(k)), k % 2, float(k), np.full(dim, k + 0.5), False)


def dual(t=16, n=4, main=8000, cache=2000, seed=0):
    policy = MemoryPolicy(Mode.DMS, t=t, n=n, main_capacity=main, cache_capacity=cache)
    return DualMemory(policy, np.random.default_rng(seed))


def run_ticks(mem, ticks, start=0):
    """Ingest n transitions then refresh until ``ticks`` refreshes ran.

    Ticks that arrive before the main memory holds t items drop their pending
    list, as the training loop does during warm-up.
    """
    k = start
    reports = []
    while len(reports) < ticks:
        for _ in range(mem.policy.n):
            mem.ingest(tr(k))
            k += 1
        if mem.can_refresh():
            reports.append(mem.refresh_cache())
        else:
            mem.discard_pending()
    return reports, k


def test_policy_validation():
    with pytest.raises(ValueError):
        MemoryPolicy(Mode.DMS, t=16, n=4, cache_capacity=19)
    MemoryPolicy(Mode.PER, t=16, n=4, cache_capacity=1)


def test_pending_list_collects_n():
    mem = dual()
    for k in range(4):
        mem.ingest(tr(k))
    assert len(mem.pending) == 4
    assert mem.main.count == 4


def test_refresh_warmup_and_cadence_errors():
    mem = dual(t=16, n=4)
    for k in range(4):
        mem.ingest(tr(k))
    with pytest.raises(InsufficientDataError, match="warm-up incomplete"):
        mem.refresh_cache()
    for k in range(4, 20):
        mem.ingest(tr(k))
    with pytest.raises(CadenceError, match="training cadence violated"):
        mem.refresh_cache()


def test_refresh_into_empty_cache():
    mem = dual()
    for k in range(12):
        mem.ingest(tr(k))
    mem.discard_pending()
    for k in range(12, 16):
        mem.ingest(tr(k))
    rep = mem.refresh_cache()
    assert (rep.copied, rep.evicted, rep.cache_count) == (20, 0, 20)
    assert mem.cache.count == 20
    assert mem.pending == []
    # the four newest transitions are in the cache
    assert set(range(12, 16)) <= set(mem.cache.data.rewards[mem.cache.occupied_slots()].astype(int))
    assert np.all(mem.cache.priorities(mem.cache.occupied_slots()) == 1.0)


def test_refresh_full_cache_evicts_t_plus_n():
    mem = dual(t=16, n=4, main=8000, cache=2000)
    reports, _ = run_ticks(mem, 101)
    assert mem.cache.count == 2000
    last = reports[-1]
    assert (last.evicted, last.copied, last.cache_count) == (20, 20, 2000)
    assert all(r.copied == 20 for r in reports)
    assert sum(r.evicted for r in reports) == 20


def test_refresh_partial_shortfall():
    mem = dual(t=16, n=4, main=8000, cache=2000)
    run_ticks(mem, 99)
    assert mem.cache.count == 1980
    # move the cache to 1990 occupied by evicting 10 arbitrary entries
    occ = mem.cache.occupied_slots()
    mem.cache.insert(mem.cache.data.gather(occ[:10]))
    assert mem.cache.count == 1990
    reports, _ = run_ticks(mem, 1, start=10_000)
    rep = reports[0]
    assert (rep.free_before, rep.evicted, rep.copied, rep.cache_count) == (10, 10, 20, 2000)


def test_cache_does_not_alias_main():
    mem = dual(t=4, n=4, main=8, cache=100)
    run_ticks(mem, 1)
    before = mem.cache.data.states[mem.cache.occupied_slots()].copy()
    mem.main.slots.states[:] = -1.0
    after = mem.cache.data.states[mem.cache.occupied_slots()]
    assert np.array_equal(before, after)


def test_counts_bounded_over_long_run():
    mem = dual(t=8, n=4, main=50, cache=30)
    k = 0
    for _ in range(200):
        reports, k = run_ticks(mem, 1, start=k)
        assert mem.main.count <= 50 and mem.cache.count <= 30
        rep = reports[0]
        assert rep.copied == 12
        assert rep.evicted == max(0, 12 - rep.free_before)


def test_minibatch_uniform_priorities_unit_weights(rng):
    mem = dual()
    run_ticks(mem, 5)
    batch, w, handles = mem.sample_minibatch(32, rng)
    assert len(batch) == 32 and len(handles) == 32
    assert np.all(w == 1.0)


def test_minibatch_warmup_error(rng):
    mem = dual()
    run_ticks(mem, 1)
    with pytest.raises(InsufficientDataError, match="warm-up incomplete"):
        mem.sample_minibatch(32, rng)


def test_minibatch_dominant_entry(rng):
    mem = dual(t=16, n=4, main=8000, cache=2000)
    run_ticks(mem, 100)
    slots = mem.cache.occupied_slots()
    low = PriorityParams().epsilon_priority
    values = np.full(slots.size, low)
    values[0] = 1e6
    mem.cache.tree.update_many(slots, values)
    total = 1e6 + low * (slots.size - 1)
    seg = total / 32
    # segment s hits the dominant leaf with probability min(1, overlap / seg)
    expected = np.clip((1e6 - np.arange(32) * seg) / seg, 0.0, 1.0)
    hits = np.zeros(32)
    n_batches = 10_000
    for _ in range(n_batches):
        _, _, h = mem.sample_minibatch(32, rng)
        hits += h.slots == slots[0]
    freq = hits / n_batches
    se = np.sqrt(np.maximum(expected * (1 - expected), 1e-12) / n_batches)
    assert np.all(np.abs(freq - expected) <= 4 * se + 1e-12)


def test_update_priorities_roundtrip(rng):
    params = PriorityParams()
    mem = dual()
    run_ticks(mem, 5)
    batch, w, handles = mem.sample_minibatch(32, rng)
    before = mem.cache.tree.total
    old = mem.cache.priorities(handles.slots[:1])[0]
    one = type(handles)(handles.slots[:1], handles.generations[:1])
    mem.update_priorities(one, [0.5])
    new = stored_priority(0.5, params)
    assert mem.cache.tree.total == pytest.approx(before - old + new, rel=1e-12)
    mem.update_priorities(handles, np.zeros(32))
    assert np.allclose(mem.cache.priorities(handles.slots), params.epsilon_priority ** params.alpha)
    assert mem.cache.tree.audit() <= 1e-9


def test_stale_handle_detected(rng):
    mem = dual(t=16, n=4, main=8000, cache=40)
    run_ticks(mem, 2)
    _, _, handles = mem.sample_minibatch(32, rng)
    run_ticks(mem, 3, start=100)  # full cache: every refresh evicts
    with pytest.raises(StaleHandleError, match="handle invalidated by eviction"):
        mem.update_priorities(handles, np.zeros(32))


def test_single_per_new_item_priority():
    policy = MemoryPolicy(Mode.PER, main_capacity=10)
    mem = SinglePERMemory(policy, np.random.default_rng(0))
    mem.ingest(tr(0))
    assert mem.store.priorities([0])[0] == 1.0
    for k in range(1, 25):
        mem.ingest(tr(k))
    assert mem.store.count == 10
    assert sorted(mem.store.data.rewards.astype(int)) == list(range(15, 25))


def test_single_psmm_uniform_eviction():
    policy = MemoryPolicy(Mode.PSMM, main_capacity=8)
    counts = np.zeros(8)
    for seed in range(4000):
        mem = SinglePSMMMemory(policy, np.random.default_rng(seed))
        for k in range(8):
            mem.ingest(tr(k))
        mem.ingest(tr(99))
        counts[np.flatnonzero(mem.data.rewards == 99.0)[0]] += 1
    assert stats.chisquare(counts).pvalue > 0.001


def test_single_psmm_unit_weights(rng):
    policy = MemoryPolicy(Mode.PSMM, main_capacity=100)
    mem = SinglePSMMMemory(policy, np.random.default_rng(0))
    for k in range(50):
        mem.ingest(tr(k))
    _, w, _ = mem.sample_minibatch(32, rng)
    assert np.all(w == 1.0)


def test_single_psmm_prefers_low_priority():
    policy = MemoryPolicy(Mode.PSMM, main_capacity=4)
    mem = SinglePSMMMemory(policy, np.random.default_rng(1))
    for k in range(4):
        mem.ingest(tr(k))
    mem.prio[:] = [0.01, 10.0, 10.0, 10.0]
    evicted_first = 0
    for k in range(2000):
        mem.prio[:] = [0.01, 10.0, 10.0, 10.0]
        mem.data.rewards[:] = [0, 1, 2, 3]
        mem.ingest(tr(100))
        evicted_first += mem.data.rewards[0] == 100.0
    # inverse weights 100 : 0.1 : 0.1 : 0.1
    assert evicted_first / 2000 > 0.99


@pytest.mark.parametrize("mode", list(Mode))
def test_bit_reproducible_trace(mode):
    def trace(seed):
        policy = MemoryPolicy(mode, t=8, n=4, main_capacity=64, cache_capacity=32)
        mem = make_memory(policy, np.random.default_rng(seed))
        rng = np.random.default_rng(seed + 1)
        out = []
        for k in range(400):
            mem.ingest(tr(k))
            if (k + 1) % 4 == 0:
                if mode is Mode.DMS:
                    if not mem.can_refresh():
                        mem.discard_pending()
                        continue
                    mem.refresh_cache()
                if mem.ready(16):
                    b, w, h = mem.sample_minibatch(16)
                    mem.update_priorities(h, rng.standard_normal(16))
                    out.append((b.rewards.tobytes(), w.tobytes(), h.slots.tobytes()))
        return out

    assert trace(7) == trace(7)
    assert trace(7) != trace(8)
