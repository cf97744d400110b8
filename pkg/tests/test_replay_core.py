import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dualmem.replay_core import (
    Batch,
    InsufficientDataError,
    MainMemory,
    Transition,
    sample_time_stratified,
    stratified_indices,
    subset_bounds,
)


def tr(k, dim=2):
    """Transition whose reward identifies it."""
    return Transition(np.full(dim, float(k)), k % 3, float(k), np.full(dim, k + 0.5), k % 7 == 0)


def rewards(mem):
    return [t.reward for t in mem.ordered()]


def test_push_first_and_fifo():
    mem = MainMemory(3)
    mem.push(tr(1))
    assert mem.count == 1 and rewards(mem) == [1.0]
    mem.push(tr(2))
    mem.push(tr(3))
    mem.push(tr(4))
    assert mem.count == 3
    assert rewards(mem) == [2.0, 3.0, 4.0]


def test_push_ten_thousand():
    mem = MainMemory(10_000)
    for k in range(10_000):
        mem.push(tr(k))
    assert mem.count == 10_000
    assert mem[0].reward == 0.0 and mem[-1].reward == 9999.0


@settings(max_examples=50, deadline=None)
@given(capacity=st.integers(1, 12), pushes=st.integers(0, 40))
def test_fifo_property(capacity, pushes):
    mem = MainMemory(capacity)
    for k in range(pushes):
        mem.push(tr(k))
    assert mem.count == min(capacity, pushes)
    assert rewards(mem) == [float(k) for k in range(max(0, pushes - capacity), pushes)]


def test_transition_validation():
    with pytest.raises(ValueError):
        Transition(np.zeros(2), 0, 0.0, np.zeros(3), False)
    with pytest.raises(ValueError):
        Transition(np.zeros(2), -1, 0.0, np.zeros(2), False)
    mem = MainMemory(4)
    mem.push(tr(0))
    with pytest.raises(ValueError):
        mem.push(tr(1, dim=3))


def as_pairs(ranges):
    """1-based inclusive [first..last] pairs."""
    return [(r.start + 1, r.stop) for r in ranges]


@pytest.mark.parametrize(
    "count,t,expected",
    [
        (8, 2, [(1, 4), (5, 8)]),
        (8000, 4, [(1, 2000), (2001, 4000), (4001, 6000), (6001, 8000)]),
        (5, 2, [(1, 2), (3, 5)]),
    ],
)
def test_subset_bounds_examples(count, t, expected):
    assert as_pairs(subset_bounds(count, t)) == expected


def test_subset_bounds_errors():
    with pytest.raises(InsufficientDataError, match="insufficient data for stratification"):
        subset_bounds(3, 4)
    with pytest.raises(ValueError, match="invalid subset count"):
        subset_bounds(3, 0)


@settings(max_examples=200, deadline=None)
@given(data=st.data())
def test_partition_property(data):
    count = data.draw(st.integers(1, 5000))
    t = data.draw(st.integers(1, count))
    ranges = subset_bounds(count, t)
    assert len(ranges) == t
    assert ranges[0].start == 0 and ranges[-1].stop == count
    for a, b in zip(ranges, ranges[1:]):
        assert a.stop == b.start
    sizes = [len(r) for r in ranges]
    assert min(sizes) >= 1 and max(sizes) - min(sizes) <= 1
    if count % t == 0:
        assert sizes == [count // t] * t


@settings(max_examples=100, deadline=None)
@given(count=st.integers(1, 3000), frac=st.floats(0, 1), seed=st.integers(0, 2**32 - 1))
def test_stratification_property(count, frac, seed):
    t = max(1, int(frac * count))
    idx = stratified_indices(count, t, np.random.default_rng(seed))
    for j, r in zip(idx, subset_bounds(count, t)):
        assert j in r


def test_sample_time_stratified_singletons(rng):
    mem = MainMemory(4)
    for k in range(4):
        mem.push(tr(k))
    assert [t.reward for t in sample_time_stratified(mem, 4, rng)] == [0.0, 1.0, 2.0, 3.0]


def test_sample_single_subset_is_uniform(rng):
    mem = MainMemory(2)
    mem.push(tr(1))
    mem.push(tr(2))
    draws = [sample_time_stratified(mem, 1, rng)[0].reward for _ in range(20_000)]
    frac = np.mean(np.array(draws) == 1.0)
    assert abs(frac - 0.5) < 3 * np.sqrt(0.25 / 20_000)


def test_sample_is_copy_and_errors(rng):
    mem = MainMemory(3)
    for k in range(3):
        mem.push(tr(k))
    picked = sample_time_stratified(mem, 3, rng)
    picked[0].state[:] = -99.0
    assert mem[0].state[0] == 0.0
    with pytest.raises(InsufficientDataError, match="insufficient data for stratification"):
        sample_time_stratified(mem, 4, rng)


def test_stratified_frequencies_8000(rng):
    count, t, trials = 8000, 4, 100_000
    ranges = subset_bounds(count, t)
    starts = np.array([r.start for r in ranges])
    stops = np.array([r.stop for r in ranges])
    trace = np.array([stratified_indices(count, t, rng) for _ in range(trials)])
    # position j lands in range j on every call
    assert np.all((trace >= starts) & (trace < stops))
    counts = np.zeros((t, 2000))
    for j in range(t):
        counts[j] = np.bincount(trace[:, j] - starts[j], minlength=2000)
    for j in range(t):
        assert stats.chisquare(counts[j]).pvalue > 0.001


def test_stratified_over_wrapped_buffer(rng):
    mem = MainMemory(10)
    for k in range(25):
        mem.push(tr(k))
    picked = sample_time_stratified(mem, 5, rng)
    # logical order is 15..24, two per subset
    for j, t in enumerate(picked):
        assert 15 + 2 * j <= t.reward <= 16 + 2 * j


def test_reproducible(rng):
    mem = MainMemory(100)
    for k in range(100):
        mem.push(tr(k))
    a = [t.reward for t in sample_time_stratified(mem, 10, np.random.default_rng(3))]
    b = [t.reward for t in sample_time_stratified(mem, 10, np.random.default_rng(3))]
    assert a == b


def test_batch_roundtrip():
    trs = [tr(k) for k in range(5)]
    b = Batch.from_transitions(trs)
    assert len(b) == 5
    back = b.to_transitions()
    assert [t.reward for t in back] == [t.reward for t in trs]
    assert [t.terminal for t in back] == [t.terminal for t in trs]
