"""Dual memory (main + prioritized cache) and the two single-memory baselines.

All three memories share one surface used by the training loop::

    mem.ingest(tr)
    mem.sample_minibatch(batch, rng) -> (Batch, weights, Handles)
    mem.update_priorities(handles, td_errors)

``DualMemory`` additionally exposes :meth:`DualMemory.refresh_cache`, called
once per training step.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .priority import PriorityParams, SumTree, per_sample, psmm_select_removals, stored_priority
from .replay_core import Batch, InsufficientDataError, MainMemory, SlotArrays, Transition, stratified_indices


class Mode(str, enum.Enum):
    PER = "per"
    PSMM = "psmm"
    DMS = "dms"


class StaleHandleError(LookupError):
    pass


class CadenceError(RuntimeError):
    pass


@dataclass
class MemoryPolicy:
    mode: Mode = Mode.DMS
    t: int = 16
    n: int = 4
    main_capacity: int = 8000
    cache_capacity: int = 2000
    params: PriorityParams = field(default_factory=PriorityParams)

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if self.t <= 0 or self.n <= 0:
            raise ValueError(f"t and n must be positive, got t={self.t}, n={self.n}")
        if self.main_capacity <= 0:
            raise ValueError(f"main_capacity must be positive, got {self.main_capacity}")
        if self.mode is Mode.DMS:
            if self.cache_capacity < self.t + self.n:
                raise ValueError(
                    f"cache_capacity {self.cache_capacity} cannot hold one refresh of t+n={self.t + self.n}"
                )
            if self.main_capacity < self.t:
                raise ValueError(f"main_capacity {self.main_capacity} smaller than t={self.t}")


@dataclass(frozen=True)
class Handles:
    """Slots plus the generation each slot had when it was sampled."""

    slots: np.ndarray
    generations: np.ndarray

    def __len__(self):
        return self.slots.shape[0]


@dataclass
class RefreshReport:
    evicted: int
    copied: int
    free_before: int
    cache_count: int


class _GenerationMixin:
    def _make_handles(self, slots):
        return Handles(slots, self.generation[slots].copy())

    def _check_handles(self, handles, td_errors):
        if len(handles) != len(td_errors):
            raise ValueError(f"{len(handles)} handles but {len(td_errors)} TD errors")
        if np.any(self.generation[handles.slots] != handles.generations):
            raise StaleHandleError("handle invalidated by eviction")


class PrioritizedStore(_GenerationMixin):
    """Slot storage with a sum tree over per-slot priorities.

    New entries get the running maximum of priorities written so far, starting
    at 1.0, so every fresh item is likely to be replayed soon.
    """

    def __init__(self, capacity: int, params: PriorityParams, obs_dim: int | None = None):
        self.capacity = int(capacity)
        self.params = params
        self.data = SlotArrays(self.capacity, obs_dim)
        self.tree = SumTree(self.capacity)
        self.occupied = np.zeros(self.capacity, dtype=bool)
        self.generation = np.zeros(self.capacity, dtype=np.int64)
        self.count = 0
        self.max_priority = 1.0

    def __len__(self):
        return self.count

    @property
    def free(self) -> int:
        return self.capacity - self.count

    def occupied_slots(self) -> np.ndarray:
        if self.count == self.capacity:
            return np.arange(self.capacity)
        return np.flatnonzero(self.occupied)

    def priorities(self, slots) -> np.ndarray:
        return self.tree.nodes[self.tree._cap + np.asarray(slots)]

    def write(self, slots, batch: Batch):
        """Overwrite ``slots`` with ``batch`` at the current max priority."""
        slots = np.asarray(slots, dtype=np.int64)
        self.data.write_batch(slots, batch)
        self.generation[slots] += 1
        self.count += int(np.count_nonzero(~self.occupied[slots]))
        self.occupied[slots] = True
        self.tree.update_many(slots, np.full(slots.shape[0], self.max_priority))

    def insert(self, batch: Batch) -> np.ndarray:
        if len(batch) > self.free:
            raise ValueError(f"no room for {len(batch)} items ({self.free} free)")
        slots = np.flatnonzero(~self.occupied)[:len(batch)]
        self.write(slots, batch)
        return slots

    def evict(self, slots):
        slots = np.asarray(slots, dtype=np.int64)
        if not np.all(self.occupied[slots]):
            raise ValueError("evicting an empty slot")
        self.generation[slots] += 1
        self.occupied[slots] = False
        self.count -= slots.shape[0]
        self.tree.update_many(slots, np.zeros(slots.shape[0]))

    def set_priorities(self, slots, values):
        values = np.asarray(values, dtype=np.float64)
        self.tree.update_many(slots, values)
        if values.size:
            self.max_priority = max(self.max_priority, float(values.max()))

    def sample(self, batch: int, rng: np.random.Generator):
        if self.count < batch:
            raise InsufficientDataError("warm-up incomplete")
        slots, weights = per_sample(self.tree, batch, self.params.beta, rng, n_occupied=self.count)
        return self.data.gather(slots), weights, self._make_handles(slots)

    def update_priorities(self, handles: Handles, td_errors):
        td = np.asarray(td_errors, dtype=np.float64).reshape(-1)
        self._check_handles(handles, td)
        self.set_priorities(handles.slots, stored_priority(td, self.params))


class DualMemory:
    """Large FIFO main memory feeding a small prioritized cache.

    Every transition goes to the main memory and onto a pending list.  At each
    training step :meth:`refresh_cache` copies ``t`` time-stratified samples of
    the main memory plus the ``n`` pending transitions into the cache, first
    evicting (PSMM) whatever does not fit.  Minibatches come only from the cache.
    """

    mode = Mode.DMS

    def __init__(self, policy: MemoryPolicy, rng: np.random.Generator, obs_dim: int | None = None):
        if policy.mode is not Mode.DMS:
            raise ValueError(f"DualMemory needs mode 'dms', got {policy.mode.value!r}")
        self.policy = policy
        self.params = policy.params
        self.rng = rng
        self.main = MainMemory(policy.main_capacity, obs_dim)
        self.cache = PrioritizedStore(policy.cache_capacity, policy.params, obs_dim)
        self.pending: list[Transition] = []

    @property
    def counts(self):
        return self.main.count, self.cache.count

    def ingest(self, tr: Transition):
        self.main.push(tr)
        self.pending.append(tr)

    def can_refresh(self) -> bool:
        return self.main.count >= self.policy.t

    def discard_pending(self):
        self.pending.clear()

    def refresh_cache(self, rng: np.random.Generator | None = None) -> RefreshReport:
        rng = self.rng if rng is None else rng
        t, n = self.policy.t, self.policy.n
        if self.main.count < t:
            raise InsufficientDataError("warm-up incomplete")
        if len(self.pending) != n:
            raise CadenceError("training cadence violated")
        cache = self.cache
        free_before = cache.free
        shortfall = max(0, t + n - free_before)
        if shortfall:
            occ = cache.occupied_slots()
            pos = psmm_select_removals(cache.priorities(occ), shortfall, rng, self.params.alpha_remove)
            cache.evict(occ[pos])
        picked = self.main.gather(stratified_indices(self.main.count, t, rng))
        fresh = Batch.from_transitions(self.pending)
        cache.insert(_concat(picked, fresh))
        self.pending.clear()
        return RefreshReport(evicted=shortfall, copied=t + n, free_before=free_before, cache_count=cache.count)

    def ready(self, batch: int) -> bool:
        return self.main.count >= max(self.policy.t, batch) and self.cache.count >= batch

    def sample_minibatch(self, batch: int, rng: np.random.Generator | None = None):
        return self.cache.sample(batch, self.rng if rng is None else rng)

    def update_priorities(self, handles: Handles, td_errors):
        self.cache.update_priorities(handles, td_errors)


class SinglePERMemory:
    """One FIFO buffer sampled with proportional PER."""

    mode = Mode.PER

    def __init__(self, policy: MemoryPolicy, rng: np.random.Generator, obs_dim: int | None = None):
        self.policy = policy
        self.params = policy.params
        self.rng = rng
        self.store = PrioritizedStore(policy.main_capacity, policy.params, obs_dim)
        self.cursor = 0

    @property
    def counts(self):
        return self.store.count, 0

    def ingest(self, tr: Transition):
        store = self.store
        slot = self.cursor
        store.data.write(slot, tr)
        store.generation[slot] += 1
        if not store.occupied[slot]:
            store.occupied[slot] = True
            store.count += 1
        store.tree.update(slot, store.max_priority)
        self.cursor = (slot + 1) % store.capacity

    def ready(self, batch: int) -> bool:
        return self.store.count >= max(self.policy.t, batch)

    def sample_minibatch(self, batch: int, rng: np.random.Generator | None = None):
        return self.store.sample(batch, self.rng if rng is None else rng)

    def update_priorities(self, handles: Handles, td_errors):
        self.store.update_priorities(handles, td_errors)


class SinglePSMMMemory(_GenerationMixin):
    """One buffer with PSMM eviction and uniform sampling.

    Eviction recomputes inverse-priority weights over every stored item, so its
    cost grows linearly with capacity.
    """

    mode = Mode.PSMM

    def __init__(self, policy: MemoryPolicy, rng: np.random.Generator, obs_dim: int | None = None):
        self.policy = policy
        self.params = policy.params
        self.rng = rng
        self.capacity = policy.main_capacity
        self.data = SlotArrays(self.capacity, obs_dim)
        self.prio = np.zeros(self.capacity)
        self.generation = np.zeros(self.capacity, dtype=np.int64)
        self.count = 0
        self.max_priority = 1.0

    @property
    def counts(self):
        return self.count, 0

    def ingest(self, tr: Transition):
        if self.count == self.capacity:
            slot = int(psmm_select_removals(self.prio, 1, self.rng, self.params.alpha_remove)[0])
        else:
            slot = self.count
            self.count += 1
        self.data.write(slot, tr)
        self.generation[slot] += 1
        self.prio[slot] = self.max_priority

    def ready(self, batch: int) -> bool:
        return self.count >= max(self.policy.t, batch)

    def sample_minibatch(self, batch: int, rng: np.random.Generator | None = None):
        if self.count < batch:
            raise InsufficientDataError("warm-up incomplete")
        rng = self.rng if rng is None else rng
        slots = rng.integers(0, self.count, batch)
        return self.data.gather(slots), np.ones(batch), self._make_handles(slots)

    def update_priorities(self, handles: Handles, td_errors):
        td = np.asarray(td_errors, dtype=np.float64).reshape(-1)
        self._check_handles(handles, td)
        values = stored_priority(td, self.params)
        self.prio[handles.slots] = values
        if values.size:
            self.max_priority = max(self.max_priority, float(values.max()))


def make_memory(policy: MemoryPolicy, rng: np.random.Generator, obs_dim: int | None = None):
    cls = {Mode.DMS: DualMemory, Mode.PER: SinglePERMemory, Mode.PSMM: SinglePSMMMemory}[policy.mode]
    return cls(policy, rng, obs_dim)


def _concat(a: Batch, b: Batch) -> Batch:
    if len(b) == 0:
        return a
    return Batch(
        np.concatenate([a.states, b.states]),
        np.concatenate([a.actions, b.actions]),
        np.concatenate([a.rewards, b.rewards]),
        np.concatenate([a.next_states, b.next_states]),
        np.concatenate([a.terminals, b.terminals]),
    )
