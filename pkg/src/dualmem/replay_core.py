"""Transitions, the time-ordered main memory and time-stratified selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InsufficientDataError(ValueError):
    pass


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=np.float64)
        self.next_state = np.asarray(self.next_state, dtype=np.float64)
        if self.state.shape != self.next_state.shape:
            raise ValueError(
                f"state and next_state differ in shape: {self.state.shape} vs {self.next_state.shape}"
            )
        if self.action < 0:
            raise ValueError(f"action must be >= 0, got {self.action}")


@dataclass
class Batch:
    """Column-wise block of transitions; every array has the same leading length."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray

    def __len__(self):
        return self.actions.shape[0]

    def __getitem__(self, i) -> Transition:
        return Transition(
            self.states[i].copy(),
            int(self.actions[i]),
            float(self.rewards[i]),
            self.next_states[i].copy(),
            bool(self.terminals[i]),
        )

    def to_transitions(self) -> list[Transition]:
        return [self[i] for i in range(len(self))]

    @classmethod
    def from_transitions(cls, transitions) -> Batch:
        transitions = list(transitions)
        return cls(
            np.array([tr.state for tr in transitions], dtype=np.float64),
            np.array([tr.action for tr in transitions], dtype=np.int64),
            np.array([tr.reward for tr in transitions], dtype=np.float64),
            np.array([tr.next_state for tr in transitions], dtype=np.float64),
            np.array([tr.terminal for tr in transitions], dtype=bool),
        )


def as_batch(data) -> Batch:
    if isinstance(data, Batch):
        return data
    if isinstance(data, Transition):
        return Batch.from_transitions([data])
    return Batch.from_transitions(data)


class SlotArrays:
    """Preallocated column storage for ``capacity`` transitions.

    Allocation waits for the first write so the observation width can be taken
    from the data.
    """

    def __init__(self, capacity: int, obs_dim: int | None = None):
        if capacity <= 0:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.obs_dim = None
        if obs_dim is not None:
            self._allocate(obs_dim)

    def _allocate(self, obs_dim):
        self.obs_dim = int(obs_dim)
        c = self.capacity
        self.states = np.zeros((c, self.obs_dim))
        self.actions = np.zeros(c, dtype=np.int64)
        self.rewards = np.zeros(c)
        self.next_states = np.zeros((c, self.obs_dim))
        self.terminals = np.zeros(c, dtype=bool)

    def write(self, slot, tr: Transition):
        if self.obs_dim is None:
            self._allocate(tr.state.shape[0])
        elif tr.state.shape != (self.obs_dim,):
            raise ValueError(f"expected observation of shape ({self.obs_dim},), got {tr.state.shape}")
        self.states[slot] = tr.state
        self.actions[slot] = tr.action
        self.rewards[slot] = tr.reward
        self.next_states[slot] = tr.next_state
        self.terminals[slot] = tr.terminal

    def write_batch(self, slots, batch: Batch):
        if len(batch) == 0:
            return
        if self.obs_dim is None:
            self._allocate(batch.states.shape[1])
        self.states[slots] = batch.states
        self.actions[slots] = batch.actions
        self.rewards[slots] = batch.rewards
        self.next_states[slots] = batch.next_states
        self.terminals[slots] = batch.terminals

    def gather(self, slots) -> Batch:
        # fancy indexing copies, so the result never aliases storage
        return Batch(
            self.states[slots],
            self.actions[slots],
            self.rewards[slots],
            self.next_states[slots],
            self.terminals[slots],
        )


class MainMemory:
    """Fixed-capacity FIFO ring buffer kept in insertion-time order.

    Logical index 0 is the oldest stored transition and ``count - 1`` the
    newest.  Once full, every push overwrites the oldest slot.
    """

    def __init__(self, capacity: int, obs_dim: int | None = None):
        self.slots = SlotArrays(capacity, obs_dim)
        self.capacity = self.slots.capacity
        self.insert_cursor = 0
        self.count = 0

    def __len__(self):
        return self.count

    def push(self, tr: Transition):
        self.slots.write(self.insert_cursor, tr)
        self.insert_cursor = (self.insert_cursor + 1) % self.capacity
        if self.count < self.capacity:
            self.count += 1

    def physical(self, logical):
        """Map logical (time-ordered, 0-based) indices to storage slots."""
        start = self.insert_cursor if self.count == self.capacity else 0
        return (start + np.asarray(logical, dtype=np.int64)) % self.capacity

    def gather(self, logical) -> Batch:
        return self.slots.gather(self.physical(logical))

    def __getitem__(self, logical: int) -> Transition:
        if not -self.count <= logical < self.count:
            raise IndexError(logical)
        return self.gather([logical % self.count])[0]

    def ordered(self) -> list[Transition]:
        if self.count == 0:
            return []
        return self.gather(np.arange(self.count)).to_transitions()


def subset_bounds(count: int, t: int) -> list[range]:
    """Split logical indices ``0..count-1`` into ``t`` contiguous time-ordered ranges.

    Range ``j`` ends at ``floor((j + 1) * count / t)``, so sizes differ by at most
    one and, when ``t`` divides ``count``, each range holds exactly ``count / t``
    items.
    """
    if t <= 0:
        raise ValueError("invalid subset count")
    if t > count:
        raise InsufficientDataError("insufficient data for stratification")
    edges = [(j * count) // t for j in range(t + 1)]
    return [range(edges[j], edges[j + 1]) for j in range(t)]


def stratified_indices(count: int, t: int, rng: np.random.Generator) -> np.ndarray:
    """One uniformly drawn logical index from each of the ``t`` time ranges."""
    if t <= 0:
        raise ValueError("invalid subset count")
    if t > count:
        raise InsufficientDataError("insufficient data for stratification")
    j = np.arange(t + 1, dtype=np.int64)
    edges = (j * count) // t
    return rng.integers(edges[:-1], edges[1:])


def sample_time_stratified(mem: MainMemory, t: int, rng: np.random.Generator) -> list[Transition]:
    return mem.gather(stratified_indices(mem.count, t, rng)).to_transitions()
