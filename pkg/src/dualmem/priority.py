"""Priority bookkeeping: sum tree, proportional PER sampling, PSMM removal."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels


class EmptyPriorityError(ValueError):
    pass


@dataclass(frozen=True)
class PriorityParams:
    alpha: float = 0.6
    beta: float = 0.4
    epsilon_priority: float = 0.01
    alpha_remove: float = 1.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if not self.epsilon_priority > 0:
            raise ValueError(f"epsilon_priority must be > 0, got {self.epsilon_priority}")
        if self.alpha_remove < 0:
            raise ValueError(f"alpha_remove must be >= 0, got {self.alpha_remove}")


def priority_from_td(delta, params: PriorityParams):
    """|delta| + epsilon.  Accepts a scalar or an array."""
    d = np.asarray(delta, dtype=np.float64)
    if not np.all(np.isfinite(d)):
        raise ValueError("non-finite TD error")
    p = np.abs(d) + params.epsilon_priority
    return float(p) if p.ndim == 0 else p


def stored_priority(delta, params: PriorityParams):
    """Leaf value kept in the tree: (|delta| + epsilon) ** alpha."""
    p = np.power(priority_from_td(delta, params), params.alpha)
    return float(p) if np.ndim(p) == 0 else p


class SumTree:
    """Complete binary tree of priorities with O(log n) update and prefix search.

    Capacity is rounded up to a power of two internally; padding leaves and
    unused leaves hold 0 and are never returned by :meth:`find`.
    """

    def __init__(self, leaf_capacity: int):
        if leaf_capacity <= 0:
            raise ValueError(f"leaf_capacity must be positive, got {leaf_capacity}")
        self.leaf_capacity = int(leaf_capacity)
        self._cap = _kernels._pow2(self.leaf_capacity)
        self.nodes = np.zeros(2 * self._cap)

    @property
    def total(self) -> float:
        return float(self.nodes[1])

    @property
    def leaves(self) -> np.ndarray:
        """Read-only view of the leaf priorities."""
        view = self.nodes[self._cap:self._cap + self.leaf_capacity]
        view.flags.writeable = False
        return view

    def __getitem__(self, leaf_index: int) -> float:
        self._check_index(leaf_index)
        return float(self.nodes[self._cap + leaf_index])

    def _check_index(self, leaf_index):
        if not 0 <= leaf_index < self.leaf_capacity:
            raise IndexError(f"leaf index {leaf_index} outside [0, {self.leaf_capacity})")

    def update(self, leaf_index: int, value: float):
        self._check_index(leaf_index)
        self.update_many(np.array([leaf_index], dtype=np.int64), np.array([value], dtype=np.float64))

    def update_many(self, leaf_indices, values):
        idx = np.asarray(leaf_indices, dtype=np.int64).reshape(-1)
        vals = np.asarray(values, dtype=np.float64).reshape(-1)
        if idx.shape != vals.shape:
            raise ValueError("leaf_indices and values differ in length")
        if idx.size and (idx.min() < 0 or idx.max() >= self.leaf_capacity):
            raise IndexError(f"leaf index outside [0, {self.leaf_capacity})")
        if vals.size and not (np.all(vals >= 0) and np.all(np.isfinite(vals))):
            raise ValueError("priorities must be finite and >= 0")
        _kernels.tree_set(self.nodes, self._cap, idx, vals)

    def find(self, u: float) -> int:
        total = self.total
        if not 0.0 <= u < total:
            raise ValueError(f"prefix value {u} outside [0, {total})")
        return int(self.find_many(np.array([u]))[0])

    def find_many(self, targets) -> np.ndarray:
        """Prefix search for many targets at once; no range checks."""
        return _kernels.tree_find(self.nodes, self._cap, np.asarray(targets, dtype=np.float64))

    def clear(self):
        self.nodes[:] = 0.0

    def audit(self) -> float:
        """Largest relative mismatch between an internal node and its children's sum."""
        cap = self._cap
        if cap == 1:
            return 0.0
        parents = self.nodes[1:cap]
        sums = self.nodes[2:2 * cap:2] + self.nodes[3:2 * cap:2]
        scale = np.maximum(np.abs(parents), 1e-300)
        return float(np.max(np.abs(parents - sums) / scale))


def per_sample(tree: SumTree, batch: int, beta: float, rng: np.random.Generator, n_occupied: int | None = None):
    """Stratified proportional sampling.

    ``[0, total)`` is cut into ``batch`` equal segments with one uniform draw in
    each.  Returns leaf indices and importance weights ``(N * P(i)) ** -beta``
    scaled so the batch maximum is exactly 1.
    """
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch}")
    total = tree.total
    if not total > 0.0:
        raise EmptyPriorityError("empty priority mass")
    if n_occupied is None:
        n_occupied = int(np.count_nonzero(tree.leaves))
    seg = total / batch
    targets = (np.arange(batch) + rng.random(batch)) * seg
    np.minimum(targets, np.nextafter(total, 0.0), out=targets)
    idx = tree.find_many(targets)
    probs = tree.nodes[tree._cap + idx] / total
    weights = np.power(n_occupied * probs, -beta)
    weights /= weights.max()
    return idx, weights


def psmm_select_removals(priorities, k: int, rng: np.random.Generator, alpha_remove: float = 1.0) -> np.ndarray:
    """Pick ``k`` distinct positions to evict, low priorities first in expectation.

    Draws are sequential and without replacement; each draw picks position
    ``i`` with probability proportional to ``priority_i ** -alpha_remove``
    among the positions still remaining.
    """
    p = np.ascontiguousarray(priorities, dtype=np.float64)
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    if k > p.shape[0]:
        raise ValueError(f"cannot remove {k} items from {p.shape[0]}")
    if k == 0:
        return np.empty(0, dtype=np.int64)
    if not (np.all(p > 0) and np.all(np.isfinite(p))):
        raise ValueError("removal priorities must be finite and > 0")
    return _kernels.psmm_draw(p, float(alpha_remove), rng.random(k))
