"""Hot inner loops of the replay memories.

Every kernel exists twice: a loop version compiled with ``numba.njit`` and a
vectorised pure-numpy version.  The active set is picked once at import time:

    DUALMEM_BACKEND=numba   (default when numba imports)
    DUALMEM_BACKEND=numpy   (forces the fallback)

Sum trees are stored as 1-indexed heaps in a float64 array of length
``2 * leaf_cap``: ``nodes[1]`` is the total, leaf ``j`` lives at
``nodes[leaf_cap + j]`` and ``nodes[0]`` is unused.  Both backends recompute
parents as ``left + right`` (never by adding deltas), so the two paths produce
bit-identical trees and the tree never drifts from its leaves.
"""
import os

import numpy as np

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False


def _requested_backend():
    name = os.environ.get("DUALMEM_BACKEND", "numba").strip().lower()
    if name not in ("numba", "numpy"):
        raise ValueError(f"DUALMEM_BACKEND must be 'numba' or 'numpy', got {name!r}")
    if name == "numba" and not HAS_NUMBA:
        return "numpy"
    return name


# ---------------------------------------------------------------------------
# pure numpy
# ---------------------------------------------------------------------------


def np_tree_build(nodes, leaf_cap):
    h = leaf_cap // 2
    while h >= 1:
        nodes[h:2 * h] = nodes[2 * h:4 * h:2] + nodes[2 * h + 1:4 * h:2]
        h //= 2


def np_tree_set(nodes, leaf_cap, idx, values):
    if idx.shape[0] <= 4:
        # a handful of leaves: walking each path beats the vectorised level sweep
        for k in range(idx.shape[0]):
            i = int(idx[k]) + leaf_cap
            nodes[i] = values[k]
            i >>= 1
            while i >= 1:
                nodes[i] = nodes[2 * i] + nodes[2 * i + 1]
                i >>= 1
        return
    pos = idx + leaf_cap
    nodes[pos] = values
    # duplicate parents just rewrite the same sum, so no dedup is needed
    parents = pos >> 1
    while parents[0] >= 1:
        nodes[parents] = nodes[2 * parents] + nodes[2 * parents + 1]
        parents >>= 1


def np_tree_find(nodes, leaf_cap, targets):
    i = np.ones(targets.shape[0], dtype=np.int64)
    if i.shape[0] == 0:
        return i
    u = targets.astype(np.float64, copy=True)
    while i[0] < leaf_cap:
        left = nodes[2 * i]
        go_left = (u < left) | (nodes[2 * i + 1] <= 0.0)
        u = np.where(go_left, u, u - left)
        i = 2 * i + (~go_left)
    return i - leaf_cap


def _np_scalar_find(nodes, leaf_cap, u):
    i = 1
    while i < leaf_cap:
        left = nodes[2 * i]
        if u < left or nodes[2 * i + 1] <= 0.0:
            i = 2 * i
        else:
            u -= left
            i = 2 * i + 1
    return i - leaf_cap


def _np_scalar_zero(nodes, leaf_cap, j):
    i = j + leaf_cap
    nodes[i] = 0.0
    i >>= 1
    while i >= 1:
        nodes[i] = nodes[2 * i] + nodes[2 * i + 1]
        i >>= 1


def np_inverse_weights(priorities, alpha_remove):
    if alpha_remove == 1.0:
        return 1.0 / priorities
    return np.power(priorities, -alpha_remove)


def np_psmm_draw(priorities, alpha_remove, uniforms):
    n = priorities.shape[0]
    leaf_cap = _pow2(n)
    nodes = np.zeros(2 * leaf_cap)
    nodes[leaf_cap:leaf_cap + n] = np_inverse_weights(priorities, alpha_remove)
    np_tree_build(nodes, leaf_cap)
    # sequential draws touch O(log n) nodes each; python floats index faster than numpy scalars
    tree = nodes.tolist()
    out = np.empty(uniforms.shape[0], dtype=np.int64)
    for r in range(uniforms.shape[0]):
        j = _np_scalar_find(tree, leaf_cap, float(uniforms[r]) * tree[1])
        out[r] = j
        _np_scalar_zero(tree, leaf_cap, j)
    return out


def _pow2(n):
    cap = 1
    while cap < n:
        cap *= 2
    return cap


NUMPY_KERNELS = {
    "tree_build": np_tree_build,
    "tree_set": np_tree_set,
    "tree_find": np_tree_find,
    "inverse_weights": np_inverse_weights,
    "psmm_draw": np_psmm_draw,
}

# ---------------------------------------------------------------------------
# numba
# ---------------------------------------------------------------------------

if HAS_NUMBA:
    _jit = numba.njit(cache=True, nogil=True)

    @_jit
    def nb_tree_build(nodes, leaf_cap):
        for i in range(leaf_cap - 1, 0, -1):
            nodes[i] = nodes[2 * i] + nodes[2 * i + 1]

    @_jit
    def nb_tree_set(nodes, leaf_cap, idx, values):
        for k in range(idx.shape[0]):
            i = idx[k] + leaf_cap
            nodes[i] = values[k]
            i >>= 1
            while i >= 1:
                nodes[i] = nodes[2 * i] + nodes[2 * i + 1]
                i >>= 1

    @_jit
    def _nb_find_one(nodes, leaf_cap, u):
        i = 1
        while i < leaf_cap:
            left = nodes[2 * i]
            if u < left or nodes[2 * i + 1] <= 0.0:
                i = 2 * i
            else:
                u -= left
                i = 2 * i + 1
        return i - leaf_cap

    @_jit
    def nb_tree_find(nodes, leaf_cap, targets):
        out = np.empty(targets.shape[0], dtype=np.int64)
        for k in range(targets.shape[0]):
            out[k] = _nb_find_one(nodes, leaf_cap, targets[k])
        return out

    @_jit
    def nb_inverse_weights(priorities, alpha_remove):
        out = np.empty(priorities.shape[0])
        if alpha_remove == 1.0:
            for k in range(priorities.shape[0]):
                out[k] = 1.0 / priorities[k]
        else:
            for k in range(priorities.shape[0]):
                out[k] = priorities[k] ** -alpha_remove
        return out

    @_jit
    def nb_psmm_draw(priorities, alpha_remove, uniforms):
        n = priorities.shape[0]
        leaf_cap = 1
        while leaf_cap < n:
            leaf_cap *= 2
        nodes = np.zeros(2 * leaf_cap)
        w = nb_inverse_weights(priorities, alpha_remove)
        for k in range(n):
            nodes[leaf_cap + k] = w[k]
        nb_tree_build(nodes, leaf_cap)
        out = np.empty(uniforms.shape[0], dtype=np.int64)
        for r in range(uniforms.shape[0]):
            j = _nb_find_one(nodes, leaf_cap, uniforms[r] * nodes[1])
            out[r] = j
            i = j + leaf_cap
            nodes[i] = 0.0
            i >>= 1
            while i >= 1:
                nodes[i] = nodes[2 * i] + nodes[2 * i + 1]
                i >>= 1
        return out

    NUMBA_KERNELS = {
        "tree_build": nb_tree_build,
        "tree_set": nb_tree_set,
        "tree_find": nb_tree_find,
        "inverse_weights": nb_inverse_weights,
        "psmm_draw": nb_psmm_draw,
    }
else:  # pragma: no cover
    NUMBA_KERNELS = {}

BACKENDS = {"numpy": NUMPY_KERNELS}
if NUMBA_KERNELS:
    BACKENDS["numba"] = NUMBA_KERNELS

BACKEND = _requested_backend()
_active = BACKENDS[BACKEND]

tree_build = _active["tree_build"]
tree_set = _active["tree_set"]
tree_find = _active["tree_find"]
inverse_weights = _active["inverse_weights"]
psmm_draw = _active["psmm_draw"]
