"""Brute-force kernels with a numba path and a vectorised numpy path.

The numba path is used when ``seglatent._accel.HAS_NUMBA`` is true; pass
``backend="numpy"`` or ``backend="numba"`` to pick one explicitly.
"""
import numpy as np

from ._accel import HAS_NUMBA, njit

# parent vectors are materialised in chunks of this many rows on the numpy path
_CHUNK = 1 << 18


@njit
def _arborescence_sums_numba(edge_w, root_w):
    n = edge_w.shape[0]
    total = 1
    for _ in range(n):
        total *= n
    parent = np.zeros(n, dtype=np.int64)
    z = 0.0
    edge_acc = np.zeros((n, n))
    root_acc = np.zeros(n)
    for code in range(total):
        c = code
        roots = 0
        root = -1
        for i in range(n):
            parent[i] = c % n
            c //= n
            if parent[i] == i:
                roots += 1
                root = i
        if roots != 1:
            continue
        ok = True
        for i in range(n):
            cur = i
            steps = 0
            while cur != root and steps < n:
                cur = parent[cur]
                steps += 1
            if cur != root:
                ok = False
                break
        if not ok:
            continue
        w = root_w[root]
        for i in range(n):
            if i != root:
                w *= edge_w[parent[i], i]
        z += w
        root_acc[root] += w
        for i in range(n):
            if i != root:
                edge_acc[parent[i], i] += w
    return z, edge_acc, root_acc


def _arborescence_sums_numpy(edge_w, root_w):
    n = edge_w.shape[0]
    total = n**n
    cols = np.arange(n)
    radix = n ** cols
    z = 0.0
    edge_acc = np.zeros((n, n))
    root_acc = np.zeros(n)
    for start in range(0, total, _CHUNK):
        codes = np.arange(start, min(start + _CHUNK, total), dtype=np.int64)
        parent = (codes[:, None] // radix) % n
        is_root = parent == cols
        parent = parent[is_root.sum(axis=1) == 1]
        if parent.size == 0:
            continue
        rows = np.arange(parent.shape[0])[:, None]
        # pointer jumping: after n hops every node of a tree sits on the root
        cur = np.broadcast_to(cols, parent.shape).copy()
        for _ in range(n):
            cur = parent[rows, cur]
        parent = parent[(parent[rows, cur] == cur).all(axis=1)]
        if parent.size == 0:
            continue
        root = np.argmax(parent == cols, axis=1)
        factors = edge_w[parent, cols]
        factors[np.arange(parent.shape[0]), root] = root_w[root]
        w = factors.prod(axis=1)
        z += w.sum()
        np.add.at(root_acc, root, w)
        child_mask = cols != root[:, None]
        r_idx, c_idx = np.nonzero(child_mask)
        np.add.at(edge_acc, (parent[r_idx, c_idx], c_idx), w[r_idx])
    return z, edge_acc, root_acc


def arborescence_sums(edge_w, root_w, backend=None):
    """Unnormalised totals over all rooted spanning arborescences.

    Returns ``(Z, edge_acc, root_acc)`` where ``edge_acc[i, j]`` sums the
    weights of trees in which ``i`` is the parent of ``j``.
    """
    edge_w = np.ascontiguousarray(edge_w, dtype=np.float64)
    root_w = np.ascontiguousarray(root_w, dtype=np.float64)
    backend = backend or ("numba" if HAS_NUMBA else "numpy")
    if backend == "numba":
        z, edge_acc, root_acc = _arborescence_sums_numba(edge_w, root_w)
    elif backend == "numpy":
        z, edge_acc, root_acc = _arborescence_sums_numpy(edge_w, root_w)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return float(z), edge_acc, root_acc


@njit
def _band_numba(lp, rp):
    n = lp.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(lp[i], rp[i] + 1):
            out[i, j] = 1.0
    return out


def _band_numpy(lp, rp):
    j = np.arange(lp.shape[0])
    return ((lp[:, None] <= j) & (j <= rp[:, None])).astype(np.float64)


def band(lp, rp, backend=None):
    lp = np.ascontiguousarray(lp, dtype=np.int64)
    rp = np.ascontiguousarray(rp, dtype=np.int64)
    backend = backend or ("numba" if HAS_NUMBA else "numpy")
    if backend == "numba":
        return _band_numba(lp, rp)
    if backend == "numpy":
        return _band_numpy(lp, rp)
    raise ValueError(f"unknown backend {backend!r}")
