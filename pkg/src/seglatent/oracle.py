"""Brute-force references for the tests.

Nothing here imports the differentiable modules; results come from direct
enumeration or closed-form arithmetic.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import kernels

MAX_NODES = 8


@dataclass
class Arborescence:
    root: int
    parent: tuple  # parent[root] == -1

    def is_valid(self):
        n = len(self.parent)
        for start in range(n):
            node, steps = start, 0
            while node != self.root:
                node = self.parent[node]
                steps += 1
                if node < 0 or steps > n:
                    return False
        return self.parent[self.root] == -1


def iter_arborescences(n):
    """Yield every rooted spanning arborescence of the complete digraph on n nodes."""
    for code in range(n**n):
        parent = [(code // n**i) % n for i in range(n)]
        roots = [i for i in range(n) if parent[i] == i]
        if len(roots) != 1:
            continue
        root = roots[0]
        parent[root] = -1
        tree = Arborescence(root, tuple(parent))
        if tree.is_valid():
            yield tree


def enumerate_arborescences(edge_w, root_w, backend=None):
    """Partition function, edge marginals and root probabilities by enumeration.

    A tree rooted at r weighs ``root_w[r] * prod(edge_w[parent[j], j])``.
    """
    edge_w = np.asarray(edge_w, dtype=np.float64)
    root_w = np.asarray(root_w, dtype=np.float64)
    n = edge_w.shape[0]
    if edge_w.shape != (n, n) or root_w.shape != (n,):
        raise ValueError("edge_w must be n x n and root_w length n")
    if n > MAX_NODES:
        raise ValueError(f"enumeration is capped at {MAX_NODES} nodes")
    if np.any(edge_w < 0) or np.any(root_w < 0):
        raise ValueError("weights must be non-negative")
    z, edge_acc, root_acc = kernels.arborescence_sums(edge_w, root_w, backend=backend)
    if z <= 0:
        raise ValueError("all arborescences have zero weight")
    return z, edge_acc / z, root_acc / z


def hard_segment_band(lp, rp):
    """``band[i, j] = 1`` iff ``lp[i] <= j <= rp[i]``."""
    lp = np.asarray(lp, dtype=np.int64)
    rp = np.asarray(rp, dtype=np.int64)
    n = lp.shape[0]
    idx = np.arange(n)
    if rp.shape != (n,) or np.any(lp < 0) or np.any(lp > idx) or np.any(rp < idx) or np.any(rp >= n):
        raise ValueError("need 0 <= lp[i] <= i <= rp[i] < n")
    return kernels.band(lp, rp)


MICRO_CASES = {
    "ce_uniform_3": lambda: math.log(3.0),
    "bce_sigmoid0_target1": lambda: -math.log(1.0 / (1.0 + math.exp(0.0))),
    "bce_sigmoid2_target1": lambda: math.log1p(math.exp(-2.0)),
    "root_bce_n2": lambda: -math.log(0.5) - math.log(1.0 - 0.5),
    "ce_p09": lambda: -math.log(0.9),
    "total_loss_1_05_02": lambda: 1.0 + 0.1 * 0.5 + 0.5 * 0.2,
}


def micro_losses(case):
    if case not in MICRO_CASES:
        raise KeyError(f"unknown micro-loss case {case!r}; known: {sorted(MICRO_CASES)}")
    return MICRO_CASES[case]()
