"""Syntax-based latent graph branch.

Dependency-label embeddings bias multi-head attention into edge weights,
a matrix-tree computation turns the head-averaged weights into edge and
root marginals of a distribution over arborescences, and the edge
marginals drive a GCN stack.
"""
import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T

log = logging.getLogger(__name__)

ROOT_LOGIT_CLAMP = 30.0
RIDGE = 1e-9
P_CLAMP = 1e-12
MTT_VARIANTS = ("row_replace", "literal")


@dataclass
class LatentTreeResult:
    laplacian: T.Node
    edge_marginals: T.Node  # [i, j] = P(i is the parent of j)
    root_probs: T.Node
    root_scores: T.Node


def embed_relations(rel, table):
    """``n x n x d_r`` relation embeddings; id 0 maps to the frozen zero row."""
    rel = np.asarray(rel, dtype=np.int64)
    n = rel.shape[0]
    rows = T.take_rows(table, rel.reshape(-1), frozen=(0,))
    return T.reshape(rows, (n, n, table.shape[1]))


def relation_table(params, n_labels, d_r):
    table = params.get("sylg.relation", (n_labels, d_r))
    table.value[0] = 0.0
    return table


def enhanced_weights(hc, m_r, params, n_heads):
    """Return ``(A_bar, A_a, A_r)``, each ``n_heads x n x n``."""
    d = hc.shape[-1]
    d_r = m_r.shape[-1]
    wq = params.get("sylg.attn.wq", (n_heads, d, d))
    wk = params.get("sylg.attn.wk", (n_heads, d, d))
    w_rel = params.get("sylg.rel_proj.w", (d_r, n_heads))
    b_rel = params.get("sylg.rel_proj.b", (n_heads,))
    scores = T.scale(T.matmul(T.matmul(hc, wq), T.transpose(T.matmul(hc, wk))), 1.0 / np.sqrt(d))
    a_a = T.softmax(scores)
    a_r = T.transpose(T.add(T.matmul(m_r, w_rel), b_rel), (2, 0, 1))
    return T.softmax(T.add(a_r, a_a)), a_a, a_r


def root_scores(hc, w_root, b_root):
    """Positive root scores ``exp(clamp(h_i . w + b, +-30))``, length n."""
    logits = T.add(T.matmul(hc, w_root), b_root)
    return T.reshape(T.exp(T.clamp(logits, -ROOT_LOGIT_CLAMP, ROOT_LOGIT_CLAMP)), (hc.shape[0],))


def _condition(mat):
    """1-norm condition number; inf when not invertible."""
    if not np.all(np.isfinite(mat)):
        return np.inf
    try:
        inv = np.linalg.inv(mat)
    except np.linalg.LinAlgError:
        return np.inf
    return np.abs(mat).sum(axis=0).max() * np.abs(inv).sum(axis=0).max()


def _safe_inverse(lap):
    mat = lap.value
    if not _condition(mat) <= 1e15:
        log.warning("Laplacian numerically singular; retrying with ridge %g", RIDGE)
        lap = T.add(lap, RIDGE * np.eye(mat.shape[0]))
        if not _condition(lap.value) <= 1e15:
            raise np.linalg.LinAlgError("Laplacian singular even after ridge")
    return T.inverse(lap)


def tree_marginals(weights, phi, variant="row_replace"):
    """Edge and root marginals over rooted spanning arborescences.

    ``weights[i, j]`` scores the edge i -> j (i parent) and ``phi[j]`` the
    choice of j as root. The diagonal of ``weights`` is ignored.

    ``row_replace`` replaces the first Laplacian row by the root scores and
    is exact. ``literal`` adds the root scores to the Laplacian diagonal
    while keeping the first-node guards of the marginal formula; it does not
    match the arborescence distribution and is kept for comparison.
    """
    weights, phi = T.as_node(weights), T.as_node(phi)
    n = weights.shape[-1]
    if np.any(weights.value < 0):
        raise ValueError("edge weights must be non-negative")
    if np.any(phi.value <= 0):
        raise ValueError("root scores must be positive")
    off_diag = 1.0 - np.eye(n)
    a = T.mul(weights, off_diag)
    col_sum = T.sum(a, axis=0, keepdims=True)  # incoming weight of each child
    lap = T.sub(T.mul(np.eye(n), col_sum), a)
    phi_row = T.reshape(phi, (1, n))
    if variant == "row_replace":
        first = np.zeros((n, 1))
        first[0] = 1.0
        lap = T.add(T.mul(lap, 1.0 - first), T.mul(first, phi_row))
    elif variant == "literal":
        lap = T.add(lap, T.mul(np.eye(n), phi_row))
    else:
        raise ValueError(f"unknown mtt variant {variant!r}")
    inv = _safe_inverse(lap)
    not_first = (np.arange(n) != 0).astype(np.float64)
    inv_diag = T.reshape(T.diagonal(inv), (1, n))
    edge = T.sub(
        T.mul(a, T.mul(inv_diag, not_first[None, :])),
        T.mul(a, T.mul(T.transpose(inv), not_first[:, None])),
    )
    roots = T.mul(phi, T.getitem(inv, (slice(None), 0)))
    return LatentTreeResult(lap, edge, roots, phi)


def root_loss(root_probs, target):
    """Summed BCE pushing root probability onto aspect tokens."""
    t = np.asarray(target, dtype=np.float64)
    p = T.clamp(root_probs, P_CLAMP, 1.0 - P_CLAMP)
    pos = T.mul(T.log(p), t)
    neg = T.mul(T.log(T.sub(1.0, p)), 1.0 - t)
    return T.scale(T.sum(T.add(pos, neg)), -1.0)


def sylg_forward(
    hc,
    rel,
    aspect_indicator,
    params,
    n_labels,
    gcn_layers=3,
    n_heads=4,
    d_r=None,
    variant="row_replace",
    adjacency_override=None,
):
    """Run the branch; returns ``(H, L_r, diagnostics)``."""
    if gcn_layers < 1:
        raise ValueError("gcn_layers must be >= 1")
    d = hc.shape[-1]
    d_r = d_r or d
    table = relation_table(params, n_labels, d_r)
    m_r = embed_relations(rel, table)
    a_bar, a_a, a_r = enhanced_weights(hc, m_r, params, n_heads)
    a_avg = T.mean(a_bar, axis=0)
    phi = root_scores(hc, params.get("sylg.root.w", (d, 1)), params.get("sylg.root.b", (1,)))
    tree = tree_marginals(a_avg, phi, variant=variant)
    l_r = root_loss(tree.root_probs, aspect_indicator)
    adj = tree.edge_marginals if adjacency_override is None else adjacency_override
    h = hc
    for k in range(gcn_layers):
        w = params.get(f"sylg.gcn{k}.w", (d, d))
        b = params.get(f"sylg.gcn{k}.b", (d,))
        h = T.graph_conv(adj, h, w, b)
    diagnostics = {"a_bar": a_bar, "a_a": a_a, "a_r": a_r, "tree": tree}
    return h, l_r, diagnostics
