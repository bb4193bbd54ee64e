"""Segment-aware semantic graph branch.

Learned left/right boundary distributions give a soft segment mask per
token; the mask modulates multi-head attention whose heads are supervised
by constituency segments, and the heads drive a GCN stack.
"""
from functools import lru_cache

import numpy as np

from . import tensor as T


def causal_mask(n, side="left"):
    """``n x n`` matrix with 1 on admissible boundary cells and -inf elsewhere.

    ``left`` admits j <= i, ``right`` admits j >= i.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    allowed = np.tril(np.ones((n, n), dtype=bool))
    if side == "right":
        allowed = allowed.T
    elif side != "left":
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    return np.where(allowed, 1.0, -np.inf)


@lru_cache(maxsize=64)
def _additive_causal(n, side):
    mask = np.where(causal_mask(n, side) == 1.0, 0.0, -np.inf)
    mask.flags.writeable = False
    return mask


def boundary_attention(hc, params, d=None):
    """Left and right boundary distributions (each ``n x n``, rows sum to 1)."""
    n, width = hc.shape
    d = d or width
    wlq = params.get("sesg.boundary.wlq", (width, width))
    wlk = params.get("sesg.boundary.wlk", (width, width))
    wrq = params.get("sesg.boundary.wrq", (width, width))
    wrk = params.get("sesg.boundary.wrk", (width, width))
    inv = 1.0 / np.sqrt(d)
    left = T.scale(T.matmul(T.matmul(hc, wlq), T.transpose(T.matmul(hc, wlk))), inv)
    right = T.scale(T.matmul(T.matmul(hc, wrq), T.transpose(T.matmul(hc, wrk))), inv)
    phi_l = T.masked_softmax(left, _additive_causal(n, "left"))
    phi_r = T.masked_softmax(right, _additive_causal(n, "right"))
    return phi_l, phi_r


def segment_mask(phi_l, phi_r):
    """Soft segment mask: P(left boundary <= j) * P(right boundary >= j)."""
    n = phi_l.shape[-1]
    upper = np.triu(np.ones((n, n)))
    return T.mul(T.matmul(phi_l, upper), T.matmul(phi_r, upper.T))


def segment_attention(hc, m_s, params, heads, logit_mode="multiply", mask_floor=1e-6):
    """Segment-modulated attention for ``heads`` heads.

    Returns ``(attention, logits)`` with shapes ``heads x n x n``; ``logits``
    are the pre-softmax masked scores. ``logit_mode="mask"`` also sends
    cells with ``m_s < mask_floor`` to -inf.
    """
    if heads < 1:
        raise ValueError("heads must be >= 1")
    d = hc.shape[-1]
    wq = params.get("sesg.attn.wq", (heads, d, d))
    wk = params.get("sesg.attn.wk", (heads, d, d))
    q = T.matmul(hc, wq)
    k = T.matmul(hc, wk)
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(d))
    logits = T.mul(scores, m_s)
    if logit_mode == "multiply":
        att = T.softmax(logits)
    elif logit_mode == "mask":
        keep = T.as_node(m_s).value >= mask_floor
        att = T.masked_softmax(logits, np.broadcast_to(np.where(keep, 0.0, -np.inf), logits.shape))
    else:
        raise ValueError(f"unknown logit_mode {logit_mode!r}")
    return att, logits


def segment_loss(att, y_seg):
    """Mean BCE of sigmoid(att) against the segment signal."""
    y_seg = np.asarray(y_seg, dtype=np.float64)
    if T.as_node(att).shape != y_seg.shape:
        raise ValueError(f"attention {T.as_node(att).shape} vs signal {y_seg.shape}")
    return T.bce_with_logits(att, y_seg)


def sesg_forward(
    hc,
    params,
    y_seg,
    gcn_layers=3,
    adjacency="per_layer",
    logit_mode="multiply",
    supervise_presoftmax=False,
    adjacency_override=None,
):
    """Run the branch; returns ``(H, L_seg, diagnostics)``.

    GCN layer k uses head ``k mod heads`` (``per_layer``) or the head mean
    (``head_mean``). ``adjacency_override`` replaces the learned adjacency
    in every layer and exists for tests.
    """
    if gcn_layers < 1:
        raise ValueError("gcn_layers must be >= 1")
    heads = y_seg.shape[0]
    d = hc.shape[-1]
    phi_l, phi_r = boundary_attention(hc, params)
    m_s = segment_mask(phi_l, phi_r)
    att, logits = segment_attention(hc, m_s, params, heads, logit_mode=logit_mode)
    l_seg = segment_loss(logits if supervise_presoftmax else att, y_seg)
    mean_att = T.mean(att, axis=0) if adjacency == "head_mean" else None
    if adjacency not in ("per_layer", "head_mean"):
        raise ValueError(f"unknown adjacency mode {adjacency!r}")
    h = hc
    for k in range(gcn_layers):
        if adjacency_override is not None:
            adj = adjacency_override
        elif mean_att is not None:
            adj = mean_att
        else:
            adj = T.getitem(att, k % heads)
        w = params.get(f"sesg.gcn{k}.w", (d, d))
        b = params.get(f"sesg.gcn{k}.b", (d,))
        h = T.graph_conv(adj, h, w, b)
    diagnostics = {"phi_l": phi_l, "phi_r": phi_r, "m_s": m_s, "att": att}
    return h, l_seg, diagnostics
