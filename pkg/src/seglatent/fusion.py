"""Three-stream aggregation of the two graph branches, plus simple baselines."""
import numpy as np

from . import tensor as T

FUSION_MODES = ("adaptive", "concat", "sum", "gate")
LN_EPS = 1e-5


def _linear(x, params, prefix, d_in, d_out):
    w = params.get(f"{prefix}.w", (d_in, d_out))
    b = params.get(f"{prefix}.b", (d_out,))
    return T.add(T.matmul(x, w), b)


def _layer_norm(x, params, prefix):
    d = x.shape[-1]
    gain = params.get(f"{prefix}.gain", (d,), init="ones")
    offset = params.get(f"{prefix}.offset", (d,), init="zeros")
    return T.layer_norm(x, gain, offset, eps=LN_EPS)


def multi_head_attention(q_src, kv_src, params, prefix, heads):
    n_q, d = q_src.shape
    n_kv = kv_src.shape[0]
    if d % heads:
        raise ValueError(f"width {d} not divisible by {heads} heads")
    dh = d // heads

    def split(x, name, rows):
        proj = T.matmul(x, params.get(f"{prefix}.{name}", (d, d)))
        return T.transpose(T.reshape(proj, (rows, heads, dh)), (1, 0, 2))

    q = split(q_src, "wq", n_q)
    k = split(kv_src, "wk", n_kv)
    v = split(kv_src, "wv", n_kv)
    att = T.softmax(T.scale(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(dh)))
    mixed = T.reshape(T.transpose(T.matmul(att, v), (1, 0, 2)), (n_q, d))
    return T.matmul(mixed, params.get(f"{prefix}.wo", (d, d)))


def feed_forward(x, params, prefix, hidden=None):
    d = x.shape[-1]
    hidden = hidden or 2 * d
    inner = T.relu(_linear(x, params, f"{prefix}.ffn1", d, hidden))
    return _linear(inner, params, f"{prefix}.ffn2", hidden, d)


def cross_stream(q_src, kv_src, params, prefix, heads=2):
    """Transformer block whose queries come from one branch and keys/values from the other."""
    o = _layer_norm(T.add(multi_head_attention(q_src, kv_src, params, f"{prefix}.mh", heads), q_src), params, f"{prefix}.ln1")
    return _layer_norm(T.add(feed_forward(o, params, prefix), o), params, f"{prefix}.ln2")


def balance_channel(h_ses, h_syl, params, prefix="fusion.balance"):
    """``relu([H_ses, H_syl] W + b)`` mapping 2d -> d."""
    d = h_ses.shape[-1]
    return T.relu(_linear(T.concat([h_ses, h_syl], axis=-1), params, prefix, 2 * d, d))


def _pool(x, mode):
    if mode == "mean":
        return T.mean(x, axis=0)
    if mode == "cls-first-row":
        return T.getitem(x, 0)
    raise ValueError(f"unknown pool mode {mode!r}")


def stream_weights(streams, w, b, pool="mean"):
    """Softmax over per-stream scores ``relu(w . pool(X_i) + b)``."""
    scores = [T.relu(T.add(T.matmul(_pool(x, pool), w), b)) for x in streams]
    return T.softmax(T.reshape(T.concat(scores, axis=0), (len(streams),)))


def fuse(streams, alpha):
    """Concatenate the streams along features, each scaled by its weight."""
    return T.concat([T.mul(x, T.getitem(alpha, i)) for i, x in enumerate(streams)], axis=-1)


def adaptive_fusion(h_ses, h_syl, params, heads=2, pool="mean"):
    """Returns ``(H_F, diagnostics)`` with ``H_F`` of width 3d."""
    d = h_ses.shape[-1]
    sem = cross_stream(h_ses, h_syl, params, "fusion.sem", heads)
    syn = cross_stream(h_syl, h_ses, params, "fusion.syn", heads)
    com = balance_channel(h_ses, h_syl, params)
    w = params.get("fusion.score.w", (d, 1))
    b = params.get("fusion.score.b", (1,))
    alpha = stream_weights([sem, syn, com], w, b, pool=pool)
    return fuse([sem, syn, com], alpha), {"alpha": alpha, "sem": sem, "syn": syn, "com": com}


def fuse_alternative(mode, h_ses, h_syl, params):
    """Baseline fusions: ``concat`` (2d), ``sum`` (d) or ``gate`` (d)."""
    if mode == "concat":
        return T.concat([h_ses, h_syl], axis=-1)
    if mode == "sum":
        return T.add(h_ses, h_syl)
    if mode == "gate":
        d = h_ses.shape[-1]
        g = T.sigmoid(_linear(T.concat([h_ses, h_syl], axis=-1), params, "fusion.gate", 2 * d, d))
        return T.add(T.mul(g, h_ses), T.mul(T.sub(1.0, g), h_syl))
    raise ValueError(f"unknown fusion mode {mode!r}")


def output_width(mode, d):
    return {"adaptive": 3 * d, "concat": 2 * d, "sum": d, "gate": d}[mode]
