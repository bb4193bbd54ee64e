"""Dense float64 reverse-mode differentiation.

A ``Node`` wraps an ndarray value. Operations build new nodes holding a
vector-Jacobian closure; ``backward`` walks the graph once in reverse
topological order and accumulates gradients into the leaf parameters.
"""
import math
import zlib
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

NEG_INF = -1e30  # additive stand-in for -inf inside softmax

_grad_enabled = True


@contextmanager
def no_grad():
    """Build values only; results carry no graph and cannot be backpropagated."""
    global _grad_enabled
    previous, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = previous


class Node:
    __slots__ = ("value", "grad", "parents", "vjp", "requires_grad", "name")

    def __init__(self, value, parents=(), vjp=None, requires_grad=False, name=None):
        if type(value) is not np.ndarray or value.dtype != np.float64:
            value = np.asarray(value, dtype=np.float64)
        self.value = value
        self.grad = None
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)


def as_node(x):
    return x if isinstance(x, Node) else Node(x)


def _make(value, parents, vjp):
    """Create a result node; the closure is kept only if a parent needs it."""
    if not _grad_enabled:
        return Node(value)
    for p in parents:
        if p.requires_grad:
            return Node(value, parents, vjp, requires_grad=True)
    return Node(value)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_node(a), as_node(b)
    return _make(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a, b = as_node(a), as_node(b)
    return _make(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
    )


def mul(a, b):
    a, b = as_node(a), as_node(b)
    return _make(
        a.value * b.value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def scale(a, c):
    a = as_node(a)
    c = float(c)
    return _make(a.value * c, (a,), lambda g: (g * c,))


def relu(a):
    a = as_node(a)
    keep = a.value > 0
    return _make(np.where(keep, a.value, 0.0), (a,), lambda g: (g * keep,))


def sigmoid(a):
    a = as_node(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a):
    a = as_node(a)
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_node(a)
    return _make(np.log(a.value), (a,), lambda g: (g / a.value,))


def clamp(a, lo, hi):
    """Clip to [lo, hi]; gradient is zero where the clip is active."""
    a = as_node(a)
    inside = (a.value >= lo) & (a.value <= hi)
    return _make(np.clip(a.value, lo, hi), (a,), lambda g: (g * inside,))


# ----------------------------------------------------------------- structural


def matmul(a, b):
    a, b = as_node(a), as_node(b)

    def vjp(g):
        # 1-d operands are promoted the same way numpy does in the forward pass
        av = a.value[None, :] if a.value.ndim == 1 else a.value
        bv = b.value[:, None] if b.value.ndim == 1 else b.value
        if a.value.ndim == 1:
            g = np.expand_dims(g, -2)
        if b.value.ndim == 1:
            g = np.expand_dims(g, -1)
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        if a.value.ndim == 1:
            ga = ga.reshape(ga.shape[:-2] + (-1,))
        if b.value.ndim == 1:
            gb = gb.reshape(gb.shape[:-2] + (-1,))
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.value @ b.value, (a, b), vjp)


def transpose(a, axes=None):
    """Swap the last two axes, or permute by ``axes``."""
    a = as_node(a)
    if axes is None:
        return _make(np.swapaxes(a.value, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))
    inverse = tuple(sorted(range(len(axes)), key=axes.__getitem__))
    return _make(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inverse),))


def reshape(a, shape):
    a = as_node(a)
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a, index):
    a = as_node(a)

    def vjp(g):
        out = np.zeros_like(a.value)
        np.add.at(out, index, g)
        return (out,)

    return _make(a.value[index], (a,), vjp)


def concat(nodes, axis=-1):
    nodes = [as_node(x) for x in nodes]
    sizes = [x.shape[axis] for x in nodes]
    cuts = np.cumsum(sizes)[:-1]
    return _make(
        np.concatenate([x.value for x in nodes], axis=axis),
        tuple(nodes),
        lambda g: tuple(np.split(g, cuts, axis=axis)),
    )


def stack(nodes, axis=0):
    nodes = [as_node(x) for x in nodes]

    def vjp(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(np.stack([x.value for x in nodes], axis=axis), tuple(nodes), vjp)


def diagonal(a):
    """Main diagonal of the last two axes."""
    a = as_node(a)
    n = a.shape[-1]

    def vjp(g):
        out = np.zeros_like(a.value)
        idx = np.arange(n)
        out[..., idx, idx] = g
        return (out,)

    return _make(np.diagonal(a.value, axis1=-2, axis2=-1).copy(), (a,), vjp)


def sum(a, axis=None, keepdims=False):  # noqa: A001
    a = as_node(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), vjp)


def mean(a, axis=None, keepdims=False):
    a = as_node(a)
    count = a.value.size if axis is None else a.shape[axis]
    out = a.value.sum(axis=axis, keepdims=keepdims) / count

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _make(out, (a,), vjp)


def take_rows(table, ids, frozen=()):
    """Gather rows of ``table``; rows listed in ``frozen`` receive no gradient."""
    table = as_node(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"row id out of range for table with {table.shape[0]} rows")

    def vjp(g):
        out = np.zeros_like(table.value)
        np.add.at(out, ids, g)
        for row in frozen:
            out[row] = 0.0
        return (out,)

    return _make(table.value[ids], (table,), vjp)


def inverse(a):
    a = as_node(a)
    inv = np.linalg.inv(a.value)
    return _make(inv, (a,), lambda g: (-inv.T @ g @ inv.T,))


# ------------------------------------------------------------------ fused ops


def softmax(a, axis=-1):
    a = as_node(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), vjp)


def masked_softmax(scores, mask):
    """Row softmax with an additive mask of 0 (keep) and -inf (drop).

    Masked positions come out exactly zero. A row with no admissible
    position raises ``ValueError`` naming the row.
    """
    scores = as_node(scores)
    mask = np.asarray(mask.value if isinstance(mask, Node) else mask, dtype=np.float64)
    killed = np.isneginf(mask) | (mask <= NEG_INF)
    if not np.all((mask == 0) | killed):
        raise ValueError("mask entries must be 0 or -inf")
    dead = killed.all(axis=-1)
    if dead.any():
        row = tuple(int(i) for i in np.argwhere(dead)[0])
        raise ValueError(f"masked_softmax: row {row} is fully masked")
    logits = np.where(killed, NEG_INF, scores.value)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    e[killed] = 0.0
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (scores,), vjp)


def layer_norm(x, gain, offset, eps=1e-5):
    """Normalise the last axis to zero mean / unit variance, then affine."""
    x, gain, offset = as_node(x), as_node(gain), as_node(offset)
    d = x.shape[-1]
    centered = x.value - x.value.sum(axis=-1, keepdims=True) / d
    var = (centered * centered).sum(axis=-1, keepdims=True) / d
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std

    def vjp(g):
        gx_hat = g * gain.value
        gx = (
            inv_std
            / d
            * (d * gx_hat - gx_hat.sum(axis=-1, keepdims=True) - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True))
        )
        return (
            gx,
            _unbroadcast(g * xhat, gain.shape),
            _unbroadcast(g, offset.shape),
        )

    return _make(xhat * gain.value + offset.value, (x, gain, offset), vjp)


def bce_with_logits(logits, target):
    """Mean binary cross-entropy of sigmoid(logits) against 0/1 targets."""
    logits = as_node(logits)
    y = np.asarray(target, dtype=np.float64)
    x = logits.value
    # log(1 + e^x) - y x, written to stay finite for large |x|
    loss = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    p = 0.5 * (1.0 + np.tanh(0.5 * x))
    count = x.size
    return _make(loss.mean(), (logits,), lambda g: (g * (p - y) / count,))


# ------------------------------------------------------------------ backward


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = []
    seen = set()
    stack_ = [(loss, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack_.append((parent, False))
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------- parameters


class ParamStore:
    """Named trainable leaves with seeded, order-independent initialisation.

    Each parameter draws from its own stream keyed by ``(seed, crc32(name))``
    so adding or removing a parameter never changes another one's values.
    """

    def __init__(self, seed=0, init_range=0.1):
        self.seed = int(seed)
        self.init_range = float(init_range)
        self._params = {}

    def get(self, name, shape, init="uniform"):
        node = self._params.get(name)
        if node is not None:
            if node.shape != tuple(shape):
                raise ValueError(f"parameter {name!r} exists with shape {node.shape}, requested {tuple(shape)}")
            return node
        if init == "uniform":
            rng = np.random.default_rng([self.seed, zlib.crc32(name.encode())])
            value = rng.uniform(-self.init_range, self.init_range, size=shape)
        elif init == "zeros":
            value = np.zeros(shape)
        elif init == "ones":
            value = np.ones(shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        node = Node(value, requires_grad=True, name=name)
        self._params[name] = node
        return node

    def add(self, name, value):
        node = Node(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = node
        return node

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(sorted(self._params))

    def __len__(self):
        return len(self._params)

    def items(self):
        return [(name, self._params[name]) for name in sorted(self._params)]

    def zero_grad(self):
        for node in self._params.values():
            node.grad = None

    def grads(self):
        return {name: (np.zeros_like(p.value) if p.grad is None else p.grad) for name, p in self.items()}

    def state(self):
        return {name: p.value.copy() for name, p in self.items()}

    def load_state(self, state):
        for name, value in state.items():
            value = np.asarray(value, dtype=np.float64)
            if name in self._params:
                if self._params[name].shape != value.shape:
                    raise ValueError(f"shape mismatch for {name!r}")
                self._params[name].value = value.copy()
            else:
                self.add(name, value)


# ------------------------------------------------------------------- layers


def graph_conv(adj, h_prev, weight, bias, activation=relu):
    """One graph-convolution layer: ``activation(adj @ h_prev @ weight + bias)``."""
    adj, h_prev = as_node(adj), as_node(h_prev)
    n, d_in = h_prev.shape[-2], h_prev.shape[-1]
    if adj.shape[-2:] != (n, n):
        raise ValueError(f"adjacency shape {adj.shape} does not match {n} nodes")
    if weight.shape[0] != d_in or bias.shape[-1] != weight.shape[1]:
        raise ValueError(f"weight {weight.shape} / bias {bias.shape} do not fit input width {d_in}")
    out = add(matmul(matmul(adj, h_prev), weight), bias)
    return activation(out) if activation is not None else out


# ------------------------------------------------------------- gradient check


@dataclass
class GradCheckReport:
    errors: dict = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def passed(self):
        return all(err <= self.tol for err in self.errors.values())

    @property
    def worst(self):
        if not self.errors:
            return None, 0.0
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]


def grad_check(loss_fn, params, h=1e-5, tol=1e-4, names=None, abs_floor=1e-5):
    """Compare analytic gradients with central differences.

    ``loss_fn()`` must rebuild the loss from ``params`` on every call. The
    per-coordinate error is ``|a - n| / max(|a|, |n|, abs_floor)``, so
    gradients far below ``abs_floor`` are judged on absolute error.
    """
    if h <= 0:
        raise ValueError("step h must be positive")

    def evaluate():
        with no_grad():
            value = float(loss_fn().value)
        if not math.isfinite(value):
            raise FloatingPointError("loss is not finite")
        return value

    params.zero_grad()
    loss = loss_fn()
    if not math.isfinite(float(loss.value)):
        raise FloatingPointError("loss is not finite")
    backward(loss)
    analytic = params.grads()
    report = GradCheckReport(tol=tol)
    for name in names or list(params):
        node = params[name]
        flat = node.value.reshape(-1)
        numeric = np.zeros_like(flat)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = evaluate()
            flat[k] = orig - h
            down = evaluate()
            flat[k] = orig
            numeric[k] = (up - down) / (2 * h)
        a = analytic[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), abs_floor)
        report.errors[name] = float(np.max(np.abs(a - numeric) / denom)) if flat.size else 0.0
    params.zero_grad()
    return report
