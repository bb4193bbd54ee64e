"""Optimisation loop, evaluation and checkpoints."""
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .data import LabelVocab, generate_synthetic, load_dataset
from .encoder import WordVocab
from .model import Config, Model, NumericalError, compute_metrics

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SGLCKPT\0"
CHECKPOINT_VERSION = 1


class Adam:
    """Adam with L2 regularisation folded into the gradient."""

    def __init__(self, params, lr=1e-3, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name, node in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            if self.weight_decay:
                g = g + self.weight_decay * node.value
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            node.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        # the relation table's unlinked row stays at zero
        if "sylg.relation" in self.params:
            self.params["sylg.relation"].value[0] = 0.0


# ----------------------------------------------------------------- datasets


@dataclass
class Splits:
    train: list
    dev: list
    eval: list


def load_splits(config):
    """Files named in the config, or synthetic splits from ``data_seed``."""
    if config.train_path:
        train = load_dataset(config.train_path)
        dev = load_dataset(config.dev_path) if config.dev_path else []
        evaluation = load_dataset(config.eval_path) if config.eval_path else dev
        return Splits(train, dev, evaluation)

    def gen(offset, size):
        return generate_synthetic(
            config.data_seed + offset, size, min_clauses=config.min_clauses, max_clauses=config.max_clauses
        )

    return Splits(gen(0, config.train_size), gen(1000, config.dev_size), gen(2000, config.eval_size))


def build_model(config, train_records, params=None):
    return Model(config, WordVocab.from_records(train_records), LabelVocab.from_records(train_records), params)


# --------------------------------------------------------------- evaluation


def predict_all(model, examples):
    return [model.predict(ex) for ex in examples]


def evaluate(model, records):
    """Metrics of ``model`` on ``records`` (a list of records or examples)."""
    if not records:
        raise ValueError("cannot evaluate on an empty dataset")
    examples = [r if hasattr(r, "ids") else model.featurize(r) for r in records]
    pred = predict_all(model, examples)
    return compute_metrics([ex.label for ex in examples], pred)


# ------------------------------------------------------------------ training


@dataclass
class EpochLog:
    epoch: int
    loss: float
    l_c: float
    l_seg: float
    l_r: float
    train_acc: float
    dev_acc: float
    dev_f1: float

    def line(self):
        return (
            f"epoch={self.epoch} loss={self.loss:.10f} l_c={self.l_c:.10f} l_seg={self.l_seg:.10f} "
            f"l_r={self.l_r:.10f} train_acc={self.train_acc:.6f} dev_acc={self.dev_acc:.6f} dev_f1={self.dev_f1:.6f}"
        )


@dataclass
class TrainResult:
    model: Model
    best_epoch: int
    best_state: dict
    history: list = field(default_factory=list)

    def log_text(self):
        lines = [h.line() for h in self.history]
        lines.append(f"best_epoch={self.best_epoch}")
        return "\n".join(lines) + "\n"


def train(config, train_set, dev_set=None, model=None):
    """Train with Adam over shuffled mini-batches.

    The returned model holds the checkpoint with the best dev accuracy
    (ties: higher macro-F1, then the earlier epoch). Without a dev set the
    last epoch is kept. Training stops early once train accuracy reaches
    ``config.stop_train_acc``.
    """
    if not train_set:
        raise ValueError("training set is empty")
    model = model or build_model(config, train_set)
    train_ex = [model.featurize(r) for r in train_set]
    dev_ex = [model.featurize(r) for r in dev_set] if dev_set else []
    # create every parameter before the optimiser sees the store
    model.forward(train_ex[0])
    opt = Adam(model.params, lr=config.lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    result = TrainResult(model, 0, model.params.state())
    best_key = None
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_ex))
        sums = np.zeros(4)
        for start in range(0, len(order), config.batch_size):
            batch = [train_ex[i] for i in order[start : start + config.batch_size]]
            model.params.zero_grad()
            for ex in batch:
                try:
                    total, out, l_c = model.loss(ex)
                except NumericalError as exc:
                    raise NumericalError(f"epoch {epoch}, step {step}: {exc}") from None
                value = float(total.value)
                if not math.isfinite(value):
                    raise NumericalError(f"epoch {epoch}, step {step}: non-finite loss")
                T.backward(T.scale(total, 1.0 / len(batch)))
                sums += [value, float(l_c.value), float(out.l_seg.value), float(out.l_r.value)]
            step += 1
            grads = {name: p.grad for name, p in model.params.items() if p.grad is not None}
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NumericalError(f"epoch {epoch}, step {step}: non-finite gradient")
            opt.step(grads)
        sums /= len(train_ex)
        train_acc = evaluate(model, train_ex).accuracy
        dev_m = evaluate(model, dev_ex) if dev_ex else None
        entry = EpochLog(
            epoch, *sums, train_acc, dev_m.accuracy if dev_m else float("nan"), dev_m.macro_f1 if dev_m else float("nan")
        )
        result.history.append(entry)
        log.info(entry.line())
        key = (dev_m.accuracy, dev_m.macro_f1) if dev_m else (epoch, 0.0)
        if best_key is None or key > best_key:
            best_key = key
            result.best_epoch = epoch
            result.best_state = model.params.state()
        if train_acc >= config.stop_train_acc:
            break
    model.params.load_state(result.best_state)
    return result


# ---------------------------------------------------------------- checkpoint


def save_checkpoint(model, path, extra=None):
    """Binary container: magic, version, JSON metadata, then named float64 arrays."""
    meta = {
        "config": asdict(model.config),
        "words": model.word_vocab.words,
        "labels": model.label_vocab.labels,
        "extra": extra or {},
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    items = model.params.items()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(items)))
        for name, node in items:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", node.value.ndim))
            fh.write(struct.pack(f"<{node.value.ndim}I", *node.value.shape))
            fh.write(np.ascontiguousarray(node.value, dtype="<f8").tobytes())


def _read(fh, fmt):
    size = struct.calcsize(fmt)
    data = fh.read(size)
    if len(data) != size:
        raise ValueError("truncated checkpoint")
    return struct.unpack(fmt, data)


def load_checkpoint(path):
    """Rebuild the model stored at ``path``; returns ``(model, extra)``."""
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint")
        version, meta_len = _read(fh, "<II")
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        (count,) = _read(fh, "<I")
        state = {}
        for _ in range(count):
            (name_len,) = _read(fh, "<H")
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = _read(fh, "<B")
            shape = _read(fh, f"<{ndim}I") if ndim else ()
            size = int(np.prod(shape)) if shape else 1
            data = fh.read(8 * size)
            if len(data) != 8 * size:
                raise ValueError("truncated checkpoint")
            state[name] = np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)
    config = Config(**meta["config"]).validate()
    words = WordVocab(meta["words"][1:])
    labels = LabelVocab(meta["labels"][1:])
    model = Model(config, words, labels, T.ParamStore(config.seed, config.init_range))
    model.params.load_state(state)
    return model, meta.get("extra", {})
