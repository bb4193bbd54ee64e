"""Model assembly, objective and metrics."""
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import POLARITIES, build_relation_matrix, build_segment_signal, parse_bracketed_tree
from .encoder import encode
from .fusion import FUSION_MODES, adaptive_fusion, fuse_alternative, output_width
from .sesg import sesg_forward
from .sylg import MTT_VARIANTS, sylg_forward

ABLATIONS = ("full", "no_sesg", "no_sylg", "no_fusion")
CE_CLAMP = 1e-12


class ConfigError(ValueError):
    pass


class NumericalError(FloatingPointError):
    pass


@dataclass
class Config:
    # architecture
    d: int = 32
    l: int = 4  # constituent layers = segment attention heads  # noqa: E741
    gcn_layers: int = 3
    n_head_sylg: int = 4
    d_rel: int = 32
    n_max: int = 32
    encoder_mixing: bool = False
    aspect_marker: bool = False  # aspect-conditioned encoder input
    cross_heads: int = 2
    fusion_mode: str = "adaptive"
    ablation: str = "full"
    mtt_variant: str = "row_replace"
    supervise_presoftmax: bool = False
    segment_logits: str = "multiply"
    adjacency: str = "per_layer"
    pool: str = "mean"
    init_range: float = 0.1
    # objective and optimiser
    lambda1: float = 0.1
    lambda2: float = 0.5
    lr: float = 1e-3
    weight_decay: float = 1e-5
    batch_size: int = 16
    epochs: int = 20
    seed: int = 0
    stop_train_acc: float = 1.01
    # data: files when given, otherwise the synthetic generator
    train_path: str = ""
    dev_path: str = ""
    eval_path: str = ""
    data_seed: int = 0
    train_size: int = 200
    dev_size: int = 100
    eval_size: int = 100
    min_clauses: int = 1
    max_clauses: int = 3
    ablation_seeds: str = "0,1,2"

    def validate(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("lambda1 and lambda2 must be non-negative")
        if self.d < 2 or self.d % 2:
            raise ConfigError("d must be even and positive")
        if self.d % self.cross_heads:
            raise ConfigError("d must be divisible by cross_heads")
        if min(self.l, self.gcn_layers, self.n_head_sylg, self.batch_size, self.epochs) < 1:
            raise ConfigError("l, gcn_layers, n_head_sylg, batch_size and epochs must be >= 1")
        choices = {
            "fusion_mode": FUSION_MODES,
            "ablation": ABLATIONS,
            "mtt_variant": MTT_VARIANTS,
            "segment_logits": ("multiply", "mask"),
            "adjacency": ("per_layer", "head_mean"),
            "pool": ("mean", "cls-first-row"),
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {getattr(self, key)!r}")
        return self

    def replace(self, **changes):
        return dataclasses.replace(self, **changes).validate()

    def seeds(self):
        return [int(s) for s in self.ablation_seeds.split(",") if s.strip()]


def bert_finetune_config(**overrides):
    """Optimiser settings reported for BERT fine-tuning."""
    return Config(lr=2e-5, weight_decay=1e-5, batch_size=16, epochs=20, **overrides).validate()


def _coerce(value, kind):
    if kind is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    return kind(value)


def parse_config(text, source="<config>"):
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    kinds = {f.name: f.type for f in dataclasses.fields(Config)}
    types = {"int": int, "float": float, "bool": bool, "str": str}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        kind = types[kinds[key]] if isinstance(kinds[key], str) else kinds[key]
        try:
            values[key] = _coerce(value, kind)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: {key}: {exc}") from None
    return Config(**values).validate()


def load_config(path):
    return parse_config(Path(path).read_text(encoding="utf-8"), source=str(path))


def format_config(config):
    return "".join(f"{f.name} = {getattr(config, f.name)}\n" for f in dataclasses.fields(Config))


# ------------------------------------------------------------------ features


@dataclass
class Example:
    record: object
    ids: np.ndarray
    rel: np.ndarray
    y_seg: np.ndarray
    aspect: np.ndarray
    label: int

    @property
    def n(self):
        return len(self.ids)


@dataclass
class ForwardResult:
    probs: T.Node
    l_seg: T.Node
    l_r: T.Node
    diagnostics: dict = field(default_factory=dict)


class Model:
    def __init__(self, config, word_vocab, label_vocab, params=None):
        self.config = config.validate()
        self.word_vocab = word_vocab
        self.label_vocab = label_vocab
        self.params = params if params is not None else T.ParamStore(config.seed, config.init_range)

    def featurize(self, record):
        tree = parse_bracketed_tree(record.constituency)
        return Example(
            record=record,
            ids=self.word_vocab.ids(record.tokens),
            rel=build_relation_matrix(record, self.label_vocab),
            y_seg=build_segment_signal(tree, self.config.l),
            aspect=record.aspect_indicator(),
            label=record.label,
        )

    def forward(self, ex):
        cfg = self.config
        p = self.params
        hc = encode(
            ex.ids,
            p,
            len(self.word_vocab),
            cfg.d,
            cfg.n_max,
            mixing=cfg.encoder_mixing,
            aspect=ex.aspect if cfg.aspect_marker else None,
        )
        diag = {"hc": hc}
        zero = T.Node(0.0)
        if cfg.ablation == "no_sesg":
            h_ses, l_seg = hc, zero
        else:
            h_ses, l_seg, d_ses = sesg_forward(
                hc,
                p,
                ex.y_seg,
                gcn_layers=cfg.gcn_layers,
                adjacency=cfg.adjacency,
                logit_mode=cfg.segment_logits,
                supervise_presoftmax=cfg.supervise_presoftmax,
            )
            diag.update(d_ses)
        if cfg.ablation == "no_sylg":
            h_syl, l_r = hc, zero
        else:
            h_syl, l_r, d_syl = sylg_forward(
                hc,
                ex.rel,
                ex.aspect,
                p,
                len(self.label_vocab),
                gcn_layers=cfg.gcn_layers,
                n_heads=cfg.n_head_sylg,
                d_r=cfg.d_rel,
                variant=cfg.mtt_variant,
            )
            diag.update(d_syl)
        diag["h_ses"], diag["h_syl"] = h_ses, h_syl
        mode = "concat" if cfg.ablation == "no_fusion" else cfg.fusion_mode
        if mode == "adaptive":
            h_f, d_fuse = adaptive_fusion(h_ses, h_syl, p, heads=cfg.cross_heads, pool=cfg.pool)
            diag.update(d_fuse)
        else:
            h_f = fuse_alternative(mode, h_ses, h_syl, p)
        diag["h_f"] = h_f
        rows = np.flatnonzero(ex.aspect)
        h_a = T.mean(T.getitem(h_f, rows), axis=0)
        width = output_width(mode, cfg.d)
        w = p.get("classifier.w", (width, len(POLARITIES)))
        b = p.get("classifier.b", (len(POLARITIES),))
        probs = T.softmax(T.add(T.matmul(h_a, w), b))
        return ForwardResult(probs, l_seg, l_r, diag)

    def loss(self, ex):
        out = self.forward(ex)
        l_c = cross_entropy(out.probs, ex.label)
        total = total_loss(l_c, out.l_seg, out.l_r, self.config.lambda1, self.config.lambda2)
        return total, out, l_c

    def predict(self, ex):
        return int(np.argmax(self.forward(ex).probs.value))


def cross_entropy(probs, label):
    """``-ln probs[label]`` with the probability floored at 1e-12."""
    if isinstance(probs, T.Node):
        return T.scale(T.log(T.clamp(T.getitem(probs, int(label)), CE_CLAMP, 1.0)), -1.0)
    return -math.log(max(float(np.asarray(probs)[int(label)]), CE_CLAMP))


def batch_cross_entropy(prob_list, labels):
    return sum(cross_entropy(p, y) for p, y in zip(prob_list, labels)) / len(labels)


def total_loss(l_c, l_seg, l_r, lambda1, lambda2):
    """``L_C + lambda1 * L_seg + lambda2 * L_r``."""
    for name, part in (("L_C", l_c), ("L_seg", l_seg), ("L_r", l_r)):
        value = float(part.value if isinstance(part, T.Node) else part)
        if not math.isfinite(value):
            raise NumericalError(f"{name} is not finite ({value})")
    if not any(isinstance(x, T.Node) for x in (l_c, l_seg, l_r)):
        return l_c + lambda1 * l_seg + lambda2 * l_r
    return T.add(T.add(l_c, T.scale(l_seg, lambda1)), T.scale(l_r, lambda2))


# ------------------------------------------------------------------- metrics


@dataclass
class Metrics:
    accuracy: float
    macro_f1: float
    precision: list
    recall: list
    f1: list
    confusion: np.ndarray  # rows gold, columns predicted

    def line(self):
        return f"acc={self.accuracy:.6f} macro_f1={self.macro_f1:.6f}"


def metrics_from_confusion(confusion):
    confusion = np.asarray(confusion, dtype=np.int64)
    total = confusion.sum()
    if total == 0:
        raise ValueError("cannot score an empty dataset")
    precision, recall, f1 = [], [], []
    for c in range(confusion.shape[0]):
        tp = confusion[c, c]
        predicted = confusion[:, c].sum()
        actual = confusion[c, :].sum()
        p = tp / predicted if predicted else 0.0
        r = tp / actual if actual else 0.0
        precision.append(float(p))
        recall.append(float(r))
        f1.append(float(2 * p * r / (p + r)) if p + r else 0.0)
    return Metrics(
        accuracy=float(np.trace(confusion) / total),
        macro_f1=float(np.mean(f1)),
        precision=precision,
        recall=recall,
        f1=f1,
        confusion=confusion,
    )


def compute_metrics(gold, pred, n_classes=len(POLARITIES)):
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    for g, p in zip(gold, pred):
        confusion[g, p] += 1
    return metrics_from_confusion(confusion)


# ---------------------------------------------------------- parameter count


def count_params(params):
    return int(sum(node.value.size for _, node in params.items()))


def closed_form_param_count(config, vocab_size, n_labels):
    """Parameter count derived symbolically from the configuration."""
    d, l, g, h, dr = config.d, config.l, config.gcn_layers, config.n_head_sylg, config.d_rel
    count = vocab_size * d + config.n_max * d
    if config.encoder_mixing:
        count += 3 * d * d
    if config.aspect_marker:
        count += d
    gcn = g * (d * d + d)
    if config.ablation != "no_sesg":
        count += 4 * d * d + 2 * l * d * d + gcn
    if config.ablation != "no_sylg":
        count += n_labels * dr + dr * h + h + 2 * h * d * d + d + 1 + gcn
    mode = "concat" if config.ablation == "no_fusion" else config.fusion_mode
    if mode == "adaptive":
        # per cross stream: 4 projections, two-layer FFN with hidden 2d, two layer norms
        stream = 4 * d * d + (2 * d * d + 2 * d) + (2 * d * d + d) + 4 * d
        count += 2 * stream + (2 * d * d + d) + (d + 1)
    elif mode == "gate":
        count += 2 * d * d + d
    count += output_width(mode, d) * 3 + 3
    return count
