"""Sentence records, constituency segmentation and the synthetic corpus."""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

POLARITIES = ("positive", "negative", "neutral")
NO_RELATION = "<none>"
UNKNOWN_LABEL = "<unk>"


class DataError(ValueError):
    """Invalid record, file line or parse string."""


@dataclass
class SentenceRecord:
    tokens: list
    aspect_from: int
    aspect_to: int
    polarity: str
    dep_head: list
    dep_label: list
    constituency: str

    @property
    def n(self):
        return len(self.tokens)

    @property
    def label(self):
        return POLARITIES.index(self.polarity)

    def aspect_indicator(self):
        t = np.zeros(self.n)
        t[self.aspect_from : self.aspect_to + 1] = 1.0
        return t

    def validate(self):
        n = self.n
        if n == 0:
            raise DataError("record has no tokens")
        if not 0 <= self.aspect_from <= self.aspect_to < n:
            raise DataError(f"aspect span [{self.aspect_from}, {self.aspect_to}] out of range for {n} tokens")
        if self.polarity not in POLARITIES:
            raise DataError(f"unknown polarity {self.polarity!r}")
        if len(self.dep_head) != n or len(self.dep_label) != n:
            raise DataError(f"dependency columns must have {n} entries")
        if any(not 0 <= h <= n for h in self.dep_head):
            raise DataError("dependency head outside [0, n]")
        if sum(1 for h in self.dep_head if h == 0) != 1:
            raise DataError("exactly one token must have head 0")
        leaves = parse_bracketed_tree(self.constituency).n
        if leaves != n:
            raise DataError(f"parse has {leaves} leaves but record has {n} tokens")
        return self


# ------------------------------------------------------------------ file I/O


def format_record(record):
    return "\t".join(
        [
            " ".join(record.tokens),
            str(record.aspect_from),
            str(record.aspect_to),
            record.polarity,
            " ".join(str(h) for h in record.dep_head),
            " ".join(record.dep_label),
            record.constituency,
        ]
    )


def parse_record(line):
    fields = line.rstrip("\n").split("\t")
    if len(fields) != 7:
        raise DataError(f"expected 7 tab-separated fields, found {len(fields)}")
    tokens, a_from, a_to, polarity, heads, labels, parse = fields
    try:
        record = SentenceRecord(
            tokens=tokens.split(),
            aspect_from=int(a_from),
            aspect_to=int(a_to),
            polarity=polarity,
            dep_head=[int(h) for h in heads.split()],
            dep_label=labels.split(),
            constituency=parse,
        )
    except ValueError as exc:
        raise DataError(str(exc)) from None
    return record.validate()


def load_dataset(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(parse_record(line))
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return records


def save_dataset(records, path):
    Path(path).write_text("".join(format_record(r) + "\n" for r in records), encoding="utf-8")


# ------------------------------------------------------------- constituency


@dataclass
class TreeNode:
    label: str
    start: int
    end: int  # inclusive
    depth: int
    children: list = field(default_factory=list)

    @property
    def is_leaf(self):
        return not self.children

    @property
    def span(self):
        return (self.start, self.end)


@dataclass
class ConstituentTree:
    root: TreeNode
    words: list

    @property
    def n(self):
        return len(self.words)

    def nodes(self):
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            out.append(node)
            stack.extend(reversed(node.children))
        return out

    @property
    def depth(self):
        return max(node.depth for node in self.nodes())


def _tokenize_brackets(text):
    return text.replace("(", " ( ").replace(")", " ) ").split()


def parse_bracketed_tree(text):
    """Parse a PTB-style bracketed string.

    A bracket whose only content is a label and one word is a leaf node
    spanning that word; bare words next to sub-brackets become unlabeled
    leaves one level down.
    """
    tokens = _tokenize_brackets(text)
    if not tokens:
        raise DataError("empty parse string")
    words = []
    pos = 0

    def parse_node(depth):
        nonlocal pos
        if tokens[pos] != "(":
            raise DataError(f"expected '(' at token {pos}")
        pos += 1
        label = ""
        if pos < len(tokens) and tokens[pos] not in "()":
            label = tokens[pos]
            pos += 1
        items = []
        while pos < len(tokens) and tokens[pos] != ")":
            if tokens[pos] == "(":
                items.append(parse_node(depth + 1))
            else:
                items.append(tokens[pos])
                pos += 1
        if pos >= len(tokens):
            raise DataError("unbalanced parentheses: missing ')'")
        pos += 1
        if not items:
            if not label:
                raise DataError("empty bracket")
            # "(word)" carries a word but no label
            items, label = [label], ""
        if len(items) == 1 and isinstance(items[0], str):
            words.append(items[0])
            return TreeNode(label, len(words) - 1, len(words) - 1, depth)
        children = []
        for item in items:
            if isinstance(item, str):
                words.append(item)
                children.append(TreeNode("", len(words) - 1, len(words) - 1, depth + 1))
            else:
                children.append(item)
        return TreeNode(label, children[0].start, children[-1].end, depth, children)

    root = parse_node(1)
    if pos != len(tokens):
        raise DataError("unbalanced parentheses: trailing tokens after the root")
    return ConstituentTree(root, words)


def layer_segments(tree, layer):
    """Token spans of the horizontal cut at ``layer`` (root is layer 1).

    Leaves above the cut persist as their own span.
    """
    if layer < 1:
        raise ValueError("layer must be >= 1")
    spans = []

    def walk(node):
        if node.depth == layer or node.is_leaf:
            spans.append(node.span)
        else:
            for child in node.children:
                walk(child)

    walk(tree.root)
    return spans


def build_segment_signal(tree, layers):
    """Binary ``layers x n x n`` tensor: 1 where two tokens share a segment."""
    if layers < 1:
        raise ValueError("layers must be >= 1")
    y = np.zeros((layers, tree.n, tree.n))
    for k in range(layers):
        for start, end in layer_segments(tree, k + 1):
            y[k, start : end + 1, start : end + 1] = 1.0
    return y


# ---------------------------------------------------------------- relations


class LabelVocab:
    """Dependency label ids; id 0 is reserved for unlinked pairs."""

    def __init__(self, labels=()):
        self.labels = [NO_RELATION]
        self.index = {NO_RELATION: 0}
        for label in labels:
            self.add(label)

    def add(self, label):
        if label not in self.index:
            self.index[label] = len(self.labels)
            self.labels.append(label)
        return self.index[label]

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, label):
        if label in self.index:
            return self.index[label]
        if UNKNOWN_LABEL in self.index:
            return self.index[UNKNOWN_LABEL]
        raise KeyError(f"dependency label {label!r} not in vocabulary")

    @classmethod
    def from_records(cls, records):
        vocab = cls([UNKNOWN_LABEL])
        for record in records:
            for head, label in zip(record.dep_head, record.dep_label):
                if head:
                    vocab.add(label)
        return vocab

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != NO_RELATION:
            raise DataError(f"label vocabulary must start with {NO_RELATION!r}")
        return cls(lines[1:])

    def save(self, path):
        Path(path).write_text("\n".join(self.labels) + "\n", encoding="utf-8")


def build_relation_matrix(record, vocab):
    """Symmetric ``n x n`` matrix of dependency-label ids (0 = no edge)."""
    n = record.n
    rel = np.zeros((n, n), dtype=np.int64)
    for dep, (head, label) in enumerate(zip(record.dep_head, record.dep_label)):
        if head == 0:
            continue
        rid = vocab[label]
        rel[head - 1, dep] = rid
        rel[dep, head - 1] = rid
    return rel


# ---------------------------------------------------------- synthetic corpus

DEFAULT_LEXICON = {
    "aspects": ["food", "service", "atmosphere", "staff", "price", "menu", "decor", "wine", "music", "waiter"],
    "verbs": ["is", "was", "seems"],
    "positive": ["great", "good", "excellent", "delicious", "friendly", "superb"],
    "negative": ["terrible", "bad", "awful", "slow", "rude", "bland"],
    "neutral": ["average", "okay", "ordinary", "standard", "typical", "acceptable"],
}
CONNECTOR = "and"


def _clause_parse(aspect, verb, opinion):
    return f"(S (NP {aspect}) (VP (V {verb}) (ADJP {opinion})))"


def generate_synthetic(seed, size, vocab=None, min_clauses=1, max_clauses=3):
    """Planted-structure corpus of ``size`` records.

    Each clause is ``aspect verb opinion``; clauses are joined by "and".
    The label comes only from the opinion in the aspect's own clause, and
    every other clause carries a different polarity. Labels are balanced
    across the three classes.
    """
    if size < 1:
        raise ValueError("size must be >= 1")
    if not 1 <= min_clauses <= max_clauses:
        raise ValueError("need 1 <= min_clauses <= max_clauses")
    lex = dict(DEFAULT_LEXICON)
    if vocab:
        lex.update(vocab)
    if len(lex["aspects"]) < max_clauses:
        raise ValueError("not enough aspect words for the clause count")
    rng = np.random.default_rng(seed)
    labels = np.tile(np.arange(3), size // 3 + 1)[:size]
    rng.shuffle(labels)
    records = []
    for target in labels:
        n_clauses = int(rng.integers(min_clauses, max_clauses + 1))
        focus = int(rng.integers(n_clauses))
        aspects = rng.choice(len(lex["aspects"]), size=n_clauses, replace=False)
        polarities = []
        for c in range(n_clauses):
            if c == focus:
                polarities.append(int(target))
            else:
                others = [p for p in range(3) if p != target]
                polarities.append(int(others[rng.integers(2)]))
        tokens, heads, deps, parses = [], [], [], []
        opinion_pos = []
        for c in range(n_clauses):
            if c:
                tokens.append(CONNECTOR)
                heads.append(None)  # filled once this clause's opinion is placed
                deps.append("cc")
                parses.append(f"(CC {CONNECTOR})")
            base = len(tokens)
            aspect = lex["aspects"][aspects[c]]
            verb = lex["verbs"][rng.integers(len(lex["verbs"]))]
            words = lex[POLARITIES[polarities[c]]]
            opinion = words[rng.integers(len(words))]
            tokens += [aspect, verb, opinion]
            heads += [base + 3, base + 3, None]
            deps += ["nsubj", "cop", None]
            opinion_pos.append(base + 2)
            if c:
                heads[base - 1] = base + 3
            parses.append(_clause_parse(aspect, verb, opinion))
        for c, pos in enumerate(opinion_pos):
            if c == 0:
                heads[pos], deps[pos] = 0, "root"
            else:
                heads[pos], deps[pos] = opinion_pos[0] + 1, "conj"
        start = 4 * focus
        records.append(
            SentenceRecord(
                tokens=tokens,
                aspect_from=start,
                aspect_to=start,
                polarity=POLARITIES[target],
                dep_head=heads,
                dep_label=deps,
                constituency="(ROOT (S " + " ".join(parses) + "))",
            ).validate()
        )
    return records


def clause_spans(record):
    """Spans of the layer-3 constituents (clauses and connectors)."""
    return layer_segments(parse_bracketed_tree(record.constituency), 3)
