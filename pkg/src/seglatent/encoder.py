"""Small trainable stand-in for the contextual encoder."""
from pathlib import Path

import numpy as np

from . import tensor as T

UNKNOWN_WORD = "<unk>"


class WordVocab:
    """Token ids; id 0 is the unknown word."""

    def __init__(self, words=()):
        self.words = [UNKNOWN_WORD]
        self.index = {UNKNOWN_WORD: 0}
        for word in words:
            if word not in self.index:
                self.index[word] = len(self.words)
                self.words.append(word)

    def __len__(self):
        return len(self.words)

    def ids(self, tokens):
        return np.array([self.index.get(tok, 0) for tok in tokens], dtype=np.int64)

    @classmethod
    def from_records(cls, records):
        return cls(tok for record in records for tok in record.tokens)

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != UNKNOWN_WORD:
            raise ValueError(f"word vocabulary must start with {UNKNOWN_WORD!r}")
        return cls(lines[1:])

    def save(self, path):
        Path(path).write_text("\n".join(self.words) + "\n", encoding="utf-8")


def encode(token_ids, params, vocab_size, d, n_max, mixing=False, aspect=None):
    """Contextual features ``n x d``: word + position embedding.

    ``aspect`` (0/1 per token) adds a learned marker vector to the aspect
    tokens, the way a segment embedding marks the aspect when sentence and
    aspect are packed into one encoder input. With ``mixing`` one residual
    single-head self-attention layer is added.
    """
    n = len(token_ids)
    if n > n_max:
        raise ValueError(f"sentence of {n} tokens exceeds n_max={n_max}")
    if d % 2:
        raise ValueError("encoder width d must be even")
    emb = params.get("encoder.embed", (vocab_size, d))
    pos = params.get("encoder.position", (n_max, d))
    h = T.add(T.take_rows(emb, token_ids), T.getitem(pos, slice(0, n)))
    if aspect is not None:
        marker = params.get("encoder.aspect", (1, d))
        h = T.add(h, T.matmul(np.asarray(aspect, dtype=np.float64).reshape(n, 1), marker))
    if mixing:
        wq = params.get("encoder.mix.wq", (d, d))
        wk = params.get("encoder.mix.wk", (d, d))
        wv = params.get("encoder.mix.wv", (d, d))
        scores = T.scale(T.matmul(T.matmul(h, wq), T.transpose(T.matmul(h, wk))), 1.0 / np.sqrt(d))
        h = T.add(h, T.matmul(T.softmax(scores), T.matmul(h, wv)))
    return h
