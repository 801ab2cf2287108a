"""Bag-of-words documents: ``doc_id word_id count`` triples, 0-based ids."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
from scipy import sparse


class BowFormatError(ValueError):
    pass


@dataclass
class BowData:
    counts: sparse.csr_matrix
    word_ids: np.ndarray  # original id of every column

    @property
    def docs(self):
        return self.counts.shape[0]

    @property
    def vocab(self):
        return self.counts.shape[1]

    def dense(self) -> np.ndarray:
        return np.asarray(self.counts.todense(), dtype=float)

    def frequencies(self) -> np.ndarray:
        c = self.dense()
        tot = c.sum(axis=1, keepdims=True)
        return np.divide(c, tot, out=np.zeros_like(c), where=tot > 0)


def load_bow(path, top_words: int | None = None, vocab: int | None = None) -> BowData:
    docs, words, vals = [], [], []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) != 3:
                raise BowFormatError(f"{path}: line {lineno}: expected 3 fields, got {len(parts)}")
            try:
                d, w, c = int(parts[0]), int(parts[1]), int(parts[2])
            except ValueError:
                raise BowFormatError(f"{path}: line {lineno}: fields must be integers") from None
            if d < 0 or w < 0:
                raise BowFormatError(f"{path}: line {lineno}: ids must be non-negative")
            if c < 0:
                raise BowFormatError(f"{path}: line {lineno}: negative count")
            if (d, w) in seen:
                raise BowFormatError(f"{path}: line {lineno}: duplicate pair ({d}, {w})")
            seen.add((d, w))
            docs.append(d)
            words.append(w)
            vals.append(c)
    n_docs = max(docs) + 1 if docs else 0
    n_words = max(max(words) + 1 if words else 0, vocab or 0)
    m = sparse.csr_matrix((np.array(vals, dtype=float), (np.array(docs, dtype=int), np.array(words, dtype=int))),
                          shape=(n_docs, n_words))
    data = BowData(m, np.arange(n_words))
    return truncate_vocab(data, top_words) if top_words is not None else data


def truncate_vocab(data: BowData, top_words: int) -> BowData:
    """Keep the ``top_words`` words with the largest total count (ties: lower id)."""
    totals = np.asarray(data.counts.sum(axis=0)).ravel()
    order = np.lexsort((data.word_ids, -totals))
    keep = np.sort(order[:top_words])
    return BowData(data.counts[:, keep].tocsr(), data.word_ids[keep])


def write_bow(data: BowData, path):
    coo = data.counts.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k in order:
            fh.write(f"{coo.row[k]} {data.word_ids[coo.col[k]]} {int(coo.data[k])}\n")


def generate_synthetic_bow(docs: int, vocab: int, topics: int, seed: int,
                           doc_length: int = 60) -> BowData:
    """Documents drawn from mixtures of ``topics`` sparse multinomial prototypes."""
    rng = np.random.default_rng(seed)
    protos = rng.dirichlet(np.full(vocab, 0.1), size=topics)
    mix = rng.dirichlet(np.full(topics, 0.3), size=docs)
    rows = []
    for i in range(docs):
        p = mix[i] @ protos
        length = doc_length + rng.poisson(doc_length // 2)
        rows.append(rng.multinomial(length, p / p.sum()))
    counts = np.array(rows, dtype=float).reshape(docs, vocab)
    return BowData(sparse.csr_matrix(counts), np.arange(vocab))


_SYNTH = re.compile(r"^synthetic\(\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*,\s*(-?\d+)\s*\)$")


def load_source(source: str, top_words=None) -> BowData:
    """``synthetic(docs,vocab,topics,seed)`` or a path to a triples file."""
    m = _SYNTH.match(source.strip())
    if m:
        d, v, t, s = (int(g) for g in m.groups())
        data = generate_synthetic_bow(d, v, t, s)
        return truncate_vocab(data, top_words) if top_words is not None else data
    return load_bow(source, top_words=top_words)
