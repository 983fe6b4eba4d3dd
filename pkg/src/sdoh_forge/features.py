"""Token n-gram TF-IDF featurization into sparse vectors."""

from __future__ import annotations

import hashlib
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, EmptyCorpus

VOCAB_FORMAT_VERSION = 1
_SPLIT = re.compile(r"[^0-9a-z]+")


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric tokens; numbers longer than four digits are dropped."""
    return [t for t in _SPLIT.split(text.lower()) if t and not (t.isdigit() and len(t) > 4)]


def ngrams(tokens: Sequence[str], ngram_range: tuple[int, int]) -> list[str]:
    lo, hi = ngram_range
    out = []
    for n in range(lo, hi + 1):
        out.extend(" ".join(tokens[i:i + n]) for i in range(len(tokens) - n + 1))
    return out


@dataclass
class Vocabulary:
    terms: dict[str, tuple[int, int]]  # term -> (index, document frequency)
    n_docs: int
    ngram_range: tuple[int, int] = (1, 2)
    min_df: int = 2

    def __post_init__(self):
        self.ngram_range = tuple(self.ngram_range)
        self._idf = np.zeros(len(self.terms))
        for _, (idx, df) in self.terms.items():
            self._idf[idx] = math.log((1 + self.n_docs) / (1 + df)) + 1.0

    def __len__(self) -> int:
        return len(self.terms)

    def idf(self, term: str) -> float:
        return float(self._idf[self.terms[term][0]])

    def df(self, term: str) -> int:
        return self.terms[term][1]

    def index_to_term(self) -> list[str]:
        out = [""] * len(self.terms)
        for term, (idx, _) in self.terms.items():
            out[idx] = term
        return out

    @property
    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.n_docs}|{self.ngram_range[0]}|{self.ngram_range[1]}|{self.min_df}\n".encode())
        for term in sorted(self.terms):
            h.update(f"{term}\t{self.terms[term][1]}\n".encode("utf-8"))
        return h.hexdigest()

    def save(self, path) -> None:
        rows = [f"sdoh-forge-vocab\t{VOCAB_FORMAT_VERSION}\t{len(self)}\t{self.n_docs}\t"
                f"{self.ngram_range[0]}\t{self.ngram_range[1]}\t{self.min_df}"]
        rows += [f"{term}\t{self.terms[term][1]}" for term in sorted(self.terms)]
        Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        head = lines[0].split("\t")
        if head[0] != "sdoh-forge-vocab" or int(head[1]) != VOCAB_FORMAT_VERSION:
            raise DataError(f"{path}: not a version-{VOCAB_FORMAT_VERSION} vocabulary file")
        size, n_docs, lo, hi, min_df = (int(x) for x in head[2:])
        terms = {}
        for i, line in enumerate(lines[1:]):
            term, df = line.rsplit("\t", 1)
            terms[term] = (i, int(df))
        if len(terms) != size:
            raise DataError(f"{path}: header declares {size} terms, found {len(terms)}")
        return cls(terms, n_docs, (lo, hi), min_df)


@dataclass(frozen=True)
class SparseVector:
    indices: tuple[int, ...]
    weights: tuple[float, ...]
    dim: int

    def __post_init__(self):
        if len(self.indices) != len(self.weights):
            raise DataError("indices and weights differ in length")
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise DataError("sparse indices must be strictly increasing")
        if self.indices and (self.indices[0] < 0 or self.indices[-1] >= self.dim):
            raise DataError("sparse index out of range")
        if any(w == 0.0 for w in self.weights):
            raise DataError("sparse vectors store no zero weights")

    @classmethod
    def from_dense(cls, row) -> "SparseVector":
        row = np.asarray(row, dtype=float)
        nz = np.flatnonzero(row)
        return cls(tuple(int(i) for i in nz), tuple(float(row[i]) for i in nz), len(row))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[list(self.indices)] = self.weights
        return out

    def pairs(self):
        return list(zip(self.indices, self.weights))


def fit_vocab(corpus: Sequence[str], ngram_range: tuple[int, int] = (1, 2), min_df: int = 2) -> Vocabulary:
    if not corpus:
        raise EmptyCorpus("cannot fit a vocabulary on an empty corpus")
    lo, hi = ngram_range
    if not 1 <= lo <= hi:
        raise ConfigError(f"bad ngram_range {ngram_range}")
    if min_df < 1:
        raise ConfigError("min_df must be >= 1")
    df = Counter()
    for doc in corpus:
        df.update(set(ngrams(tokenize(doc), ngram_range)))
    kept = sorted(t for t, c in df.items() if c >= min_df)
    return Vocabulary({t: (i, df[t]) for i, t in enumerate(kept)}, len(corpus), (lo, hi), min_df)


def term_weights(text: str, vocab: Vocabulary) -> dict[int, float]:
    """Un-normalized tf * idf weights by index; out-of-vocabulary terms ignored."""
    counts = Counter(g for g in ngrams(tokenize(text), vocab.ngram_range) if g in vocab.terms)
    return {vocab.terms[t][0]: c * vocab._idf[vocab.terms[t][0]] for t, c in counts.items()}


def vectorize(text: str, vocab: Vocabulary) -> SparseVector:
    w = term_weights(text, vocab)
    if not w:
        return SparseVector((), (), len(vocab))
    idx = sorted(w)
    vals = np.array([w[i] for i in idx])
    vals = vals / math.sqrt(float(np.dot(vals, vals)))
    return SparseVector(tuple(idx), tuple(float(v) for v in vals), len(vocab))


def vectorize_all(texts: Iterable[str], vocab: Vocabulary) -> list[SparseVector]:
    return [vectorize(t, vocab) for t in texts]
