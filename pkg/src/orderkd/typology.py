"""Word-order typology vectors, Manhattan word-order distance and correlation."""

from __future__ import annotations

import csv
import io
import math
import warnings
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .treebank import Sentence, Treebank


class TripleKey(NamedTuple):
    dep_upos: str
    head_upos: str
    deprel: str

    def __str__(self):
        return f"({self.dep_upos}<-{self.head_upos}, {self.deprel})"


def edge_triples(sentence: Sentence) -> List[Tuple[TripleKey, bool]]:
    """(triple, dependent-precedes-head) for every non-root edge."""
    toks = sentence.tokens
    out = []
    for t in toks:
        if t.head == 0 or not 0 < t.head <= len(toks):
            continue
        out.append((TripleKey(t.upos, toks[t.head - 1].upos, t.deprel), t.id < t.head))
    return out


def count_triples(tb: Treebank) -> Counter:
    return Counter(key for s in tb for key, _ in edge_triples(s))


def select_triples(treebanks: Sequence[Treebank], k: int = 52) -> List[TripleKey]:
    """The k most frequent triples over all treebanks, by count then lexicographically."""
    if not treebanks:
        raise ValueError("select_triples needs at least one treebank")
    if k < 1:
        raise ValueError("k must be >= 1")
    total: Counter = Counter()
    for tb in treebanks:
        total.update(count_triples(tb))
    ranked = sorted(total.items(), key=lambda kv: (-kv[1], kv[0]))
    if len(ranked) < k:
        warnings.warn(f"only {len(ranked)} distinct triples available, fewer than k={k}")
    return [key for key, _ in ranked[:k]]


@dataclass
class TypologyVector:
    keys: Tuple[TripleKey, ...]
    freqs: np.ndarray
    support: np.ndarray

    def __post_init__(self):
        self.keys = tuple(TripleKey(*k) for k in self.keys)
        self.freqs = np.asarray(self.freqs, dtype=float)
        self.support = np.asarray(self.support, dtype=float)
        if len(self.keys) != len(self.freqs) or len(self.keys) != len(self.support):
            raise ValueError("keys, freqs and support must align")

    def as_dict(self) -> Dict[TripleKey, float]:
        return dict(zip(self.keys, self.freqs.tolist()))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dep_upos", "head_upos", "deprel", "left_freq", "support"])
        for key, f, n in zip(self.keys, self.freqs, self.support):
            w.writerow([*key, repr(float(f)), repr(float(n))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TypologyVector":
        rows = list(csv.DictReader(io.StringIO(text)))
        keys = [TripleKey(r["dep_upos"], r["head_upos"], r["deprel"]) for r in rows]
        return cls(tuple(keys), [float(r["left_freq"]) for r in rows], [float(r["support"]) for r in rows])


def _aggregate(keys: Sequence[TripleKey], pairs: Iterable[Tuple[TripleKey, float]]) -> TypologyVector:
    index = {k: n for n, k in enumerate(keys)}
    sums = np.zeros(len(keys))
    support = np.zeros(len(keys))
    for key, value in pairs:
        n = index.get(key)
        if n is not None:
            sums[n] += value
            support[n] += 1
    freqs = np.where(support > 0, sums / np.maximum(support, 1), 0.5)
    return TypologyVector(tuple(keys), freqs, support)


def order_feature(tb: Treebank, triples: Sequence[TripleKey]) -> TypologyVector:
    """Left-direction relative frequency per triple; unsupported triples get 0.5."""
    return _aggregate(
        [TripleKey(*t) for t in triples],
        ((key, 1.0 if left else 0.0) for s in tb for key, left in edge_triples(s)),
    )


def word_order_distance(a: TypologyVector, b: TypologyVector, normalize: bool = True) -> float:
    """Manhattan distance, divided by the number of triples when ``normalize``."""
    if a.keys != b.keys:
        raise ValueError("typology vectors have different triple lists")
    d = float(np.abs(a.freqs - b.freqs).sum())
    return d / len(a.keys) if normalize and a.keys else d


def predicted_order_frequency(model, tb: Treebank, triples: Sequence[TripleKey]) -> TypologyVector:
    """Mean model left-probability over the gold edges of each triple.

    ``model`` is anything with ``predict_right(sentences, edges_per_sentence)``
    returning P(dependent right of head) per edge.
    """
    sents = [s for s in tb if s.edges()]
    probs = model.predict_right(sents, [s.edges() for s in sents])
    pairs = []
    for s, p in zip(sents, probs):
        for (key, _), pr in zip(edge_triples(s), p):
            pairs.append((key, 1.0 - float(pr)))
    return _aggregate([TripleKey(*t) for t in triples], pairs)


def pearson(x: Sequence[float], y: Sequence[float]) -> Tuple[float, float]:
    """Pearson r with a two-sided p-value from the t distribution."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("pearson inputs differ in length")
    n = len(x)
    if n < 3:
        raise ValueError("pearson needs at least 3 points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("pearson undefined for zero-variance input")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    p = 2.0 * stats.t.sf(abs(t), n - 2)
    return r, float(p)


# ---------------------------------------------------------------------------
# distance matrices


def distance_matrix(vectors: Mapping[str, TypologyVector], normalize: bool = True) -> Tuple[List[str], np.ndarray]:
    langs = list(vectors)
    m = np.zeros((len(langs), len(langs)))
    for i, a in enumerate(langs):
        for j in range(i + 1, len(langs)):
            m[i, j] = m[j, i] = word_order_distance(vectors[a], vectors[langs[j]], normalize)
    return langs, m


def matrix_to_csv(langs: Sequence[str], m: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["language", *langs])
    for lang, row in zip(langs, m):
        w.writerow([lang, *(repr(float(v)) for v in row)])
    return buf.getvalue()


def matrix_from_csv(text: str) -> Tuple[List[str], np.ndarray]:
    rows = list(csv.reader(io.StringIO(text)))
    langs = rows[0][1:]
    m = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    if [r[0] for r in rows[1:]] != langs:
        raise ValueError("distance matrix row and column labels differ")
    return langs, m
