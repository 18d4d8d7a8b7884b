"""TF-IDF encoding over a simulated corpus and cosine similarity."""

from __future__ import annotations

import math
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

from obsmatch.diagnostics import Diagnostics
from obsmatch.model import Entity
from obsmatch.scoring.text import entity_document, stopwords, tokenize

__all__ = ["TfidfModel", "cosine", "fit_tfidf", "sparse_cosine", "tfidf_cosine"]


@dataclass(frozen=True)
class TfidfModel:
    vocabulary: Mapping[str, int]
    df: Mapping[str, int]
    n_docs: int
    stopwords: frozenset[str]

    def idf(self, token: str) -> float:
        return math.log(self.n_docs / self.df[token])

    def tokens(self, text: str) -> list[str]:
        return [t for t in tokenize(text) if t not in self.stopwords]

    def transform(self, text: str) -> dict[int, float]:
        """Sparse vector ``index -> raw count * idf``; unseen tokens are dropped."""
        counts = Counter(t for t in self.tokens(text) if t in self.vocabulary)
        return {self.vocabulary[t]: n * self.idf(t) for t, n in counts.items()}


def _document(doc: Entity | str) -> str:
    return entity_document(doc) if isinstance(doc, Entity) else doc


def fit_tfidf(corpus: Iterable[Entity | str], stop: frozenset[str] | None = None) -> TfidfModel:
    """One document per entity; ``df`` counts documents containing a token."""
    stop = stopwords() if stop is None else stop
    df: Counter[str] = Counter()
    n = 0
    for doc in corpus:
        n += 1
        df.update({t for t in tokenize(_document(doc)) if t not in stop})
    if n == 0:
        raise ValueError("cannot fit TF-IDF on an empty corpus")
    vocabulary = {t: i for i, t in enumerate(sorted(df))}
    return TfidfModel(vocabulary=vocabulary, df=dict(df), n_docs=n, stopwords=stop)


def cosine(u: Sequence[float], v: Sequence[float]) -> float:
    if len(u) != len(v):
        raise ValueError(f"dimension mismatch: {len(u)} != {len(v)}")
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return max(-1.0, min(1.0, dot / (nu * nv)))


def sparse_cosine(u: Mapping[int, float], v: Mapping[int, float]) -> float:
    # sorted shared keys keep the float sum independent of argument order
    dot = sum(u[k] * v[k] for k in sorted(u.keys() & v.keys()))
    nu = math.sqrt(sum(x * x for x in u.values()))
    nv = math.sqrt(sum(x * x for x in v.values()))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return max(-1.0, min(1.0, dot / (nu * nv)))


def tfidf_cosine(
    model: TfidfModel,
    left: Entity | str,
    right: Entity | str,
    diagnostics: Diagnostics | None = None,
) -> float:
    u = model.transform(_document(left))
    v = model.transform(_document(right))
    for side, vec in ((left, u), (right, v)):
        if not vec and diagnostics is not None:
            name = side.curie if isinstance(side, Entity) else repr(side)
            diagnostics.warn("empty-document", f"{name} has no TF-IDF terms")
    return max(0.0, min(1.0, sparse_cosine(u, v)))
