"""Score weights, the weighted global score, and per-pair score computation."""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

from obsmatch.diagnostics import Diagnostics
from obsmatch.matcher import CandidatePair
from obsmatch.model import Entity
from obsmatch.scoring.embedding import EmbeddingEncoder, embedding_cosine
from obsmatch.scoring.surface import digits_match, pair_acronym, pair_levenshtein
from obsmatch.scoring.tfidf import TfidfModel, fit_tfidf, tfidf_cosine

__all__ = ["SCORE_NAMES", "PairScorer", "ScoreWeights", "global_score"]

SCORE_NAMES = ("levenshtein", "tfidf", "digit", "acronym", "sentence_transformer", "llm_embeddings")


@dataclass(frozen=True)
class ScoreWeights:
    """Fixed per-score weights; scores without an explicit weight get ``default``."""

    weights: Mapping[str, float] = field(default_factory=lambda: {"levenshtein": 0.5})
    default: float = 1.0

    def __post_init__(self) -> None:
        if self.default < 0 or any(w < 0 for w in self.weights.values()):
            raise ValueError("score weights must be non-negative")
        if self.default == 0 and not any(w > 0 for w in self.weights.values()):
            raise ValueError("at least one score weight must be positive")

    def __getitem__(self, name: str) -> float:
        return self.weights.get(name, self.default)

    def scaled(self, factor: float) -> ScoreWeights:
        return ScoreWeights({k: w * factor for k, w in self.weights.items()}, self.default * factor)


def global_score(
    scores: CandidatePair | Mapping[str, float | None],
    weights: ScoreWeights,
    diagnostics: Diagnostics | None = None,
) -> float | None:
    """Weighted mean of the applicable scores.

    Inapplicable scores (``None`` or absent) and zero-weight scores are left
    out of both the sum and the normalizer. Returns ``None`` if nothing is left.
    """
    if isinstance(scores, CandidatePair):
        pair, scores = scores, scores.scores
    else:
        pair = None
    total = norm = 0.0
    applicable = []
    for name in sorted(scores):
        value = scores[name]
        w = weights[name]
        if value is None or w <= 0:
            continue
        total += value * w
        norm += w
        applicable.append(value)
    if norm == 0.0:
        if diagnostics is not None:
            what = f"{pair.left.curie} / {pair.right.curie}" if pair else "pair"
            diagnostics.warn("no-applicable-score", f"{what}: no applicable weighted score")
        return None
    # keep rounding noise from pushing the mean outside its inputs
    return min(max(total / norm, min(applicable)), max(applicable))


class PairScorer:
    """Computes the scores named in a strategy line for candidate pairs.

    The TF-IDF model is fitted on the union corpus of both lists. Embedding
    scores need an encoder registered under their score name.
    """

    def __init__(
        self,
        corpus: Iterable[Entity],
        encoders: Mapping[str, EmbeddingEncoder] | None = None,
        diagnostics: Diagnostics | None = None,
    ):
        corpus = list(corpus)
        self.tfidf: TfidfModel | None = fit_tfidf(corpus) if corpus else None
        self.encoders = dict(encoders or {})
        self.diagnostics = diagnostics if diagnostics is not None else Diagnostics()

    def score(self, name: str, left: Entity, right: Entity) -> float | None:
        if name == "levenshtein":
            return pair_levenshtein(left, right)
        if name == "digit":
            return digits_match(left, right)
        if name == "acronym":
            return pair_acronym(left, right)
        if name == "tfidf":
            if self.tfidf is None:
                return None
            return tfidf_cosine(self.tfidf, left, right, self.diagnostics)
        if name in ("sentence_transformer", "llm_embeddings"):
            encoder = self.encoders.get(name)
            if encoder is None:
                self.diagnostics.warn("no-encoder", f"no encoder configured for {name}")
                return None
            return embedding_cosine(encoder, left, right, self.diagnostics)
        raise ValueError(f"unknown score {name!r}")

    def score_pair(self, pair: CandidatePair, names: Iterable[str], weights: ScoreWeights) -> float | None:
        for name in names:
            value = self.score(name, pair.left, pair.right)
            if value is not None:
                pair.scores[name] = value
        pair.global_score = global_score(pair, weights, self.diagnostics)
        return pair.global_score
