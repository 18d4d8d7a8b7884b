"""Surface and semantic similarity scores and their weighted combination."""

from obsmatch.scoring.combine import SCORE_NAMES, PairScorer, ScoreWeights, global_score
from obsmatch.scoring.embedding import (
    CachedEncoder,
    EmbeddingCache,
    EmbeddingEncoder,
    EncoderError,
    HashingEncoder,
    HttpEncoder,
    embedding_cosine,
)
from obsmatch.scoring.surface import (
    acronym_probability,
    digits_match,
    levenshtein_distance,
    levenshtein_similarity,
    pair_acronym,
    pair_levenshtein,
)
from obsmatch.scoring.text import entity_document, stopwords, tokenize
from obsmatch.scoring.tfidf import TfidfModel, cosine, fit_tfidf, sparse_cosine, tfidf_cosine

__all__ = [
    "SCORE_NAMES",
    "CachedEncoder",
    "EmbeddingCache",
    "EmbeddingEncoder",
    "EncoderError",
    "HashingEncoder",
    "HttpEncoder",
    "PairScorer",
    "ScoreWeights",
    "TfidfModel",
    "acronym_probability",
    "cosine",
    "digits_match",
    "embedding_cosine",
    "entity_document",
    "fit_tfidf",
    "global_score",
    "levenshtein_distance",
    "levenshtein_similarity",
    "pair_acronym",
    "pair_levenshtein",
    "sparse_cosine",
    "stopwords",
    "tfidf_cosine",
    "tokenize",
]
