"""Offline replay of an annotated pair set through the validation loop."""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime
from importlib import resources
from pathlib import Path

from obsmatch.ingest import enrich, read_snapshot
from obsmatch.matcher import CandidatePair
from obsmatch.model import SynonymRegistry
from obsmatch.scoring.combine import PairScorer, ScoreWeights
from obsmatch.validate import GroundTruthValidator, ValidationConfig, ValidationStats, run_validation_loop

__all__ = ["ReplayResult", "default_replay_dir", "load_annotations", "replay"]

REPLAY_SCORES = ("levenshtein", "tfidf", "digit")


def default_replay_dir() -> Path:
    return Path(str(resources.files("obsmatch.data").joinpath("replay")))


def load_annotations(path: str | Path) -> dict[tuple[str, str], bool]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                out[(row["left"], row["right"])] = bool(row["same"])
    return out


@dataclass
class ReplayResult:
    stats: ValidationStats
    calls: int
    registry: SynonymRegistry
    disagreements: int


def replay(
    data_dir: str | Path | None = None,
    config: ValidationConfig | None = None,
    weights: ScoreWeights | None = None,
) -> ReplayResult:
    """Score the annotated pairs, then validate them by replaying the annotations.

    ``disagreements`` counts accepted mappings annotated distinct plus pairs
    annotated distinct that ended up in one synonym set.
    """
    root = Path(data_dir) if data_dir else default_replay_dir()
    entities = [enrich(e) for name in ("pds", "aas") for e in read_snapshot(root / f"{name}.jsonl")]
    by_curie = {e.curie: e for e in entities}
    truth = load_annotations(root / "pairs.jsonl")
    registry = SynonymRegistry(entities)
    scorer = PairScorer(entities)
    weights = weights or ScoreWeights()
    pairs = []
    for left, right in sorted(truth):
        pair = CandidatePair(by_curie[left], by_curie[right])
        scorer.score_pair(pair, REPLAY_SCORES, weights)
        pairs.append(pair)
    validator = GroundTruthValidator(truth)
    records, stats = run_validation_loop(
        pairs, validator, config or ValidationConfig(), registry, clock=lambda: datetime(2000, 1, 1)
    )
    wrong = sum(1 for r in records if not truth[(r.subject_id, r.object_id)])
    wrong += sum(1 for key, same in truth.items() if not same and registry.same(*key))
    return ReplayResult(stats, validator.calls, registry, wrong)
