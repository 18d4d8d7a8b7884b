"""End-to-end alignment run: strategy lines in order, then all outputs."""

from __future__ import annotations

import json
import logging
import time
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from importlib import resources
from pathlib import Path

from obsmatch import emit
from obsmatch.diagnostics import Diagnostics
from obsmatch.emit import MappingRecord
from obsmatch.ingest import RecordError, apply_patches, enrich, load_patches, read_snapshot
from obsmatch.matcher import (
    CandidatePair,
    PairStatus,
    apply_criteria,
    generate_pairs,
    passes_type_filter,
    resolve_external_ids,
)
from obsmatch.model import DEFAULT_PRIORITY, SOURCES, Entity, SynonymRegistry
from obsmatch.scoring.combine import PairScorer, ScoreWeights
from obsmatch.scoring.embedding import EmbeddingEncoder
from obsmatch.strategy import Strategy, StrategyError, StrategyLine, read_strategy, validate_strategy
from obsmatch.validate import (
    HttpChatTransport,
    LlmValidator,
    RuleValidator,
    TransportError,
    ValidationConfig,
    ValidationDeferred,
    Verdict,
    run_validation_loop,
)

__all__ = [
    "ConfigError",
    "DataError",
    "LineError",
    "LlmSettings",
    "PipelineTransportError",
    "RunConfig",
    "RunResult",
    "TickingClock",
    "default_catalogs",
    "default_strategy",
    "load_entities",
    "run_pipeline",
]

logger = logging.getLogger(__name__)

MAPPING_TOOL = "obsmatch"
OUTPUT_FILES = {
    "sssom": "mappings.sssom.txt",
    "sssom_tsv": "mappings.sssom.tsv",
    "resolver": "resolver.json",
    "facilities": "facilities.csv",
    "linked_catalog": "linked-catalog.jsonl",
    "report": "run-report.json",
}


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


class PipelineTransportError(RuntimeError):
    pass


class LineError(RuntimeError):
    """A strategy line failed; carries the line for context."""


def _data_path(*parts: str) -> Path:
    return Path(str(resources.files("obsmatch.data").joinpath(*parts)))


def default_strategy() -> Path:
    return _data_path("strategy.txt")


def default_catalogs() -> dict[str, Path]:
    root = _data_path("fixtures")
    return {src: root / f"{src}.jsonl" for src in SOURCES if (root / f"{src}.jsonl").exists()}


@dataclass(frozen=True)
class LlmSettings:
    base_url: str
    model: str
    api_key: str | None = None
    timeout: float = 120.0
    retries: int = 2


@dataclass
class RunConfig:
    strategy: Path
    catalogs: Mapping[str, Path]
    output_dir: Path
    weights: ScoreWeights = field(default_factory=ScoreWeights)
    validation: ValidationConfig = field(default_factory=ValidationConfig)
    validator: str = "rule"
    llm: LlmSettings | None = None
    priority: tuple[str, ...] = DEFAULT_PRIORITY
    patches: Path | None = None
    encoders: Mapping[str, EmbeddingEncoder] = field(default_factory=dict)
    now: datetime | None = None
    keep_going: bool = False

    def check(self) -> None:
        if not Path(self.strategy).is_file():
            raise ConfigError(f"strategy file not found: {self.strategy}")
        for source, path in self.catalogs.items():
            if not Path(path).is_file():
                raise ConfigError(f"catalog for {source!r} not found: {path}")
        if self.patches is not None and not Path(self.patches).is_file():
            raise ConfigError(f"patch file not found: {self.patches}")
        if self.validator not in ("rule", "llm"):
            raise ConfigError(f"unknown validator {self.validator!r} (expected rule or llm)")
        if self.validator == "llm" and self.llm is None:
            raise ConfigError("the llm validator needs an endpoint URL and a model name")


class TickingClock:
    """Deterministic clock: ``start``, then one microsecond later per call."""

    def __init__(self, start: datetime):
        self.start = start
        self.ticks = 0

    def __call__(self) -> datetime:
        value = self.start + timedelta(microseconds=self.ticks)
        self.ticks += 1
        return value


@dataclass
class RunResult:
    registry: SynonymRegistry
    records: list[MappingRecord]
    report: dict[str, object]
    outputs: dict[str, Path]
    diagnostics: Diagnostics


def load_entities(
    catalogs: Mapping[str, Path],
    patches: Path | None = None,
) -> list[Entity]:
    """Read, enrich and patch every catalog; raises :class:`DataError` on bad records."""
    entities: list[Entity] = []
    for source in sorted(catalogs):
        try:
            snapshot = read_snapshot(catalogs[source], source=source)
        except RecordError as exc:
            raise DataError(f"{catalogs[source]}: {exc}") from None
        except OSError as exc:
            raise DataError(f"{catalogs[source]}: {exc}") from None
        entities.extend(enrich(e) for e in snapshot)
    if patches is not None:
        try:
            entities = apply_patches(entities, load_patches(patches))
        except (RecordError, ValueError) as exc:
            raise DataError(f"{patches}: {exc}") from None
    return entities


def _load_strategy(config: RunConfig) -> Strategy:
    try:
        strategy = read_strategy(config.strategy, sources=None)
    except StrategyError as exc:
        raise ConfigError(f"{config.strategy}: {exc}") from None
    problems = [d for d in validate_strategy(strategy) if d.level == "error"]
    if problems:
        raise ConfigError("; ".join(str(d) for d in problems))
    missing = sorted(strategy.sources - set(config.catalogs))
    if missing:
        raise ConfigError(f"strategy references sources without a catalog: {', '.join(missing)}")
    return strategy


class _TrackingValidator:
    """Counts validator calls and transport-caused deferrals."""

    def __init__(self, inner: Callable[[CandidatePair], Verdict]):
        self.inner = inner
        self.transport_failures = 0

    def __call__(self, pair: CandidatePair) -> Verdict:
        try:
            return self.inner(pair)
        except ValidationDeferred as exc:
            if isinstance(exc.__cause__, TransportError):
                self.transport_failures += 1
            raise


def _make_validator(config: RunConfig) -> Callable[[CandidatePair], Verdict]:
    if config.validator == "llm":
        s = config.llm
        transport = HttpChatTransport(s.base_url, s.model, s.api_key, s.timeout, s.retries)
        return LlmValidator(transport)
    return RuleValidator(config.validation)


def _automatic_record(pair: CandidatePair, measure: str, clock: Callable[[], datetime]) -> MappingRecord:
    return MappingRecord(
        subject_id=pair.left.curie,
        object_id=pair.right.curie,
        similarity_measure=measure,
        similarity_score=1.0,
        mapping_date=clock(),
        scores={measure: 1.0},
        mapping_tool=MAPPING_TOOL,
    )


def _run_line(
    line: StrategyLine,
    registry: SynonymRegistry,
    by_source: Mapping[str, list[str]],
    config: RunConfig,
    validator: _TrackingValidator,
    clock: Callable[[], datetime],
    diagnostics: Diagnostics,
) -> tuple[list[MappingRecord], dict[str, object]]:
    started = time.perf_counter()
    type_filter = line.type_filter
    list_a = [registry.augmented(c) for c in by_source.get(line.source_a, ())]
    list_b = [registry.augmented(c) for c in by_source.get(line.source_b, ())]
    list_a = [e for e in list_a if passes_type_filter(e, type_filter)]
    list_b = [e for e in list_b if passes_type_filter(e, type_filter)]
    records: list[MappingRecord] = []

    id_merged = 0
    for pair in resolve_external_ids(list_a, list_b, diagnostics):
        if registry.same(*pair.key):
            continue
        registry.merge(*pair.key)
        records.append(_automatic_record(pair, "identifier_match", clock))
        id_merged += 1

    candidates = list(generate_pairs(list_a, list_b, type_filter, registry))
    auto = filtered = 0
    pending: list[CandidatePair] = []
    for pair in candidates:
        status = apply_criteria(pair, line.criteria)
        if status is PairStatus.FILTERED:
            filtered += 1
        elif status is PairStatus.AUTO_ACCEPTED:
            if not registry.same(*pair.key):
                registry.merge(*pair.key)
                records.append(_automatic_record(pair, "label_match", clock))
                auto += 1
        else:
            pending.append(pair)

    # pairs settled by an earlier auto-accept in this line need no scoring
    pending = [p for p in pending if not registry.same(*p.key)]
    scored = 0
    if line.scores and pending:
        scorer = PairScorer(list_a + list_b, config.encoders, diagnostics)
        for pair in pending:
            if scorer.score_pair(pair, line.scores, config.weights) is not None:
                scored += 1
    validated, stats = run_validation_loop(
        pending, validator, config.validation, registry, clock=clock, mapping_tool=MAPPING_TOOL
    )
    records += validated
    if stats.inconsistencies:
        diagnostics.error(
            "set-inconsistency",
            f"{line.render()}: {len(stats.inconsistencies)} rejected pairs ended in one synonym set",
        )
    report = {
        "line": line.render(),
        "left": len(list_a),
        "right": len(list_b),
        "identifier_merges": id_merged,
        "candidates": len(candidates),
        "auto_accepted": auto,
        "filtered": filtered,
        "scored": scored,
        "validation": stats.to_json(),
        "wall_time_s": round(time.perf_counter() - started, 6),
    }
    return records, report


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def run_pipeline(
    config: RunConfig,
    validator: Callable[[CandidatePair], Verdict] | None = None,
) -> RunResult:
    """Run every strategy line in order and write all outputs to ``config.output_dir``.

    ``validator`` overrides the one selected by ``config.validator``.
    """
    config.check()
    strategy = _load_strategy(config)
    entities = load_entities(config.catalogs, config.patches)
    diagnostics = Diagnostics()
    registry = SynonymRegistry(entities, config.priority)
    by_source: dict[str, list[str]] = {}
    for e in sorted(entities, key=lambda e: e.curie):
        by_source.setdefault(e.source, []).append(e.curie)

    clock = TickingClock(config.now or datetime.now())
    tracking = _TrackingValidator(validator or _make_validator(config))
    records: list[MappingRecord] = []
    line_reports: list[dict[str, object]] = []
    for line in strategy:
        before = tracking.transport_failures
        try:
            line_records, report = _run_line(line, registry, by_source, config, tracking, clock, diagnostics)
        except Exception as exc:
            message = f"strategy line {line.lineno} ({line.render()}): {exc}"
            if not config.keep_going:
                raise LineError(message) from exc
            diagnostics.error("line-failed", message)
            line_reports.append({"line": line.render(), "error": str(exc)})
            continue
        calls = report["validation"]["validator_calls"]
        if calls and tracking.transport_failures - before == calls:
            message = f"strategy line {line.lineno}: validator endpoint failed on every call"
            if not config.keep_going:
                raise PipelineTransportError(message)
            diagnostics.error("transport-failed", message)
        records += line_records
        line_reports.append(report)

    out = Path(config.output_dir)
    outputs = {name: out / filename for name, filename in OUTPUT_FILES.items()}
    _write(outputs["sssom"], emit.emit_sssom(records))
    _write(outputs["sssom_tsv"], emit.emit_sssom_tsv(records))
    _write(outputs["resolver"], emit.resolver_json_text(emit.emit_resolver_json(registry, diagnostics)))
    _write(outputs["facilities"], emit.emit_ivoa_csv(registry))
    _write(outputs["linked_catalog"], emit.emit_linked_catalog(registry, records))

    measures: dict[str, int] = {}
    for r in records:
        measures[r.similarity_measure] = measures.get(r.similarity_measure, 0) + 1
    report = {
        "entities": len(registry),
        "synonym_sets": len(registry.sets()),
        "mappings": len(records),
        "mappings_by_measure": dict(sorted(measures.items())),
        "validator": config.validator if validator is None else getattr(validator, "reviewer_label", "custom"),
        "validator_calls": sum(
            r["validation"]["validator_calls"] for r in line_reports if "validation" in r
        ),
        "rejection_streak_stops": sum(
            1 for r in line_reports if "validation" in r and r["validation"]["stopped_early"]
        ),
        "lines": line_reports,
        "diagnostics": [{"level": d.level, "code": d.code, "message": d.message} for d in diagnostics],
    }
    _write(outputs["report"], json.dumps(report, ensure_ascii=False, indent=2) + "\n")
    return RunResult(registry, records, report, outputs, diagnostics)
