"""Ranking and the iterative accept/reject validation loop.

A validator is any callable ``pair -> Verdict``. It may raise
:class:`ValidationDeferred` to leave a pair undecided; deferred pairs stay
Pending and do not count toward the rejection streak.
"""

from __future__ import annotations

import enum
import json
import logging
import re
import time
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field
from datetime import datetime

import httpx

from obsmatch.emit import MappingRecord
from obsmatch.matcher import CandidatePair, PairStatus
from obsmatch.model import Entity, FacilityClass, SynonymRegistry

__all__ = [
    "ChatTransport",
    "Decision",
    "GroundTruthValidator",
    "HttpChatTransport",
    "LlmValidator",
    "RuleValidator",
    "TransportError",
    "ValidationConfig",
    "ValidationDeferred",
    "ValidationStats",
    "Verdict",
    "build_prompt",
    "llm_validate",
    "rank_pairs",
    "rule_validate",
    "run_validation_loop",
]

logger = logging.getLogger(__name__)

RULE_REVIEWER = "rule-validator"


class Decision(str, enum.Enum):
    SAME = "Same"
    DISTINCT = "Distinct"


@dataclass(frozen=True)
class Verdict:
    decision: Decision
    justification: str
    reviewer_label: str

    @property
    def same(self) -> bool:
        return self.decision is Decision.SAME


@dataclass(frozen=True)
class ValidationConfig:
    stop_after_consecutive_rejections: int = 20
    rule_threshold: float = 0.85

    def __post_init__(self) -> None:
        if self.stop_after_consecutive_rejections < 1:
            raise ValueError("stop_after_consecutive_rejections must be >= 1")


class ValidationDeferred(Exception):
    """The validator could not decide; the pair stays Pending."""


class TransportError(RuntimeError):
    pass


# --- prompt ---------------------------------------------------------------------

_INSTRUCTION = (
    "You are checking a proposed alignment between two catalogue records of "
    "astronomical observation facilities (telescopes, observatories, spacecraft, "
    "airborne platforms, missions). Decide whether record A and record B describe "
    "the same physical facility."
)
_CAVEAT = (
    "A narrower entity must be treated as distinct from its broader entity: an "
    "instrument or telescope is not the observatory hosting it, and a spacecraft "
    "is not the mission it belongs to."
)
_SCHEMA = (
    "Answer format: the first word must be SAME or DISTINCT; follow it with one "
    "line justifying the decision."
)
_REMINDER = "Your previous answer could not be read. Start your reply with SAME or DISTINCT."


def _fmt(value: float) -> str:
    return f"{value:g}" if abs(value) < 1e6 else repr(value)


def _entity_fields(e: Entity) -> list[tuple[str, str]]:
    rows: list[tuple[str, str]] = [("id", e.curie), ("source", e.source), ("preferred label", e.pref_label)]
    if e.alt_labels:
        rows.append(("alternative labels", "; ".join(sorted(e.alt_labels))))
    if e.notations:
        rows.append(("notations", "; ".join(sorted(e.notations))))
    if e.facility_class is not FacilityClass.UNKNOWN:
        rows.append(("class", e.facility_class.value))
    for scheme in sorted(e.external_ids, key=lambda s: s.value):
        rows.append((f"{scheme.value} id", e.external_ids[scheme]))
    if e.description:
        rows.append(("description", " ".join(e.description.split())))
    if e.location_name:
        rows.append(("location", e.location_name))
    for name, value in (("latitude", e.latitude), ("longitude", e.longitude), ("altitude", e.altitude)):
        if value is not None:
            rows.append((name, _fmt(value)))
    if e.aperture_text:
        rows.append(("aperture", e.aperture_text))
    elif e.aperture is not None:
        rows.append(("aperture", f"{_fmt(e.aperture)}m"))
    for name in ("launch_year", "start_year", "end_year"):
        value = getattr(e, name)
        if value is not None:
            rows.append((name.replace("_", " "), str(value)))
    if e.wavebands:
        rows.append(("wavebands", ", ".join(sorted(e.wavebands))))
    if e.funding_agency:
        rows.append(("funding agency", e.funding_agency))
    if e.part_of:
        rows.append(("part of", ", ".join(sorted(e.part_of))))
    if e.url:
        rows.append(("url", e.url))
    return rows


def build_prompt(pair: CandidatePair) -> str:
    """Deterministic validation prompt listing every populated field of both entities."""
    parts = [_INSTRUCTION, _CAVEAT, ""]
    for name, entity in (("A", pair.left), ("B", pair.right)):
        parts.append(f"Entity {name}:")
        parts += [f"  {k}: {v}" for k, v in _entity_fields(entity)]
        parts.append("")
    parts.append(_SCHEMA)
    return "\n".join(parts) + "\n"


# --- validators -----------------------------------------------------------------


def rule_validate(pair: CandidatePair, config: ValidationConfig) -> Verdict:
    if pair.label_matched:
        return Verdict(Decision.SAME, "label match: the entities share a label", RULE_REVIEWER)
    score = pair.global_score
    if score is None:
        raise ValueError(f"{pair.key}: rule validation needs a global score")
    if score >= config.rule_threshold:
        return Verdict(
            Decision.SAME,
            f"global score {score:.4f} >= threshold {config.rule_threshold}",
            RULE_REVIEWER,
        )
    return Verdict(
        Decision.DISTINCT,
        f"global score {score:.4f} < threshold {config.rule_threshold}",
        RULE_REVIEWER,
    )


@dataclass
class RuleValidator:
    config: ValidationConfig = field(default_factory=ValidationConfig)
    calls: int = 0

    def __call__(self, pair: CandidatePair) -> Verdict:
        self.calls += 1
        return rule_validate(pair, self.config)


class GroundTruthValidator:
    """Replays annotated decisions; used to re-run an evaluation offline."""

    reviewer_label = "ground-truth"

    def __init__(self, truth: Mapping[tuple[str, str], bool]):
        self.truth = dict(truth)
        self.calls = 0

    def __call__(self, pair: CandidatePair) -> Verdict:
        self.calls += 1
        key = pair.key
        if key not in self.truth:
            key = (key[1], key[0])
        if key not in self.truth:
            raise ValidationDeferred(f"no annotation for {pair.key}")
        decision = Decision.SAME if self.truth[key] else Decision.DISTINCT
        return Verdict(decision, f"annotated {decision.value.lower()}", self.reviewer_label)


class ChatTransport:
    """Sends one prompt, returns the model's text reply. Raises :class:`TransportError`."""

    model: str

    def complete(self, prompt: str) -> str:  # pragma: no cover - interface
        raise NotImplementedError


class HttpChatTransport(ChatTransport):
    """Chat-completion style endpoint (``POST {base_url}/chat/completions``).

    Request and response bodies are logged for audit with the API key redacted.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 120.0,
        retries: int = 2,
        client: httpx.Client | None = None,
    ):
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model = model
        self.timeout = timeout
        self.retries = retries
        self._api_key = api_key
        self._client = client or httpx.Client(timeout=timeout)

    def _redact(self, text: str) -> str:
        return text.replace(self._api_key, "***") if self._api_key else text

    def complete(self, prompt: str) -> str:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }
        headers = {"Authorization": f"Bearer {self._api_key}"} if self._api_key else {}
        logger.info("llm request %s", self._redact(json.dumps(body, ensure_ascii=False)))
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = self._client.post(self.url, json=body, headers=headers, timeout=self.timeout)
                resp.raise_for_status()
                data = resp.json()
                logger.info("llm response %s", self._redact(json.dumps(data, ensure_ascii=False)))
                return data["choices"][0]["message"]["content"]
            except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as exc:
                last = exc
                logger.warning("llm attempt %d failed: %s", attempt + 1, self._redact(str(exc)))
                if attempt < self.retries:
                    time.sleep(min(0.5 * 2**attempt, 4.0))
        raise TransportError(f"chat endpoint unavailable: {self._redact(str(last))}")


_ANSWER = re.compile(r"\W*(same|distinct)\b\W*(.*)", re.IGNORECASE | re.DOTALL)


def _parse_answer(text: str, reviewer: str) -> Verdict | None:
    m = _ANSWER.match(text)
    if m is None:
        return None
    decision = Decision.SAME if m.group(1).lower() == "same" else Decision.DISTINCT
    justification = " ".join(m.group(2).split()) or f"model answered {decision.value.upper()}"
    return Verdict(decision, justification, reviewer)


def llm_validate(pair: CandidatePair, transport: ChatTransport) -> Verdict:
    """Ask the model; one reprompt on an unreadable answer, then defer."""
    prompt = build_prompt(pair)
    for attempt in range(2):
        try:
            reply = transport.complete(prompt if attempt == 0 else f"{prompt}\n{_REMINDER}\n")
        except TransportError as exc:
            raise ValidationDeferred(str(exc)) from exc
        verdict = _parse_answer(reply, transport.model)
        if verdict is not None:
            return verdict
        logger.warning("unparseable answer for %s / %s: %r", *pair.key, reply[:200])
    raise ValidationDeferred(f"{pair.key}: unparseable answer after reprompt")


class LlmValidator:
    def __init__(self, transport: ChatTransport):
        self.transport = transport
        self.calls = 0

    def __call__(self, pair: CandidatePair) -> Verdict:
        self.calls += 1
        return llm_validate(pair, self.transport)


# --- loop -----------------------------------------------------------------------


@dataclass
class ValidationStats:
    ranked: int = 0
    unscored: int = 0
    calls: int = 0
    accepted: int = 0
    rejected: int = 0
    deferred: int = 0
    skipped: int = 0
    pending: int = 0
    stopped_early: bool = False
    stop_after: int = 0
    inconsistencies: list[tuple[str, str]] = field(default_factory=list)

    def to_json(self) -> dict[str, object]:
        return {
            "ranked": self.ranked,
            "unscored": self.unscored,
            "validator_calls": self.calls,
            "accepted": self.accepted,
            "rejected": self.rejected,
            "deferred": self.deferred,
            "skipped_transitive": self.skipped,
            "left_pending": self.pending,
            "stopped_early": self.stopped_early,
            "stop_after_consecutive_rejections": self.stop_after,
            "set_inconsistencies": [list(p) for p in self.inconsistencies],
        }


def rank_pairs(pairs: Iterable[CandidatePair]) -> list[CandidatePair]:
    """Scored pairs by global score, highest first; ties by (left, right) CURIE."""
    scored = [p for p in pairs if p.global_score is not None]
    return sorted(scored, key=lambda p: (-p.global_score, p.key))


def run_validation_loop(
    pairs: Iterable[CandidatePair],
    validator: Callable[[CandidatePair], Verdict],
    config: ValidationConfig,
    registry: SynonymRegistry,
    clock: Callable[[], datetime] = datetime.now,
    mapping_tool: str = "obsmatch",
) -> tuple[list[MappingRecord], ValidationStats]:
    pairs = list(pairs)
    ranked = rank_pairs(pairs)
    stats = ValidationStats(
        ranked=len(ranked),
        unscored=len(pairs) - len(ranked),
        stop_after=config.stop_after_consecutive_rejections,
    )
    records: list[MappingRecord] = []
    rejected: list[tuple[str, str]] = []
    streak = 0
    for i, pair in enumerate(ranked):
        left, right = pair.key
        if registry.same(left, right):
            stats.skipped += 1
            continue
        stats.calls += 1
        try:
            verdict = validator(pair)
        except ValidationDeferred as exc:
            logger.warning("deferred %s / %s: %s", left, right, exc)
            stats.deferred += 1
            continue
        if verdict.same:
            registry.merge(left, right)
            pair.status = PairStatus.VALIDATED
            stats.accepted += 1
            streak = 0
            scores = {**pair.scores, "weighted_sum": pair.global_score}
            records.append(
                MappingRecord(
                    subject_id=left,
                    object_id=right,
                    similarity_measure="weighted_sum",
                    similarity_score=pair.global_score,
                    mapping_date=clock(),
                    scores=scores,
                    mapping_tool=mapping_tool,
                    reviewer_label=verdict.reviewer_label,
                    comment=verdict.justification,
                )
            )
        else:
            pair.status = PairStatus.REJECTED
            stats.rejected += 1
            streak += 1
            rejected.append((left, right))
            if streak >= config.stop_after_consecutive_rejections:
                stats.stopped_early = True
                stats.pending = len(ranked) - i - 1
                break
    stats.inconsistencies = [p for p in rejected if registry.same(*p)]
    return records, stats
