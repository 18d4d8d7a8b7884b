"""Mapping-strategy files.

A strategy is an ordered list of lines, each naming a pair of sources, an
optional class filter and the steps (criteria and scores) to run::

    iaumpc, wikidata[all,-spacecraft]: label_match, identifier, distance, type, levenshtein, tfidf

Blank lines and lines starting with ``#`` are ignored.
"""

from __future__ import annotations

import re
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass
from pathlib import Path

from obsmatch.diagnostics import Diagnostic, Diagnostics
from obsmatch.model import SOURCES, FacilityClass

__all__ = [
    "ACCEPT",
    "REJECT",
    "SCORE",
    "STEPS",
    "Strategy",
    "StrategyError",
    "StrategyLine",
    "canonical_step",
    "parse_strategy",
    "read_strategy",
    "validate_strategy",
]

ACCEPT = "accept"
REJECT = "reject"
SCORE = "score"

#: Registered step names and their kind.
STEPS: dict[str, str] = {
    "label_match": ACCEPT,
    "identifier": REJECT,
    "distance": REJECT,
    "type": REJECT,
    "date": REJECT,
    "aperture": REJECT,
    "levenshtein": SCORE,
    "tfidf": SCORE,
    "digit": SCORE,
    "acronym": SCORE,
    "sentence_transformer": SCORE,
    "llm_embeddings": SCORE,
}

# long-form names from the score table map onto the short names used in strategy files
_STEP_ALIASES = {
    "labelmatch": "label_match",
    "identifier_mismatch": "identifier",
    "distance_limit": "distance",
    "class": "type",
    "type_mismatch": "type",
    "date_mismatch": "date",
    "aperture_mismatch": "aperture",
    "levenshtein_similarity": "levenshtein",
    "tf_idf": "tfidf",
    "digits": "digit",
    "digits_match": "digit",
    "acronym_probability": "acronym",
    "sentence_transformers": "sentence_transformer",
    "llm_embedding": "llm_embeddings",
}

_KNOWN_CLASSES = frozenset(FacilityClass) - {FacilityClass.UNKNOWN}


def canonical_step(name: str) -> str:
    key = re.sub(r"[\s-]+", "_", name.strip().lower())
    return _STEP_ALIASES.get(key, key)


class StrategyError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class StrategyLine:
    source_a: str
    source_b: str
    filter_tokens: tuple[str, ...]
    steps: tuple[str, ...]
    lineno: int = 0

    @property
    def type_filter(self) -> frozenset[FacilityClass] | None:
        """Classes admitted on both sides, or ``None`` for no filter.

        Unknown-class entities always pass and are not listed.
        """
        if not self.filter_tokens:
            return None
        include: set[FacilityClass] = set()
        for i, token in enumerate(self.filter_tokens):
            if token == "all":
                include |= _KNOWN_CLASSES
            elif token.startswith("-"):
                if i == 0:
                    include |= _KNOWN_CLASSES
                include.discard(FacilityClass.parse(token[1:]))
            else:
                include.add(FacilityClass.parse(token))
        include.discard(FacilityClass.UNKNOWN)
        return frozenset(include)

    def steps_of(self, kind: str) -> tuple[str, ...]:
        return tuple(s for s in self.steps if STEPS.get(s) == kind)

    @property
    def criteria(self) -> tuple[str, ...]:
        return tuple(s for s in self.steps if STEPS.get(s) in (ACCEPT, REJECT))

    @property
    def scores(self) -> tuple[str, ...]:
        return self.steps_of(SCORE)

    def render(self) -> str:
        head = f"{self.source_a}, {self.source_b}"
        if self.filter_tokens:
            head += f"[{','.join(self.filter_tokens)}]"
        return f"{head}: {', '.join(self.steps)}"


@dataclass(frozen=True)
class Strategy:
    lines: tuple[StrategyLine, ...] = ()

    def __iter__(self) -> Iterator[StrategyLine]:
        return iter(self.lines)

    def __len__(self) -> int:
        return len(self.lines)

    def render(self) -> str:
        return "".join(line.render() + "\n" for line in self.lines)

    @property
    def sources(self) -> set[str]:
        return {s for line in self.lines for s in (line.source_a, line.source_b)}


_LINE = re.compile(
    r"""\s*(?P<a>[^,\[\]:]+?)\s*,\s*(?P<b>[^,\[\]:]+?)\s*
        (?:\[(?P<filter>[^\[\]]*)\])?\s*:(?P<steps>.*)""",
    re.VERBOSE,
)
_SOURCE = re.compile(r"[A-Za-z0-9_.-]+")


def _parse_filter_token(token: str, lineno: int) -> str:
    token = token.strip().lower()
    name = token[1:].strip() if token.startswith("-") else token
    if name != "all" or token.startswith("-"):
        try:
            FacilityClass.parse(name)
        except ValueError:
            raise StrategyError(f"unknown class {name!r} in filter", lineno) from None
    return f"-{name}" if token.startswith("-") else name


def parse_strategy(
    text: str,
    sources: Iterable[str] | None = SOURCES,
    steps: Mapping[str, str] = STEPS,
) -> Strategy:
    """Parse strategy text; ``sources=None`` skips the source check."""
    known = set(sources) if sources is not None else None
    lines = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        m = _LINE.fullmatch(raw)
        if m is None:
            head = raw.split(":", 1)[0]
            if head.count("[") != head.count("]") or ("[" in head) != ("]" in head):
                raise StrategyError("malformed class filter bracket", lineno)
            if ":" not in raw:
                raise StrategyError("missing ':' between sources and steps", lineno)
            raise StrategyError("expected 'source, source[filter]: step, ...'", lineno)
        a, b = m["a"].strip(), m["b"].strip()
        for src in (a, b):
            if not _SOURCE.fullmatch(src):
                raise StrategyError(f"invalid source name {src!r}", lineno)
            if known is not None and src not in known:
                raise StrategyError(f"unknown source {src!r}", lineno)
        tokens: tuple[str, ...] = ()
        if m["filter"] is not None:
            parts = [t for t in m["filter"].split(",")]
            if not any(p.strip() for p in parts) or any(not p.strip() for p in parts):
                raise StrategyError("empty entry in class filter", lineno)
            tokens = tuple(_parse_filter_token(t, lineno) for t in parts)
        names = [s.strip() for s in m["steps"].split(",")]
        if names == [""]:
            raise StrategyError("empty step list", lineno)
        if any(not n for n in names):
            raise StrategyError("empty step name", lineno)
        parsed_steps = []
        for name in names:
            step = canonical_step(name)
            if step not in steps:
                raise StrategyError(f"unknown step {name!r}", lineno)
            parsed_steps.append(step)
        lines.append(StrategyLine(a, b, tokens, tuple(parsed_steps), lineno))
    return Strategy(tuple(lines))


def read_strategy(path: str | Path, sources: Iterable[str] | None = SOURCES) -> Strategy:
    return parse_strategy(Path(path).read_text(encoding="utf-8"), sources=sources)


def validate_strategy(
    strategy: Strategy,
    known_sources: Iterable[str] = SOURCES,
    step_registry: Mapping[str, str] = STEPS,
) -> list[Diagnostic]:
    """Lint a parsed strategy; findings are returned, never raised."""
    diags = Diagnostics()
    known = set(known_sources)
    seen: list[StrategyLine] = []
    for line in strategy:
        where = f"line {line.lineno}" if line.lineno else line.render()
        for src in (line.source_a, line.source_b):
            if src not in known:
                diags.error("unknown-source", f"{where}: unknown source {src!r}")
        if line.source_a == line.source_b:
            diags.warn("self-pair", f"{where}: source {line.source_a!r} paired with itself")
        for step in line.steps:
            if step not in step_registry:
                diags.error("unknown-step", f"{where}: unknown step {step!r}")
        if not line.steps:
            diags.error("empty-steps", f"{where}: no steps")
        kinds = [step_registry.get(s) for s in line.steps]
        if SCORE in kinds:
            first_score = kinds.index(SCORE)
            late = [s for s, k in zip(line.steps[first_score:], kinds[first_score:]) if k in (ACCEPT, REJECT)]
            if late:
                diags.warn(
                    "ineffective-order",
                    f"{where}: criteria {', '.join(late)} listed after scores",
                )
        pair = {line.source_a, line.source_b}
        classes = line.type_filter if line.type_filter is not None else _KNOWN_CLASSES
        for prev in seen:
            prev_classes = prev.type_filter if prev.type_filter is not None else _KNOWN_CLASSES
            if {prev.source_a, prev.source_b} == pair and classes & prev_classes:
                diags.warn(
                    "duplicate-pair",
                    f"{where}: pair {line.source_a}/{line.source_b} overlaps line {prev.lineno}",
                )
                break
        seen.append(line)
    return list(diags)
