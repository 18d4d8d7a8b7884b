"""Serializers for mapping provenance, the resolver dictionary, the facility
CSV and the linked catalog.

Every emitter is a pure function of its inputs: timestamps come from the
records, never from the wall clock.
"""

from __future__ import annotations

import csv
import io
import json
import uuid
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
from datetime import datetime

from obsmatch.diagnostics import Diagnostics
from obsmatch.ingest import dump_records
from obsmatch.model import SOURCES, Entity, SynonymRegistry, slugify

__all__ = [
    "EXACT_MATCH",
    "LEXICAL_MATCHING",
    "NAMESPACES",
    "MappingRecord",
    "RecordInvariantError",
    "canonical_slugs",
    "emit_ivoa_csv",
    "emit_linked_catalog",
    "emit_resolver_json",
    "emit_sssom",
    "emit_sssom_tsv",
    "mapping_id",
    "resolver_json_text",
]

EXACT_MATCH = "skos:exactMatch"
LEXICAL_MATCHING = "semapv:LexicalMatching"
DEFAULT_TOOL = "obsmatch"

_NS_ROOT = "https://voparis-ns.obspm.fr/rdf/obsfacilities"
NAMESPACES: dict[str, str] = {
    "obsf": f"{_NS_ROOT}#",
    **{src: f"{_NS_ROOT}/{src}#" for src in SOURCES},
    "rdfs": "http://www.w3.org/2000/01/rdf-schema#",
    "semapv": "https://w3id.org/semapv/vocab/",
    "skos": "http://www.w3.org/2004/02/skos/core#",
    "sssom": "https://w3id.org/sssom/",
    "xsd": "http://www.w3.org/2001/XMLSchema#",
}

#: Score name -> SSSOM record property, in output order.
SCORE_FIELDS: dict[str, str] = {
    "label_match": "label_match",
    "identifier_match": "identifier_match",
    "levenshtein": "levenshtein_similarity",
    "weighted_sum": "weighted_sum",
    "tfidf": "tfidf_cosine_similarity",
    "digit": "digits_match",
    "acronym": "acronym_probability",
    "sentence_transformer": "sentence_transformer_cosine_similarity",
    "llm_embeddings": "llm_embeddings_cosine_similarity",
}

_AUTOMATIC = ("label_match", "identifier_match")
_MAPPING_NS = uuid.UUID("6f1c7a52-2f7e-4c55-9a1e-5d3c0b7e4a10")


def mapping_id(subject_id: str, object_id: str, measure: str) -> str:
    """Stable mapping identifier, so reruns produce identical documents."""
    return str(uuid.uuid5(_MAPPING_NS, f"{subject_id}|{object_id}|{measure}"))


class RecordInvariantError(ValueError):
    pass


@dataclass(frozen=True)
class MappingRecord:
    subject_id: str
    object_id: str
    similarity_measure: str
    similarity_score: float
    mapping_date: datetime
    scores: Mapping[str, float] = field(default_factory=dict)
    mapping_tool: str = DEFAULT_TOOL
    reviewer_label: str | None = None
    comment: str | None = None
    predicate: str = EXACT_MATCH
    justification_kind: str = LEXICAL_MATCHING
    id: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            object.__setattr__(self, "id", mapping_id(self.subject_id, self.object_id, self.similarity_measure))

    def check(self) -> None:
        """Raise :class:`RecordInvariantError` naming the first violated invariant."""
        if self.similarity_measure in _AUTOMATIC:
            if self.similarity_score != 1.0:
                raise RecordInvariantError(f"{self.id}: {self.similarity_measure} requires similarity_score 1")
            if self.reviewer_label is not None:
                raise RecordInvariantError(f"{self.id}: {self.similarity_measure} must not carry a reviewer_label")
        elif self.similarity_measure == "weighted_sum":
            if not self.comment:
                raise RecordInvariantError(f"{self.id}: weighted_sum requires a justification comment")
            if not self.reviewer_label:
                raise RecordInvariantError(f"{self.id}: weighted_sum requires a reviewer_label")
        else:
            raise RecordInvariantError(f"{self.id}: unknown similarity_measure {self.similarity_measure!r}")
        if not 0.0 <= self.similarity_score <= 1.0:
            raise RecordInvariantError(f"{self.id}: similarity_score outside [0, 1]")
        unknown = set(self.scores) - set(SCORE_FIELDS)
        if unknown:
            raise RecordInvariantError(f"{self.id}: unknown score fields {sorted(unknown)}")

    @property
    def sort_key(self) -> tuple[datetime, str]:
        return self.mapping_date, self.id


def _float(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def _literal(text: str) -> str:
    escaped = text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\r", "\\r")
    return f'"{escaped}"'


def _timestamp(ts: datetime) -> str:
    return ts.isoformat(timespec="microseconds")


def _header() -> str:
    return "".join(f"@prefix {p}: <{uri}> .\n" for p, uri in NAMESPACES.items())


def _block(r: MappingRecord) -> str:
    props: list[tuple[str, str]] = [("a", "sssom:Mapping")]
    if r.comment:
        props.append(("rdfs:comment", _literal(r.comment)))
    for name, prop in SCORE_FIELDS.items():
        if name in r.scores:
            props.append((f"obsf:{prop}", f'"{_float(r.scores[name])}"^^xsd:float'))
    if r.similarity_measure not in _AUTOMATIC:
        props.append(("sssom:justification", r.justification_kind))
    props += [
        ("sssom:mapping_date", f'"{_timestamp(r.mapping_date)}"^^xsd:dateTimeStamp'),
        ("sssom:mapping_tool", _literal(r.mapping_tool)),
        ("sssom:object_id", r.object_id),
        ("sssom:predicate_id", r.predicate),
    ]
    if r.reviewer_label:
        props.append(("sssom:reviewer_label", _literal(r.reviewer_label)))
    props += [
        ("sssom:similarity_measure", _literal(r.similarity_measure)),
        ("sssom:similarity_score", f'"{_float(r.similarity_score)}"^^xsd:float'),
        ("sssom:subject_id", r.subject_id),
    ]
    head, *rest = props
    lines = [f"obsf:{r.id} {head[0]} {head[1]} ;"]
    lines += [f"    {p} {o} ;" for p, o in rest[:-1]]
    lines.append(f"    {rest[-1][0]} {rest[-1][1]} .")
    return "\n".join(lines) + "\n"


def _checked(records: Iterable[MappingRecord]) -> list[MappingRecord]:
    records = sorted(records, key=lambda r: r.sort_key)
    seen: set[str] = set()
    for r in records:
        r.check()
        if r.id in seen:
            raise RecordInvariantError(f"{r.id}: duplicate mapping id")
        seen.add(r.id)
    return records


def emit_sssom(records: Iterable[MappingRecord]) -> str:
    """Turtle-style SSSOM document, one block per mapping."""
    blocks = [_block(r) for r in _checked(records)]
    return _header() + "".join("\n" + b for b in blocks)


_TSV_COLUMNS = (
    "subject_id",
    "predicate_id",
    "object_id",
    "mapping_justification",
    "similarity_measure",
    "similarity_score",
    "mapping_date",
    "mapping_tool",
    "reviewer_label",
    "comment",
    "other",
)


def emit_sssom_tsv(records: Iterable[MappingRecord]) -> str:
    """SSSOM table form with an embedded ``curie_map`` header."""
    out = io.StringIO()
    out.write("# curie_map:\n")
    for prefix, uri in NAMESPACES.items():
        out.write(f"#   {prefix}: {uri}\n")
    writer = csv.writer(out, delimiter="\t", lineterminator="\n")
    writer.writerow(_TSV_COLUMNS)
    for r in _checked(records):
        other = "|".join(
            f"{SCORE_FIELDS[n]}={_float(r.scores[n])}" for n in SCORE_FIELDS if n in r.scores
        )
        writer.writerow(
            [
                r.subject_id,
                r.predicate,
                r.object_id,
                r.justification_kind,
                r.similarity_measure,
                _float(r.similarity_score),
                _timestamp(r.mapping_date),
                r.mapping_tool,
                r.reviewer_label or "",
                (r.comment or "").replace("\n", " "),
                other,
            ]
        )
    return out.getvalue()


# --- set-level views ----------------------------------------------------------


def canonical_slugs(registry: SynonymRegistry) -> dict[str, str]:
    """Synonym-set root -> unique slug derived from the set's preferred label."""
    sets = registry.sets()
    # on a slug clash the set whose preferred label comes from the stronger source wins
    rank = {src: i for i, src in enumerate(registry.priority)}
    order = sorted(
        sets,
        key=lambda s: (slugify(s.pref_label), rank.get(s.pref_source, len(rank)), s.representative),
    )
    taken: set[str] = set()
    out = {}
    for s in order:
        slug = slugify(s.pref_label, taken, fallback_id=s.pref_source)
        taken.add(slug)
        out[s.representative] = slug
    return out


def _alias_order(pref: str, aliases: Iterable[str]) -> list[str]:
    aliases = set(aliases)
    rest = sorted(aliases - {pref}, key=lambda a: (a.casefold(), a))
    return [pref, *rest] if pref in aliases else rest


def emit_resolver_json(
    registry: SynonymRegistry,
    diagnostics: Diagnostics | None = None,
) -> dict[str, list[str]]:
    """Slug -> aliases of each synonym set, preferred label first.

    Aliases are every label, notation and external identifier of the members.
    An alias claimed by several sets gets exactly one owner: the set whose
    preferred label it is, otherwise any claimant, ties going to the set that
    won its slug first (source priority, then representative). A set that
    cedes its own preferred label lists only its remaining aliases.
    """
    slugs = canonical_slugs(registry)
    precedence = {slug: i for i, slug in enumerate(slugs.values())}
    entries: dict[str, tuple[str, set[str]]] = {}
    for s in registry.sets():
        aliases: set[str] = set()
        for m in s.members:
            e = registry.entities[m]
            aliases |= e.labels
            aliases |= set(e.external_ids.values())
        entries[slugs[s.representative]] = (s.pref_label, aliases)

    claims: dict[str, list[str]] = {}
    for slug in sorted(entries):
        for alias in entries[slug][1]:
            claims.setdefault(alias, []).append(slug)
    for alias, owners in sorted(claims.items()):
        if len(owners) < 2:
            continue
        preferred_by = [s for s in owners if entries[s][0] == alias]
        keep = min(preferred_by or owners, key=precedence.__getitem__)
        for slug in owners:
            if slug != keep:
                entries[slug][1].discard(alias)
        if diagnostics is not None:
            diagnostics.warn("shared-alias", f"{alias!r} claimed by {', '.join(owners)}; kept by {keep}")
    return {slug: _alias_order(pref, aliases) for slug, (pref, aliases) in sorted(entries.items())}


def resolver_json_text(dictionary: Mapping[str, list[str]]) -> str:
    return json.dumps(dictionary, ensure_ascii=False, indent=2, sort_keys=True) + "\n"


IVOA_COLUMNS = ("term", "label", "parent", "deprecated")


def emit_ivoa_csv(registry: SynonymRegistry) -> str:
    """One row per synonym set with its parents via meronymy, sorted by slug."""
    slugs = canonical_slugs(registry)
    rows = []
    for s in registry.sets():
        parents = set()
        for m in s.members:
            for p in registry.entities[m].part_of:
                if p in registry and not registry.same(p, m):
                    parents.add(slugs[registry.find(p)])
        deprecated = all(registry.entities[m].deprecated for m in s.members)
        rows.append((slugs[s.representative], s.pref_label, " ".join(sorted(parents)), "true" if deprecated else ""))
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(IVOA_COLUMNS)
    writer.writerows(sorted(rows))
    return out.getvalue()


def emit_linked_catalog(
    registry: SynonymRegistry,
    records: Iterable[MappingRecord] = (),
) -> str:
    """Canonical records for every entity, with exact-match edges to the rest of its set.

    Edges from ``records`` are added too, which only matters for records whose
    ends are not (or no longer) merged in ``registry``.
    """
    edges: dict[str, set[str]] = {}
    for r in records:
        edges.setdefault(r.subject_id, set()).add(r.object_id)
        edges.setdefault(r.object_id, set()).add(r.subject_id)
    out: list[Entity] = []
    for curie in sorted(registry.entities):
        entity = registry.entities[curie]
        matches = (registry.members(curie) | edges.get(curie, set())) - {curie}
        if matches - entity.exact_match:
            entity = replace(entity, exact_match=entity.exact_match | matches)
        out.append(entity)
    return dump_records(out)
