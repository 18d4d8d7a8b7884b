"""Canonical record I/O, string-parsing enrichment and version deltas."""

from __future__ import annotations

import json
import re
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, fields, replace
from datetime import datetime
from pathlib import Path

from obsmatch.model import Entity, FacilityClass, IdScheme, slugify

__all__ = [
    "CatalogSnapshot",
    "RecordError",
    "VersionDelta",
    "apply_delta",
    "apply_patches",
    "diff_snapshots",
    "dump_records",
    "enrich",
    "entity_from_record",
    "entity_to_record",
    "format_aperture",
    "load_catalog",
    "load_patches",
    "load_snapshot",
    "parse_aperture",
    "parse_label_enrichment",
    "parse_spacecraft_alias",
    "read_snapshot",
]

_ID_KEYS = {
    "naif_id": IdScheme.NAIF,
    "cospar_id": IdScheme.COSPAR,
    "nssdca_id": IdScheme.NSSDCA,
    "mpc_id": IdScheme.MPC,
}

# serialization order; anything else round-trips through Entity.extras
RESERVED_KEYS = (
    "uri",
    "source",
    "pref_label",
    "alt_labels",
    "notations",
    "class",
    "naif_id",
    "cospar_id",
    "nssdca_id",
    "mpc_id",
    "lat",
    "lon",
    "alt",
    "location",
    "aperture",
    "launch_year",
    "start_year",
    "end_year",
    "wavebands",
    "funding_agency",
    "description",
    "part_of",
    "exact_match",
    "url",
    "type_confidence",
    "location_confidence",
    "modified",
    "deprecated",
)


class RecordError(ValueError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.detail = message
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


@dataclass(frozen=True)
class CatalogSnapshot:
    source: str | None
    fetched_at: datetime | None = None
    records: tuple[Entity, ...] = ()

    def by_uri(self) -> dict[str, Entity]:
        return {e.uri: e for e in self.records}

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


@dataclass(frozen=True)
class VersionDelta:
    modified: frozenset[str] = frozenset()
    added: frozenset[str] = frozenset()
    deprecated: frozenset[str] = frozenset()

    def __bool__(self) -> bool:
        return bool(self.modified or self.added or self.deprecated)

    def to_json(self) -> dict[str, list[str]]:
        return {
            "modified": sorted(self.modified),
            "added": sorted(self.added),
            "deprecated": sorted(self.deprecated),
        }


# --- aperture -----------------------------------------------------------------

_APERTURE = re.compile(r"(?<![\w.,])(\d+(?:[.,]\d+)?)\s?-?\s?m(?![A-Za-z0-9])")


def parse_aperture(text: str) -> float | None:
    """First ``<number> m`` token in ``text``, in meters."""
    m = _APERTURE.search(text)
    if m is None:
        return None
    return float(m.group(1).replace(",", "."))


def format_aperture(meters: float) -> str:
    return f"{meters:g}m"


# --- label enrichment ---------------------------------------------------------

_PAREN = re.compile(r"\s*\(([^()]*)\)")
_FORMERLY = re.compile(r"(.+?)\s+formerly\s+(.+?)(?:\s+or\s+(.+))?", re.IGNORECASE)
_BOILERPLATE = re.compile(r"\s+Satellite Mission$", re.IGNORECASE)


def parse_label_enrichment(full_label: str) -> tuple[str, frozenset[str], float | None]:
    """Mine aliases and an aperture out of a verbose facility label.

    Handles the parenthetical idioms ``(X)``, ``(X formerly Y)`` and
    ``(X formerly Y or Z)``; trailing "Satellite Mission" boilerplate is
    dropped from the cleaned label.

    >>> parse_label_enrichment("Plain Name")
    ('Plain Name', frozenset(), None)
    """
    aperture = parse_aperture(full_label)
    aliases: set[str] = set()
    clean = full_label
    m = _PAREN.search(full_label)
    inner = m.group(1).strip() if m else ""
    if m and inner:
        prefix = full_label[: m.start()].strip()
        suffix = full_label[m.end() :].strip()
        parts = _FORMERLY.fullmatch(inner)
        if parts:
            head, former, other = (p.strip() if p else None for p in parts.groups())
            aliases.update({head, former})
            if other:
                aliases.update({other, f"{former} ({other})"})
        else:
            head = inner
            aliases.add(head)
        if prefix:
            aliases.add(f"{prefix} ({head})")
        clean = f"{prefix} {suffix}".strip() if prefix else full_label
    clean = _BOILERPLATE.sub("", clean).strip() or full_label
    aliases.discard(clean)
    aliases.discard("")
    return clean, frozenset(aliases), aperture


_COSPAR = re.compile(r"\s*((\d{4})-\d{3}[A-Z]{1,3})\s*")


def parse_spacecraft_alias(alias: str) -> tuple[str | None, int | None]:
    """Recognize an international designator such as ``1980-090A``.

    Returns the identifier and the launch year it encodes.
    """
    m = _COSPAR.fullmatch(alias)
    if m is None:
        return None, None
    return m.group(1), int(m.group(2))


def enrich(entity: Entity) -> Entity:
    """Apply string-parsing enrichment; idempotent."""
    clean, aliases, aperture = parse_label_enrichment(entity.pref_label)
    alt = set(entity.alt_labels) | aliases
    # a cleaned label may still carry a parenthetical; parse until stable
    for _ in range(len(entity.pref_label)):
        again, more, _ap = parse_label_enrichment(clean)
        if again == clean and more <= alt:
            break
        alt |= more
        if again != clean:
            alt.add(clean)
        clean = again
    changes: dict[str, object] = {}
    if clean != entity.pref_label:
        alt.add(entity.pref_label)
        changes["pref_label"] = clean
    if entity.aperture is None and aperture is not None:
        changes["aperture"] = aperture
        changes["aperture_text"] = format_aperture(aperture)

    ids = dict(entity.external_ids)
    launch_year = entity.launch_year
    for alias in sorted(alt | entity.notations):
        ident, year = parse_spacecraft_alias(alias)
        if ident is None:
            continue
        ids.setdefault(IdScheme.NSSDCA, ident)
        if launch_year is None:
            launch_year = year
    if ids != dict(entity.external_ids):
        changes["external_ids"] = ids
    if launch_year != entity.launch_year:
        changes["launch_year"] = launch_year
    alt.discard(changes.get("pref_label", entity.pref_label))
    if alt != set(entity.alt_labels):
        changes["alt_labels"] = frozenset(alt)
    return replace(entity, **changes) if changes else entity


# --- record <-> entity --------------------------------------------------------


def _curie(ref: str, source: str) -> str:
    return ref if ":" in ref else f"{source}:{ref}"


def _str_set(record: Mapping, key: str) -> frozenset[str]:
    value = record.get(key)
    if value is None:
        return frozenset()
    if isinstance(value, str):
        return frozenset({value})
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise RecordError("expected a list of strings", field=key)
    return frozenset(value)


def _float(record: Mapping, key: str) -> float | None:
    value = record.get(key)
    if value is None or value == "":
        return None
    try:
        return float(value)
    except (TypeError, ValueError):
        raise RecordError(f"not a number: {value!r}", field=key) from None


def _year(record: Mapping, key: str) -> int | None:
    value = record.get(key)
    if value is None or value == "":
        return None
    try:
        return int(value)
    except (TypeError, ValueError):
        raise RecordError(f"not a year: {value!r}", field=key) from None


def _opt_str(record: Mapping, key: str) -> str | None:
    value = record.get(key)
    if value is None:
        return None
    if not isinstance(value, str):
        raise RecordError("expected a string", field=key)
    return value


def entity_from_record(record: Mapping, taken: Iterable[str] = ()) -> Entity:
    """Build an :class:`Entity` from one canonical record."""
    if not isinstance(record, Mapping):
        raise RecordError("record is not an object")
    source = record.get("source")
    if not isinstance(source, str) or not source:
        raise RecordError("missing source", field="source")
    pref = record.get("pref_label")
    if not isinstance(pref, str) or not pref.strip():
        raise RecordError("missing pref_label", field="pref_label")
    ids = {}
    for key, scheme in _ID_KEYS.items():
        if record.get(key) not in (None, ""):
            ids[scheme] = str(record[key])
    uri = record.get("uri")
    if not uri:
        native = next((ids[s] for s in IdScheme if s in ids), None)
        uri = slugify(pref, taken, fallback_id=native)
    elif not isinstance(uri, str):
        raise RecordError("expected a string", field="uri")

    aperture_text = record.get("aperture")
    aperture = None
    if isinstance(aperture_text, (int, float)) and not isinstance(aperture_text, bool):
        aperture = float(aperture_text)
        aperture_text = format_aperture(aperture)
    elif isinstance(aperture_text, str) and aperture_text:
        aperture = parse_aperture(aperture_text)
        if aperture is None:
            try:
                aperture = float(aperture_text)
            except ValueError:
                raise RecordError(f"unreadable aperture {aperture_text!r}", field="aperture") from None
    elif aperture_text not in (None, ""):
        raise RecordError("expected a string or number", field="aperture")
    else:
        aperture_text = None

    modified = record.get("modified")
    if modified is not None:
        try:
            modified = datetime.fromisoformat(modified)
        except (TypeError, ValueError):
            raise RecordError(f"bad timestamp {modified!r}", field="modified") from None
    deprecated = record.get("deprecated", False)
    if not isinstance(deprecated, bool):
        raise RecordError("expected true/false", field="deprecated")
    try:
        facility_class = FacilityClass.parse(record.get("class"))
    except ValueError as exc:
        raise RecordError(str(exc), field="class") from None

    latitude = _float(record, "lat")
    if latitude is not None and not -90.0 <= latitude <= 90.0:
        raise RecordError(f"latitude {latitude} outside [-90, 90]", field="lat")
    extras = {k: v for k, v in record.items() if k not in RESERVED_KEYS}
    return Entity(
        uri=uri,
        source=source,
        pref_label=pref,
        alt_labels=_str_set(record, "alt_labels"),
        notations=_str_set(record, "notations"),
        facility_class=facility_class,
        external_ids=ids,
        latitude=latitude,
        longitude=_float(record, "lon"),
        altitude=_float(record, "alt"),
        location_name=_opt_str(record, "location"),
        aperture=aperture,
        aperture_text=aperture_text,
        launch_year=_year(record, "launch_year"),
        start_year=_year(record, "start_year"),
        end_year=_year(record, "end_year"),
        wavebands=_str_set(record, "wavebands"),
        funding_agency=_opt_str(record, "funding_agency"),
        description=_opt_str(record, "description"),
        part_of=frozenset(_curie(p, source) for p in _str_set(record, "part_of")),
        exact_match=frozenset(_curie(p, source) for p in _str_set(record, "exact_match")),
        url=_opt_str(record, "url"),
        modified=modified,
        deprecated=deprecated,
        type_confidence=_float(record, "type_confidence"),
        location_confidence=_float(record, "location_confidence"),
        extras=extras,
    )


def entity_to_record(entity: Entity) -> dict[str, object]:
    """Canonical record for an entity; empty fields are omitted."""
    ids = entity.external_ids
    values: dict[str, object] = {
        "uri": entity.uri,
        "source": entity.source,
        "pref_label": entity.pref_label,
        "alt_labels": sorted(entity.alt_labels),
        "notations": sorted(entity.notations),
        "class": entity.facility_class.value if entity.facility_class is not FacilityClass.UNKNOWN else None,
        "naif_id": ids.get(IdScheme.NAIF),
        "cospar_id": ids.get(IdScheme.COSPAR),
        "nssdca_id": ids.get(IdScheme.NSSDCA),
        "mpc_id": ids.get(IdScheme.MPC),
        "lat": entity.latitude,
        "lon": entity.longitude,
        "alt": entity.altitude,
        "location": entity.location_name,
        "aperture": entity.aperture_text,
        "launch_year": entity.launch_year,
        "start_year": entity.start_year,
        "end_year": entity.end_year,
        "wavebands": sorted(entity.wavebands),
        "funding_agency": entity.funding_agency,
        "description": entity.description,
        "part_of": sorted(entity.part_of),
        "exact_match": sorted(entity.exact_match),
        "url": entity.url,
        "type_confidence": entity.type_confidence,
        "location_confidence": entity.location_confidence,
        "modified": entity.modified.isoformat(timespec="microseconds") if entity.modified else None,
        "deprecated": entity.deprecated or None,
    }
    record = {k: v for k, v in values.items() if v not in (None, [])}
    for key in sorted(entity.extras):
        record[key] = entity.extras[key]
    return record


def dump_records(entities: Iterable[Entity]) -> str:
    """Line-delimited JSON, one record per line, in the given order."""
    return "".join(
        json.dumps(entity_to_record(e), ensure_ascii=False, separators=(",", ":")) + "\n"
        for e in entities
    )


# --- snapshots ----------------------------------------------------------------


def _parse_lines(stream: Iterable[str]) -> list[tuple[int, Entity]]:
    taken: dict[str, set[str]] = {}
    seen: dict[str, int] = {}
    out = []
    for lineno, line in enumerate(stream, 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RecordError(f"invalid JSON: {exc.msg}", line=lineno) from None
        try:
            source = record.get("source") if isinstance(record, dict) else None
            entity = entity_from_record(record, taken.setdefault(source, set()))
        except RecordError as exc:
            raise RecordError(exc.detail, line=lineno, field=exc.field) from None
        key = entity.curie
        if key in seen:
            raise RecordError(f"duplicate uri {key} (first defined on line {seen[key]})", line=lineno, field="uri")
        seen[key] = lineno
        taken[entity.source].add(entity.uri)
        out.append((lineno, entity))
    return out


def load_snapshot(
    stream: Iterable[str],
    source: str | None = None,
    fetched_at: datetime | None = None,
) -> CatalogSnapshot:
    """Parse canonical records belonging to a single source."""
    parsed = _parse_lines(stream)
    for lineno, entity in parsed:
        if source is None:
            source = entity.source
        elif entity.source != source:
            raise RecordError(
                f"record source {entity.source!r} differs from snapshot source {source!r}",
                line=lineno,
                field="source",
            )
    return CatalogSnapshot(source=source, fetched_at=fetched_at, records=tuple(e for _, e in parsed))


def load_catalog(stream: Iterable[str]) -> dict[str, CatalogSnapshot]:
    """Parse a mixed-source file (e.g. a linked catalog) into one snapshot per source."""
    grouped: dict[str, list[Entity]] = {}
    for _, entity in _parse_lines(stream):
        grouped.setdefault(entity.source, []).append(entity)
    return {s: CatalogSnapshot(source=s, records=tuple(es)) for s, es in grouped.items()}


def read_snapshot(path: str | Path, source: str | None = None) -> CatalogSnapshot:
    with open(path, encoding="utf-8") as fh:
        return load_snapshot(fh, source=source)


_VOLATILE = {"modified", "deprecated", "extras"}
_SEMANTIC_FIELDS = tuple(f.name for f in fields(Entity) if f.name not in _VOLATILE)


def _semantic(entity: Entity) -> tuple:
    return tuple(getattr(entity, name) for name in _SEMANTIC_FIELDS)


def diff_snapshots(old: CatalogSnapshot, new: CatalogSnapshot, now: datetime | None = None) -> VersionDelta:
    """Field-level comparison of two snapshots of one source.

    ``now`` is accepted for symmetry with :func:`apply_delta`; the delta itself
    carries no timestamps.
    """
    if old.source is not None and new.source is not None and old.source != new.source:
        raise ValueError(f"cannot diff snapshots of {old.source!r} and {new.source!r}")
    before = old.by_uri()
    after = new.by_uri()
    modified = set()
    added = set()
    for uri, entity in after.items():
        prev = before.get(uri)
        if prev is None:
            added.add(uri)
        elif prev.deprecated or _semantic(prev) != _semantic(entity):
            modified.add(uri)
    deprecated = {uri for uri, e in before.items() if uri not in after and not e.deprecated}
    return VersionDelta(frozenset(modified), frozenset(added), frozenset(deprecated))


def apply_delta(old: CatalogSnapshot, new: CatalogSnapshot, delta: VersionDelta, now: datetime) -> CatalogSnapshot:
    """Reconcile ``new`` against ``old``: stamp changes, keep and flag vanished entities."""
    before = old.by_uri()
    records = []
    for entity in new.records:
        if entity.uri in delta.modified or entity.uri in delta.added:
            records.append(replace(entity, modified=now, deprecated=False))
        else:
            prev = before[entity.uri]
            records.append(replace(entity, modified=prev.modified, deprecated=False))
    new_uris = {e.uri for e in new.records}
    for entity in old.records:
        if entity.uri in new_uris:
            continue
        if entity.uri in delta.deprecated:
            records.append(replace(entity, deprecated=True, modified=now))
        else:
            records.append(entity)
    return CatalogSnapshot(source=new.source or old.source, fetched_at=new.fetched_at, records=tuple(records))


def load_patches(path: str | Path) -> dict[str, dict[str, object]]:
    """Curation overrides: ``{"<source>:<uri>": {"<record key>": value, ...}}``."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or not all(isinstance(v, dict) for v in data.values()):
        raise RecordError("patch file must map CURIEs to field overrides")
    return data


def apply_patches(entities: Iterable[Entity], patches: Mapping[str, Mapping[str, object]]) -> list[Entity]:
    out = []
    for entity in entities:
        patch = patches.get(entity.curie)
        if patch:
            record = entity_to_record(entity)
            for key, value in patch.items():
                if value is None:
                    record.pop(key, None)
                else:
                    record[key] = value
            entity = entity_from_record(record)
        out.append(entity)
    return out
