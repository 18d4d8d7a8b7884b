"""Entity model, URI slugs, synonym sets and meronymy traversal."""

from __future__ import annotations

import enum
import re
import unicodedata
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
from datetime import datetime

from obsmatch.diagnostics import Diagnostics

__all__ = [
    "DEFAULT_PRIORITY",
    "SOURCES",
    "Entity",
    "FacilityClass",
    "IdScheme",
    "SynonymRegistry",
    "SynonymSet",
    "UnsluggableLabel",
    "elect_pref_label",
    "meronym_closure",
    "normalize_label",
    "normalize_longitude",
    "slugify",
]

#: Source namespaces known to the engine.
SOURCES: tuple[str, ...] = ("aas", "pds", "wikidata", "iaumpc", "naif", "nssdc", "spase", "imcce")

#: Default preferred-label election order, highest priority first.
DEFAULT_PRIORITY: tuple[str, ...] = ("aas", "pds", "wikidata", "iaumpc", "spase", "nssdc", "naif", "imcce")


class FacilityClass(str, enum.Enum):
    TELESCOPE = "Telescope"
    OBSERVATORY = "Observatory"
    SPACECRAFT = "Spacecraft"
    AIRBORNE_PLATFORM = "AirbornePlatform"
    INVESTIGATION = "Investigation"
    UNKNOWN = "Unknown"

    @classmethod
    def parse(cls, value: str | None) -> FacilityClass:
        """Accept class names in any case, with or without separators."""
        if not value:
            return cls.UNKNOWN
        key = re.sub(r"[\s_-]+", "", value).casefold()
        for member in cls:
            if member.value.casefold() == key:
                return member
        if key == "airborne":
            return cls.AIRBORNE_PLATFORM
        raise ValueError(f"unknown facility class {value!r}")


class IdScheme(str, enum.Enum):
    NAIF = "NAIF"
    COSPAR = "COSPAR"
    NSSDCA = "NSSDCA"
    MPC = "MPC"


@dataclass(frozen=True)
class Entity:
    uri: str
    source: str
    pref_label: str
    alt_labels: frozenset[str] = frozenset()
    notations: frozenset[str] = frozenset()
    facility_class: FacilityClass = FacilityClass.UNKNOWN
    external_ids: Mapping[IdScheme, str] = field(default_factory=dict)
    latitude: float | None = None
    longitude: float | None = None
    altitude: float | None = None
    location_name: str | None = None
    aperture: float | None = None
    aperture_text: str | None = None
    launch_year: int | None = None
    start_year: int | None = None
    end_year: int | None = None
    wavebands: frozenset[str] = frozenset()
    funding_agency: str | None = None
    description: str | None = None
    part_of: frozenset[str] = frozenset()
    exact_match: frozenset[str] = frozenset()
    url: str | None = None
    modified: datetime | None = None
    deprecated: bool = False
    type_confidence: float | None = None
    location_confidence: float | None = None
    extras: Mapping[str, object] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        for name in ("alt_labels", "notations", "wavebands", "part_of", "exact_match"):
            value = getattr(self, name)
            if not isinstance(value, frozenset):
                object.__setattr__(self, name, frozenset(value))
        object.__setattr__(
            self, "external_ids", {IdScheme(k): str(v) for k, v in self.external_ids.items()}
        )
        if not self.pref_label or not self.pref_label.strip():
            raise ValueError(f"{self.source}:{self.uri}: empty pref_label")
        if self.pref_label in self.alt_labels:
            object.__setattr__(self, "alt_labels", self.alt_labels - {self.pref_label})
        if self.latitude is not None and not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"{self.source}:{self.uri}: latitude {self.latitude} out of range")
        if self.longitude is not None:
            object.__setattr__(self, "longitude", normalize_longitude(self.longitude))

    def __hash__(self) -> int:
        return hash((self.source, self.uri))

    @property
    def curie(self) -> str:
        return f"{self.source}:{self.uri}"

    @property
    def labels(self) -> frozenset[str]:
        """Every name the entity is known by: preferred, alternative and notations."""
        return frozenset({self.pref_label}) | self.alt_labels | self.notations

    @property
    def has_coordinates(self) -> bool:
        return self.latitude is not None and self.longitude is not None

    def with_aliases(self, aliases: Iterable[str]) -> Entity:
        extra = frozenset(aliases) - self.labels
        if not extra:
            return self
        return replace(self, alt_labels=self.alt_labels | extra)


def normalize_longitude(lon: float) -> float:
    """Map a longitude in degrees to [-180, 180)."""
    # adding 0.0 turns a rounded -0.0 into 0.0
    out = round((lon + 180.0) % 360.0 - 180.0, 9) + 0.0
    # rounding can land on 180.0 for inputs just below -180
    return -180.0 if out >= 180.0 else out


_WS = re.compile(r"\s+")


def normalize_label(label: str) -> str:
    return _WS.sub(" ", label.casefold().strip())


class UnsluggableLabel(ValueError):
    pass


_SLUG_SEP = re.compile(r"[\s/]+")
_SLUG_DROP = re.compile(r"[^a-z0-9.-]")
_SLUG_DASHES = re.compile(r"-{2,}")


def _slug(text: str) -> str:
    text = unicodedata.normalize("NFKD", text)
    text = "".join(c for c in text if not unicodedata.combining(c))
    text = _SLUG_SEP.sub("-", text.lower())
    text = _SLUG_DROP.sub("", text)
    return _SLUG_DASHES.sub("-", text).strip("-")


def slugify(label: str, taken: Iterable[str] = (), fallback_id: str | None = None) -> str:
    """Build a human-readable URI slug from a label.

    If the slug is already in ``taken``, the source-native ``fallback_id`` is
    appended; failing that a numeric suffix is used, so the result is always
    unique within ``taken``.
    """
    taken = taken if isinstance(taken, (set, frozenset, dict)) else set(taken)
    base = _slug(label)
    fallback = _slug(fallback_id) if fallback_id else ""
    if not base:
        if not fallback:
            raise UnsluggableLabel(f"label {label!r} has no sluggable characters")
        base = fallback
        fallback = ""
    if base not in taken:
        return base
    if fallback:
        candidate = f"{base}-{fallback}"
        if candidate not in taken:
            return candidate
        base = candidate
    n = 2
    while f"{base}-{n}" in taken:
        n += 1
    return f"{base}-{n}"


@dataclass(frozen=True)
class SynonymSet:
    members: frozenset[str]
    representative: str
    pref_label: str
    pref_source: str


def _source_rank(priority: tuple[str, ...], source: str) -> int:
    try:
        return priority.index(source)
    except ValueError:
        return len(priority)


def elect_pref_label(entities: Iterable[Entity], priority: Iterable[str]) -> tuple[str, str]:
    """Pick the preferred label of a synonym set.

    The member from the highest-priority source wins; within one source the
    shortest label wins, then the lexicographically smallest.
    """
    priority = tuple(priority)
    best = min(
        entities,
        key=lambda e: (_source_rank(priority, e.source), len(e.pref_label), e.pref_label, e.curie),
    )
    return best.pref_label, best.source


class SynonymRegistry:
    """Union-find over entity CURIEs; the smallest CURIE of a set is its root."""

    def __init__(self, entities: Iterable[Entity] = (), priority: Iterable[str] = DEFAULT_PRIORITY):
        self.priority = tuple(priority)
        self.entities: dict[str, Entity] = {}
        self._parent: dict[str, str] = {}
        self._members: dict[str, set[str]] = {}
        for entity in entities:
            self.add(entity)

    def add(self, entity: Entity) -> None:
        key = entity.curie
        if key in self.entities:
            raise ValueError(f"duplicate entity {key}")
        self.entities[key] = entity
        self._parent[key] = key
        self._members[key] = {key}

    def __contains__(self, curie: str) -> bool:
        return curie in self._parent

    def __len__(self) -> int:
        return len(self._parent)

    def find(self, curie: str) -> str:
        parent = self._parent
        root = curie
        while parent[root] != root:
            root = parent[root]
        while parent[curie] != root:
            parent[curie], curie = root, parent[curie]
        return root

    def same(self, a: str, b: str) -> bool:
        return self.find(a) == self.find(b)

    def merge(self, a: str, b: str) -> SynonymSet:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            root, child = (ra, rb) if ra < rb else (rb, ra)
            self._parent[child] = root
            self._members[root] |= self._members.pop(child)
        return self.synonym_set(a)

    def members(self, curie: str) -> frozenset[str]:
        return frozenset(self._members[self.find(curie)])

    def pool(self, curie: str) -> frozenset[str]:
        """Union of every label and notation across the set containing ``curie``."""
        out: set[str] = set()
        for m in self._members[self.find(curie)]:
            out |= self.entities[m].labels
        return frozenset(out)

    def augmented(self, curie: str) -> Entity:
        """The entity, enriched with the alias pool of its synonym set."""
        entity = self.entities[curie]
        if len(self._members[self.find(curie)]) == 1:
            return entity
        return entity.with_aliases(self.pool(curie))

    def synonym_set(self, curie: str) -> SynonymSet:
        root = self.find(curie)
        members = frozenset(self._members[root])
        label, source = elect_pref_label((self.entities[m] for m in members), self.priority)
        return SynonymSet(members=members, representative=root, pref_label=label, pref_source=source)

    def sets(self) -> list[SynonymSet]:
        return [self.synonym_set(root) for root in sorted(self._members)]


def meronym_closure(
    entity: Entity | str,
    catalog: Mapping[str, Entity],
    direction: str = "narrower",
    diagnostics: Diagnostics | None = None,
) -> set[Entity]:
    """Entities reachable over ``part_of`` edges.

    ``broader`` follows the edges (containers of the entity), ``narrower``
    follows them backwards (its parts). Cycles are cut and reported.
    """
    if direction not in ("broader", "narrower"):
        raise ValueError(f"direction must be 'broader' or 'narrower', not {direction!r}")
    start = entity if isinstance(entity, str) else entity.curie
    if direction == "broader":
        edges = {k: sorted(e.part_of) for k, e in catalog.items()}
    else:
        edges = {}
        for k in sorted(catalog):
            for parent in catalog[k].part_of:
                edges.setdefault(parent, []).append(k)

    seen: set[str] = set()
    on_path = [start]
    stack = [iter(edges.get(start, ()))]
    while stack:
        nxt = next(stack[-1], None)
        if nxt is None:
            stack.pop()
            on_path.pop()
            continue
        if nxt not in catalog:
            continue
        if nxt in on_path:
            if diagnostics is not None:
                diagnostics.warn("meronymy-cycle", f"part_of cycle through {on_path[-1]} -> {nxt}")
            continue
        if nxt not in seen:
            seen.add(nxt)
            on_path.append(nxt)
            stack.append(iter(edges.get(nxt, ())))

    seen.discard(start)
    return {catalog[k] for k in seen}
