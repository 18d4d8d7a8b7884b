"""Candidate pairs, external-identifier resolution and filtering criteria."""

from __future__ import annotations

import enum
import math
from collections.abc import Callable, Iterable, Iterator
from dataclasses import dataclass, field

from obsmatch.diagnostics import Diagnostics
from obsmatch.model import Entity, FacilityClass, IdScheme, SynonymRegistry, normalize_label

__all__ = [
    "ACCEPT_CRITERIA",
    "APERTURE_ABS_TOL",
    "APERTURE_REL_TOL",
    "CRITERIA",
    "EARTH_RADIUS_KM",
    "MAX_DISTANCE_KM",
    "CandidatePair",
    "Decision",
    "PairStatus",
    "apply_criteria",
    "evaluate_criterion",
    "generate_pairs",
    "geodesic_km",
    "passes_type_filter",
    "resolve_external_ids",
]

#: Mean Earth radius (IUGG), km.
EARTH_RADIUS_KM = 6371.0088
MAX_DISTANCE_KM = 4.0
APERTURE_REL_TOL = 0.005
APERTURE_ABS_TOL = 0.01


class Decision(str, enum.Enum):
    ACCEPT = "Accept"
    REJECT = "Reject"
    NEUTRAL = "Neutral"


class PairStatus(str, enum.Enum):
    PENDING = "Pending"
    AUTO_ACCEPTED = "AutoAccepted"
    FILTERED = "Filtered"
    VALIDATED = "Validated"
    REJECTED = "Rejected"


@dataclass
class CandidatePair:
    left: Entity
    right: Entity
    decisions: dict[str, Decision] = field(default_factory=dict)
    scores: dict[str, float] = field(default_factory=dict)
    global_score: float | None = None
    status: PairStatus = PairStatus.PENDING

    @property
    def key(self) -> tuple[str, str]:
        return self.left.curie, self.right.curie

    @property
    def label_matched(self) -> bool:
        return self.decisions.get("label_match") is Decision.ACCEPT


def geodesic_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in km (haversine, mean Earth radius)."""
    phi1 = math.radians(lat1)
    phi2 = math.radians(lat2)
    dphi = math.radians(lat2 - lat1)
    dlmb = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    # 1 - a written without cancellation, so near-antipodal points stay accurate
    b = (math.cos(dphi / 2) * math.cos(dlmb / 2)) ** 2 + (math.sin((phi1 + phi2) / 2) * math.sin(dlmb / 2)) ** 2
    return 2 * EARTH_RADIUS_KM * math.atan2(math.sqrt(a), math.sqrt(b))


def passes_type_filter(entity: Entity, type_filter: Iterable[FacilityClass] | None) -> bool:
    if type_filter is None or entity.facility_class is FacilityClass.UNKNOWN:
        return True
    return entity.facility_class in type_filter


def generate_pairs(
    list_a: Iterable[Entity],
    list_b: Iterable[Entity],
    type_filter: Iterable[FacilityClass] | None = None,
    registry: SynonymRegistry | None = None,
) -> Iterator[CandidatePair]:
    """Cross product of the two lists, ordered by (left URI, right URI).

    Left entities already sharing a synonym set with any right entity are
    no longer single and are left out; pairs whose ends already share a set
    are never produced.
    """
    type_filter = frozenset(type_filter) if type_filter is not None else None
    left = sorted((e for e in list_a if passes_type_filter(e, type_filter)), key=lambda e: e.curie)
    right = sorted((e for e in list_b if passes_type_filter(e, type_filter)), key=lambda e: e.curie)
    if registry is not None:
        right_roots = {registry.find(e.curie) for e in right}
        left = [e for e in left if registry.find(e.curie) not in right_roots]
    for a in left:
        for b in right:
            if a.curie == b.curie:
                continue
            if registry is not None and registry.same(a.curie, b.curie):
                continue
            yield CandidatePair(a, b)


def resolve_external_ids(
    list_a: Iterable[Entity],
    list_b: Iterable[Entity],
    diagnostics: Diagnostics | None = None,
) -> list[CandidatePair]:
    """Pairs linked by a shared external identifier, marked AutoAccepted.

    A pair is emitted when at least one scheme agrees and no shared scheme
    disagrees. Identifier values carried by several entities on one side are
    ambiguous; they are reported and never used as evidence.
    """
    list_a = sorted(list_a, key=lambda e: e.curie)
    list_b = sorted(list_b, key=lambda e: e.curie)

    def index(entities: list[Entity]) -> dict[tuple[IdScheme, str], list[Entity]]:
        out: dict[tuple[IdScheme, str], list[Entity]] = {}
        for e in entities:
            for scheme, value in e.external_ids.items():
                out.setdefault((scheme, value.strip().casefold()), []).append(e)
        return out

    idx_a, idx_b = index(list_a), index(list_b)
    candidates: set[tuple[str, str]] = set()
    by_curie = {e.curie: e for e in list_a} | {e.curie: e for e in list_b}
    for key in sorted(idx_a.keys() & idx_b.keys()):
        lefts, rights = idx_a[key], idx_b[key]
        if len(lefts) > 1 or len(rights) > 1:
            if diagnostics is not None:
                names = ", ".join(e.curie for e in lefts + rights)
                diagnostics.warn("ambiguous-identifier", f"{key[0].value} {key[1]!r} shared by {names}")
            continue
        candidates.add((lefts[0].curie, rights[0].curie))

    out = []
    for lc, rc in sorted(candidates):
        pair = CandidatePair(by_curie[lc], by_curie[rc])
        if evaluate_criterion("identifier", pair) is Decision.REJECT:
            continue
        pair.decisions["identifier"] = Decision.ACCEPT
        pair.status = PairStatus.AUTO_ACCEPTED
        out.append(pair)
    return out


# --- criteria -----------------------------------------------------------------


def _label_match(a: Entity, b: Entity) -> Decision:
    left = {normalize_label(x) for x in a.labels}
    right = {normalize_label(x) for x in b.labels}
    left.discard("")
    return Decision.ACCEPT if left & right else Decision.NEUTRAL


def _identifier(a: Entity, b: Entity) -> Decision:
    for scheme in a.external_ids.keys() & b.external_ids.keys():
        if a.external_ids[scheme].strip().casefold() != b.external_ids[scheme].strip().casefold():
            return Decision.REJECT
    return Decision.NEUTRAL


def _distance(a: Entity, b: Entity) -> Decision:
    if not (a.has_coordinates and b.has_coordinates):
        return Decision.NEUTRAL
    d = geodesic_km(a.latitude, a.longitude, b.latitude, b.longitude)
    return Decision.REJECT if d > MAX_DISTANCE_KM else Decision.NEUTRAL


def _date(a: Entity, b: Entity) -> Decision:
    for name in ("launch_year", "start_year", "end_year"):
        x, y = getattr(a, name), getattr(b, name)
        if x is not None and y is not None and x != y:
            return Decision.REJECT
    return Decision.NEUTRAL


def _aperture(a: Entity, b: Entity) -> Decision:
    if a.aperture is None or b.aperture is None:
        return Decision.NEUTRAL
    tol = max(APERTURE_REL_TOL * max(abs(a.aperture), abs(b.aperture)), APERTURE_ABS_TOL)
    return Decision.REJECT if abs(a.aperture - b.aperture) > tol else Decision.NEUTRAL


def _type(a: Entity, b: Entity) -> Decision:
    unknown = FacilityClass.UNKNOWN
    if a.facility_class is unknown or b.facility_class is unknown:
        return Decision.NEUTRAL
    return Decision.REJECT if a.facility_class is not b.facility_class else Decision.NEUTRAL


#: Criterion name -> rule over (left, right).
CRITERIA: dict[str, Callable[[Entity, Entity], Decision]] = {
    "label_match": _label_match,
    "identifier": _identifier,
    "distance": _distance,
    "date": _date,
    "aperture": _aperture,
    "type": _type,
}


#: Criteria that can only accept; the others can only reject.
ACCEPT_CRITERIA = frozenset({"label_match"})


def evaluate_criterion(name: str, pair: CandidatePair) -> Decision:
    try:
        rule = CRITERIA[name]
    except KeyError:
        raise ValueError(f"unknown criterion {name!r}") from None
    return rule(pair.left, pair.right)


def apply_criteria(pair: CandidatePair, criteria: Iterable[str]) -> PairStatus:
    """Settle a pair with filtering criteria.

    Accept-type criteria run first (in the given order) and an Accept
    short-circuits everything else; otherwise the rejection criteria run in
    order and the first Reject filters the pair out.
    """
    criteria = list(criteria)
    accepting = [c for c in criteria if c in ACCEPT_CRITERIA]
    rejecting = [c for c in criteria if c not in ACCEPT_CRITERIA]
    for name in accepting + rejecting:
        decision = evaluate_criterion(name, pair)
        pair.decisions[name] = decision
        if decision is Decision.ACCEPT:
            pair.status = PairStatus.AUTO_ACCEPTED
            break
        if decision is Decision.REJECT:
            pair.status = PairStatus.FILTERED
            break
    return pair.status
