"""In-memory name-resolution index over the resolver dictionary."""

from __future__ import annotations

import csv
import json
from collections import Counter
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from pathlib import Path

from obsmatch.model import normalize_label
from obsmatch.scoring.surface import pair_levenshtein

__all__ = ["Entry", "Match", "NotFound", "ResolverIndex", "load_hierarchy", "trigrams"]

#: Minimum trigram Jaccard for a fuzzy candidate.
JACCARD_FLOOR = 0.2
#: Fuzzy candidates (entries) passed to Levenshtein ranking.
MAX_FUZZY_CANDIDATES = 50

EXPANSIONS = ("narrower", "broader")


class NotFound(KeyError):
    pass


@dataclass(frozen=True)
class Entry:
    slug: str
    preferred: str
    aliases: tuple[str, ...]
    parents: tuple[str, ...] = ()
    children: tuple[str, ...] = ()

    def to_json(self) -> dict[str, object]:
        return {"slug": self.slug, "preferred": self.preferred, "aliases": list(self.aliases)}


@dataclass(frozen=True)
class Match:
    slug: str
    label: str
    score: float

    def to_json(self) -> dict[str, object]:
        return {"slug": self.slug, "label": self.label, "score": self.score}


def trigrams(text: str) -> frozenset[str]:
    padded = f"  {text} "
    return frozenset(padded[i : i + 3] for i in range(len(padded) - 2))


def load_hierarchy(path: str | Path) -> dict[str, tuple[str, ...]]:
    """``slug -> parent slugs`` from a facilities CSV (``term``/``parent`` columns)."""
    with open(path, encoding="utf-8", newline="") as fh:
        return {row["term"]: tuple((row.get("parent") or "").split()) for row in csv.DictReader(fh)}


class ResolverIndex:
    """Immutable after construction; safe to share between request handlers."""

    def __init__(
        self,
        dictionary: Mapping[str, Iterable[str]],
        hierarchy: Mapping[str, Iterable[str]] | None = None,
    ):
        hierarchy = hierarchy or {}
        children: dict[str, set[str]] = {}
        for slug, parents in hierarchy.items():
            for p in parents:
                children.setdefault(p, set()).add(slug)

        self.entries: dict[str, Entry] = {}
        for slug in sorted(dictionary):
            aliases = tuple(dict.fromkeys(dictionary[slug]))
            self.entries[slug] = Entry(
                slug=slug,
                # a set that ceded all its aliases still resolves by slug lookup
                preferred=aliases[0] if aliases else slug,
                aliases=aliases,
                parents=tuple(sorted(p for p in hierarchy.get(slug, ()) if p in dictionary)),
                children=tuple(sorted(c for c in children.get(slug, ()) if c in dictionary)),
            )

        self.exact: dict[str, list[str]] = {}
        self._alias_keys: list[str] = []
        self._alias_slug: list[str] = []
        self._alias_size: list[int] = []
        self.grams: dict[str, list[int]] = {}
        seen: set[tuple[str, str]] = set()
        for slug, entry in self.entries.items():
            for alias in entry.aliases:
                key = normalize_label(alias)
                if not key or (key, slug) in seen:
                    continue
                seen.add((key, slug))
                self.exact.setdefault(key, []).append(slug)
                idx = len(self._alias_keys)
                grams = trigrams(key)
                self._alias_keys.append(key)
                self._alias_slug.append(slug)
                self._alias_size.append(len(grams))
                for g in grams:
                    self.grams.setdefault(g, []).append(idx)

    @classmethod
    def from_files(cls, dictionary: str | Path, hierarchy: str | Path | None = None) -> ResolverIndex:
        with open(dictionary, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict) or not all(isinstance(v, list) for v in data.values()):
            raise ValueError(f"{dictionary}: expected an object of alias lists")
        return cls(data, load_hierarchy(hierarchy) if hierarchy else None)

    def __len__(self) -> int:
        return len(self.entries)

    def _fuzzy(self, key: str, exclude: set[str]) -> list[str]:
        qgrams = trigrams(key)
        shared: Counter[int] = Counter()
        for g in qgrams:
            postings = self.grams.get(g)
            if postings:
                shared.update(postings)
        best: dict[str, float] = {}
        nq = len(qgrams)
        for idx, n in shared.items():
            jaccard = n / (nq + self._alias_size[idx] - n)
            if jaccard < JACCARD_FLOOR:
                continue
            slug = self._alias_slug[idx]
            if slug not in exclude and jaccard > best.get(slug, 0.0):
                best[slug] = jaccard
        ranked = sorted(best, key=lambda s: (-best[s], s))
        return ranked[:MAX_FUZZY_CANDIDATES]

    def resolve(self, query: str, limit: int = 10) -> list[Match]:
        """Exact alias hits (score 1) first, then fuzzy hits by Levenshtein over the alias pool."""
        if limit < 1:
            raise ValueError("limit must be a positive integer")
        key = normalize_label(query)
        if not key:
            return []
        hits = sorted(set(self.exact.get(key, ())))
        out = [Match(s, self.entries[s].preferred, 1.0) for s in hits]
        if len(out) >= limit:
            return out[:limit]
        fuzzy = []
        for slug in self._fuzzy(key, set(hits)):
            score = pair_levenshtein([key], self.entries[slug].aliases)
            # only exact normalized hits may claim a perfect score
            fuzzy.append(Match(slug, self.entries[slug].preferred, min(score, 1.0 - 1e-9)))
        fuzzy.sort(key=lambda m: (-m.score, m.slug))
        return (out + fuzzy)[:limit]

    def entry(self, slug: str) -> Entry:
        try:
            return self.entries[slug]
        except KeyError:
            raise NotFound(slug) from None

    def expand(self, slug: str, direction: str) -> list[Entry]:
        """Transitive children (``narrower``) or ancestors (``broader``), sorted by slug."""
        if direction not in EXPANSIONS:
            raise ValueError(f"expand must be one of {', '.join(EXPANSIONS)}")
        attr = "children" if direction == "narrower" else "parents"
        seen: set[str] = set()
        stack = list(getattr(self.entry(slug), attr))
        while stack:
            s = stack.pop()
            if s in seen or s == slug:
                continue
            seen.add(s)
            stack.extend(getattr(self.entries[s], attr))
        return [self.entries[s] for s in sorted(seen)]

    def aliases(self, slug: str, expand: str | None = None) -> dict[str, object]:
        entry = self.entry(slug)
        out = entry.to_json()
        out["expanded"] = [e.to_json() for e in self.expand(slug, expand)] if expand else []
        return out
