"""Tokenization, stop words and the textual view of an entity."""

from __future__ import annotations

import re
from functools import cache
from importlib import resources

from obsmatch.model import Entity

_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Case-folded runs of Unicode letters and digits."""
    return _TOKEN.findall(text.casefold())


@cache
def stopwords(languages: tuple[str, ...] = ("en", "es", "fr")) -> frozenset[str]:
    words: set[str] = set()
    root = resources.files("obsmatch.data") / "stopwords"
    for lang in languages:
        for line in (root / f"{lang}.txt").read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                words.update(tokenize(line))
    return frozenset(words)


def entity_texts(entity: Entity) -> list[str]:
    """Textual fields in a fixed order: labels, notations, description, location."""
    texts = [entity.pref_label, *sorted(entity.alt_labels), *sorted(entity.notations)]
    if entity.description:
        texts.append(entity.description)
    if entity.location_name:
        texts.append(entity.location_name)
    return texts


def entity_document(entity: Entity) -> str:
    return " ".join(entity_texts(entity))
