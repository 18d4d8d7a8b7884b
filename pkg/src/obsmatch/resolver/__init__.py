"""Name resolver: alias index and its HTTP service."""

from obsmatch.resolver.index import Entry, Match, NotFound, ResolverIndex, load_hierarchy

__all__ = ["Entry", "Match", "NotFound", "ResolverIndex", "load_hierarchy"]
