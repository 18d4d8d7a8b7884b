"""Read-only HTTP front end for :class:`ResolverIndex`."""

from __future__ import annotations

import threading
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from obsmatch.resolver.index import EXPANSIONS, NotFound, ResolverIndex

__all__ = ["IndexHolder", "create_app"]


class IndexHolder:
    """Swaps the whole index at once on reload; readers never see a partial build."""

    def __init__(self, dictionary: str | Path, hierarchy: str | Path | None = None):
        self.dictionary = dictionary
        self.hierarchy = hierarchy
        self._lock = threading.Lock()
        self.index = ResolverIndex.from_files(dictionary, hierarchy)

    def reload(self) -> ResolverIndex:
        fresh = ResolverIndex.from_files(self.dictionary, self.hierarchy)
        with self._lock:
            self.index = fresh
        return fresh


def _error(status: int, error: str, detail: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": error, "detail": detail})


def create_app(source: ResolverIndex | IndexHolder) -> FastAPI:
    app = FastAPI(title="obsmatch resolver", docs_url=None, redoc_url=None)

    def current() -> ResolverIndex:
        return source.index if isinstance(source, IndexHolder) else source

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request: Request, exc: RequestValidationError) -> JSONResponse:
        fields = "; ".join(f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in exc.errors())
        return _error(400, "bad-request", fields)

    @app.get("/healthz")
    def healthz() -> dict[str, object]:
        return {"status": "ok", "entries": len(current())}

    @app.get("/resolve")
    def resolve(q: str = "", limit: int = 10):
        if limit < 1:
            return _error(400, "bad-request", "limit must be a positive integer")
        return [m.to_json() for m in current().resolve(q, limit)]

    @app.get("/aliases")
    def aliases(slug: str, expand: str | None = None):
        if expand is not None and expand not in EXPANSIONS:
            return _error(400, "bad-request", f"expand must be one of {', '.join(EXPANSIONS)}")
        try:
            return current().aliases(slug, expand)
        except NotFound:
            return _error(404, "not-found", f"unknown slug {slug!r}")

    return app
