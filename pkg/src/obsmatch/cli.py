"""``obsmatch`` command line: ingest, map, serve, validate-strategy.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 transport error.
"""

from __future__ import annotations

import json
import logging
import os
import sys
from datetime import datetime
from pathlib import Path

import click

from obsmatch.ingest import RecordError, apply_delta, diff_snapshots, dump_records, enrich, read_snapshot
from obsmatch.model import DEFAULT_PRIORITY, SOURCES
from obsmatch.pipeline import (
    ConfigError,
    DataError,
    LineError,
    LlmSettings,
    PipelineTransportError,
    RunConfig,
    default_catalogs,
    default_strategy,
    run_pipeline,
)
from obsmatch.scoring.combine import ScoreWeights
from obsmatch.scoring.embedding import CachedEncoder, EmbeddingCache, HttpEncoder
from obsmatch.strategy import StrategyError, read_strategy, validate_strategy
from obsmatch.validate import ValidationConfig

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_TRANSPORT = 3


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _parse_now(value: str | None) -> datetime | None:
    if value is None:
        return None
    try:
        return datetime.fromisoformat(value)
    except ValueError:
        _fail(EXIT_CONFIG, f"--now: not an ISO timestamp: {value!r}")


def _catalog_paths(catalog_dir: str | None, catalogs: tuple[str, ...]) -> dict[str, Path]:
    if catalog_dir is None and not catalogs:
        return default_catalogs()
    out: dict[str, Path] = {}
    if catalog_dir is not None:
        for path in sorted(Path(catalog_dir).glob("*.jsonl")):
            out[path.stem] = path
    for item in catalogs:
        source, sep, path = item.partition("=")
        if not sep or not source or not path:
            _fail(EXIT_CONFIG, f"--catalog expects SOURCE=PATH, got {item!r}")
        out[source] = Path(path)
    return out


def _weights(items: tuple[str, ...]) -> ScoreWeights:
    weights = dict(ScoreWeights().weights)
    for item in items:
        name, sep, value = item.partition("=")
        try:
            weights[name.strip()] = float(value)
        except ValueError:
            sep = ""
        if not sep:
            _fail(EXIT_CONFIG, f"--weight expects NAME=NUMBER, got {item!r}")
    try:
        return ScoreWeights(weights)
    except ValueError as exc:
        _fail(EXIT_CONFIG, str(exc))


@click.group()
@click.option("-v", "--verbose", count=True, help="Repeat for more logging.")
def main(verbose: int) -> None:
    """Align observation-facility catalogues and serve the resulting names."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("catalogs", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--previous", type=click.Path(exists=True, file_okay=False), help="Directory of earlier snapshots to diff against.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), help="Write enriched (and reconciled) snapshots here.")
@click.option("--now", help="ISO timestamp stamped on changed records (default: current time).")
def ingest(catalogs: tuple[str, ...], previous: str | None, out_dir: str | None, now: str | None) -> None:
    """Load, enrich and optionally diff catalogue snapshots."""
    stamp = _parse_now(now) or datetime.now()
    summary: dict[str, object] = {}
    for path in catalogs:
        try:
            snap = read_snapshot(path)
        except RecordError as exc:
            _fail(EXIT_DATA, f"{path}: {exc}")
        snap = type(snap)(snap.source, stamp, tuple(enrich(e) for e in snap))
        info: dict[str, object] = {"records": len(snap)}
        prev_path = Path(previous) / Path(path).name if previous else None
        if prev_path is not None and prev_path.is_file():
            try:
                old = read_snapshot(prev_path, source=snap.source)
            except RecordError as exc:
                _fail(EXIT_DATA, f"{prev_path}: {exc}")
            old = type(old)(old.source, None, tuple(enrich(e) for e in old))
            delta = diff_snapshots(old, snap)
            info["delta"] = delta.to_json()
            snap = apply_delta(old, snap, delta, stamp)
        if out_dir:
            target = Path(out_dir) / Path(path).name
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(dump_records(sorted(snap, key=lambda e: e.uri)), encoding="utf-8")
        summary[snap.source or Path(path).stem] = info
    click.echo(json.dumps(summary, indent=2, sort_keys=True))


@main.command("map")
@click.option("--strategy", type=click.Path(), help="Mapping strategy file (default: the shipped example).")
@click.option("--catalog-dir", type=click.Path(file_okay=False), help="Directory of <source>.jsonl catalogues.")
@click.option("--catalog", "catalogs", multiple=True, metavar="SOURCE=PATH", help="One catalogue; repeatable.")
@click.option("--out", "out_dir", default="out", show_default=True, type=click.Path(file_okay=False))
@click.option("--validator", type=click.Choice(["rule", "llm"]), default="rule", show_default=True)
@click.option("--llm-url", envvar="OBSMATCH_LLM_URL", help="Chat-completion base URL.")
@click.option("--llm-model", envvar="OBSMATCH_LLM_MODEL", help="Model name; also the SSSOM reviewer label.")
@click.option("--llm-api-key-env", default="OBSMATCH_LLM_API_KEY", show_default=True, help="Variable holding the API key.")
@click.option("--llm-timeout", type=float, default=120.0, show_default=True)
@click.option("--stop-after", type=int, default=20, show_default=True, help="Consecutive rejections before a line stops.")
@click.option("--threshold", type=float, default=0.85, show_default=True, help="Rule validator acceptance threshold.")
@click.option("--weight", "weights", multiple=True, metavar="NAME=W", help="Score weight override; repeatable.")
@click.option("--priority", default=",".join(DEFAULT_PRIORITY), show_default=True, help="Preferred-label source order.")
@click.option("--patches", type=click.Path(), help="JSON curation overrides keyed by CURIE.")
@click.option("--embedding-url", help="Embedding endpoint for sentence_transformer / llm_embeddings scores.")
@click.option("--embedding-model", "embedding_models", multiple=True, metavar="SCORE=MODEL", help="Model per embedding score.")
@click.option("--embedding-cache", type=click.Path(file_okay=False), help="Vector cache directory.")
@click.option("--now", help="ISO start timestamp for mapping dates (makes runs reproducible).")
@click.option("--keep-going", is_flag=True, help="Continue with the next strategy line after a failure.")
def map_cmd(
    strategy: str | None,
    catalog_dir: str | None,
    catalogs: tuple[str, ...],
    out_dir: str,
    validator: str,
    llm_url: str | None,
    llm_model: str | None,
    llm_api_key_env: str,
    llm_timeout: float,
    stop_after: int,
    threshold: float,
    weights: tuple[str, ...],
    priority: str,
    patches: str | None,
    embedding_url: str | None,
    embedding_models: tuple[str, ...],
    embedding_cache: str | None,
    now: str | None,
    keep_going: bool,
) -> None:
    """Run the alignment pipeline and write all outputs."""
    try:
        validation = ValidationConfig(stop_after, threshold)
    except ValueError as exc:
        _fail(EXIT_CONFIG, str(exc))
    llm = None
    if validator == "llm":
        if not llm_url or not llm_model:
            _fail(EXIT_CONFIG, "--validator llm needs --llm-url and --llm-model")
        llm = LlmSettings(llm_url, llm_model, os.environ.get(llm_api_key_env), llm_timeout)

    encoders = {}
    for item in embedding_models:
        score, sep, model = item.partition("=")
        if not sep or score not in ("sentence_transformer", "llm_embeddings"):
            _fail(EXIT_CONFIG, f"--embedding-model expects sentence_transformer=MODEL or llm_embeddings=MODEL, got {item!r}")
        if embedding_url is None and embedding_cache is None:
            _fail(EXIT_CONFIG, "--embedding-model needs --embedding-url or --embedding-cache")
        remote = HttpEncoder(embedding_url, model) if embedding_url else None
        encoders[score] = CachedEncoder(remote, EmbeddingCache(embedding_cache), model) if embedding_cache else remote

    config = RunConfig(
        strategy=Path(strategy) if strategy else default_strategy(),
        catalogs=_catalog_paths(catalog_dir, catalogs),
        output_dir=Path(out_dir),
        weights=_weights(weights),
        validation=validation,
        validator=validator,
        llm=llm,
        priority=tuple(p.strip() for p in priority.split(",") if p.strip()),
        patches=Path(patches) if patches else None,
        encoders=encoders,
        now=_parse_now(now),
        keep_going=keep_going,
    )
    try:
        result = run_pipeline(config)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except (DataError, LineError) as exc:
        _fail(EXIT_DATA, str(exc))
    except PipelineTransportError as exc:
        _fail(EXIT_TRANSPORT, str(exc))
    r = result.report
    click.echo(
        f"{r['entities']} entities, {r['synonym_sets']} synonym sets, {r['mappings']} mappings, "
        f"{r['validator_calls']} validator calls; outputs in {config.output_dir}"
    )


@main.command()
@click.option("--dictionary", envvar="OBSMATCH_DICTIONARY", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--hierarchy", envvar="OBSMATCH_HIERARCHY", type=click.Path(exists=True, dir_okay=False), help="facilities.csv for meronymy expansion.")
@click.option("--host", envvar="OBSMATCH_HOST", default="127.0.0.1", show_default=True)
@click.option("--port", envvar="OBSMATCH_PORT", type=int, default=8000, show_default=True)
def serve(dictionary: str, hierarchy: str | None, host: str, port: int) -> None:
    """Serve /resolve and /aliases over a resolver dictionary."""
    import uvicorn

    from obsmatch.resolver.service import IndexHolder, create_app

    try:
        holder = IndexHolder(dictionary, hierarchy)
    except (OSError, ValueError, KeyError) as exc:
        _fail(EXIT_DATA, f"cannot load resolver data: {exc}")
    uvicorn.run(create_app(holder), host=host, port=port)


@main.command("validate-strategy")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@click.option("--source", "sources", multiple=True, help="Known source (default: the built-in list); repeatable.")
def validate_strategy_cmd(path: str, sources: tuple[str, ...]) -> None:
    """Lint a mapping strategy file."""
    known = sources or SOURCES
    try:
        strategy = read_strategy(path, sources=None)
    except StrategyError as exc:
        _fail(EXIT_CONFIG, str(exc))
    findings = validate_strategy(strategy, known)
    for d in findings:
        click.echo(str(d))
    if any(d.level == "error" for d in findings):
        sys.exit(EXIT_CONFIG)
    click.echo(f"{len(strategy)} lines ok" if not findings else f"{len(strategy)} lines, {len(findings)} warnings")


if __name__ == "__main__":  # pragma: no cover
    main()
