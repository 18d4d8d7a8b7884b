from __future__ import annotations

import csv
import json

import pytest
from click.testing import CliRunner
from conftest import FIXED_NOW, fixture_config

from obsmatch import cli
from obsmatch.pipeline import (
    OUTPUT_FILES,
    ConfigError,
    DataError,
    LineError,
    PipelineTransportError,
    TickingClock,
    default_catalogs,
    default_strategy,
    run_pipeline,
)
from obsmatch.validate import LlmValidator, TransportError, ValidationConfig

DETERMINISTIC = ("sssom", "sssom_tsv", "resolver", "facilities", "linked_catalog")


def read(path):
    return path.read_text(encoding="utf-8")


# --- pipeline -----------------------------------------------------------------------------------


def test_full_run_outputs(fixture_run):
    assert set(fixture_run.outputs) == set(OUTPUT_FILES)
    assert all(p.is_file() for p in fixture_run.outputs.values())
    report = json.loads(read(fixture_run.outputs["report"]))
    assert report["entities"] == 40
    assert report["mappings"] == len(fixture_run.records) > 0
    assert len(report["lines"]) == 7
    assert report["validator_calls"] == sum(r["validation"]["validator_calls"] for r in report["lines"])
    for line in report["lines"]:
        v = line["validation"]
        assert v["validator_calls"] <= v["ranked"]
        assert v["set_inconsistencies"] == []


def test_fixture_run_merges(fixture_run):
    reg = fixture_run.registry
    teide = {"pds:observatorio-del-teide", "aas:observatorio-del-teide", "wikidata:teide-observatory", "iaumpc:954"}
    assert reg.members("pds:observatorio-del-teide") == teide
    assert reg.same("nssdc:cosmos-1221", "nssdc:cosmos-1221")
    rows = {r["term"]: r for r in csv.DictReader(open(fixture_run.outputs["facilities"], encoding="utf-8"))}
    assert rows["voyager-1"]["parent"] == "voyager" and rows["voyager-2"]["parent"] == "voyager"
    resolver = json.loads(read(fixture_run.outputs["resolver"]))
    assert set(resolver["cosmos-1221"]) == {"COSMOS 1221", "1980-090A", "12058"}


def test_label_match_record_for_teide(fixture_run):
    recs = [r for r in fixture_run.records if r.subject_id == "pds:observatorio-del-teide" and r.object_id == "aas:observatorio-del-teide"]
    assert len(recs) == 1 and recs[0].similarity_measure == "label_match" and recs[0].reviewer_label is None


def test_two_runs_byte_identical(tmp_path):
    a = run_pipeline(fixture_config(tmp_path / "a"))
    b = run_pipeline(fixture_config(tmp_path / "b"))
    for name in DETERMINISTIC:
        assert read(a.outputs[name]) == read(b.outputs[name]), name


def test_empty_strategy_gives_singletons(tmp_path):
    empty = tmp_path / "empty.txt"
    empty.write_text("# nothing\n")
    result = run_pipeline(fixture_config(tmp_path / "out", strategy=empty))
    assert len(result.registry.sets()) == len(result.registry) == 40
    assert result.records == []
    assert len(json.loads(read(result.outputs["resolver"]))) == 40


def test_missing_source_is_config_error_before_work(tmp_path):
    catalogs = {k: v for k, v in default_catalogs().items() if k != "naif"}
    out = tmp_path / "out"
    with pytest.raises(ConfigError, match="naif"):
        run_pipeline(fixture_config(out, catalogs=catalogs))
    assert not out.exists()


def test_missing_files_are_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        run_pipeline(fixture_config(tmp_path, strategy=tmp_path / "nope.txt"))
    with pytest.raises(ConfigError):
        run_pipeline(fixture_config(tmp_path, validator="llm"))


def test_bad_catalog_is_data_error(tmp_path):
    bad = tmp_path / "aas.jsonl"
    bad.write_text('{"uri": "x", "source": "aas"}\n')
    with pytest.raises(DataError, match="line 1"):
        run_pipeline(fixture_config(tmp_path / "out", catalogs={**default_catalogs(), "aas": bad}))


class DownTransport:
    model = "m"

    def complete(self, prompt):
        raise TransportError("connection refused")


def test_transport_failure_on_every_call(tmp_path):
    with pytest.raises(PipelineTransportError):
        run_pipeline(fixture_config(tmp_path), validator=LlmValidator(DownTransport()))


def test_keep_going_records_transport_failures(tmp_path):
    result = run_pipeline(fixture_config(tmp_path, keep_going=True), validator=LlmValidator(DownTransport()))
    assert "transport-failed" in result.diagnostics.codes()
    assert all(r.similarity_measure != "weighted_sum" for r in result.records)


def test_line_failure_wraps_context(tmp_path):
    def broken(pair):
        raise RuntimeError("validator bug")

    with pytest.raises(LineError, match="strategy line"):
        run_pipeline(fixture_config(tmp_path), validator=broken)
    result = run_pipeline(fixture_config(tmp_path, keep_going=True), validator=broken)
    assert "line-failed" in result.diagnostics.codes()


def test_stop_rule_reported(tmp_path):
    result = run_pipeline(fixture_config(tmp_path, validation=ValidationConfig(1, 0.99)))
    assert result.report["rejection_streak_stops"] >= 1


def test_ticking_clock():
    clock = TickingClock(FIXED_NOW)
    a, b = clock(), clock()
    assert (b - a).microseconds == 1 and a == FIXED_NOW


# --- CLI ----------------------------------------------------------------------------------------


def invoke(*args):
    return CliRunner().invoke(cli.main, list(map(str, args)))


def test_cli_map_ok(tmp_path):
    r = invoke("map", "--out", tmp_path / "o", "--now", FIXED_NOW.isoformat())
    assert r.exit_code == 0, r.output
    assert "40 entities" in r.output
    assert (tmp_path / "o" / "resolver.json").is_file()


def test_cli_map_matches_library_run(tmp_path, fixture_run):
    invoke("map", "--out", tmp_path, "--now", FIXED_NOW.isoformat())
    for name in DETERMINISTIC:
        assert read(tmp_path / OUTPUT_FILES[name]) == read(fixture_run.outputs[name])


@pytest.mark.parametrize(
    "args",
    [
        ["--strategy", "/nonexistent/strategy.txt"],
        ["--validator", "llm"],
        ["--weight", "levenshtein=abc"],
        ["--weight", "levenshtein=-1"],
        ["--stop-after", "0"],
        ["--now", "yesterday"],
        ["--catalog", "aas"],
    ],
)
def test_cli_config_errors_exit_1(tmp_path, args):
    r = invoke("map", "--out", tmp_path, *args)
    assert r.exit_code == 1, r.output
    assert "error:" in r.output


def test_cli_data_error_exit_2(tmp_path):
    bad = tmp_path / "aas.jsonl"
    bad.write_text("{not json\n")
    r = invoke("map", "--out", tmp_path / "o", "--catalog-dir", default_catalogs()["pds"].parent, "--catalog", f"aas={bad}")
    assert r.exit_code == 2, r.output


def test_cli_transport_error_exit_3(tmp_path, monkeypatch):
    def fail(config, validator=None):
        raise PipelineTransportError("strategy line 1: validator endpoint failed on every call")

    monkeypatch.setattr(cli, "run_pipeline", fail)
    r = invoke("map", "--out", tmp_path)
    assert r.exit_code == 3


def test_cli_validate_strategy(tmp_path):
    r = invoke("validate-strategy", default_strategy())
    assert r.exit_code == 0 and "7 lines ok" in r.output
    bad = tmp_path / "s.txt"
    bad.write_text("pds, moon: levenshtein\n")
    r = invoke("validate-strategy", bad)
    assert r.exit_code == 1 and "unknown-source" in r.output
    broken = tmp_path / "b.txt"
    broken.write_text("pds aas levenshtein\n")
    assert invoke("validate-strategy", broken).exit_code == 1


def test_cli_ingest_diff(tmp_path):
    prev = tmp_path / "prev"
    prev.mkdir()
    (prev / "aas.jsonl").write_text(
        '{"uri": "gone", "source": "aas", "pref_label": "Gone"}\n{"uri": "keck", "source": "aas", "pref_label": "Keck"}\n'
    )
    current = tmp_path / "aas.jsonl"
    current.write_text(
        '{"uri": "keck", "source": "aas", "pref_label": "W. M. Keck Observatory"}\n{"uri": "new", "source": "aas", "pref_label": "New"}\n'
    )
    out = tmp_path / "out"
    r = invoke("ingest", current, "--previous", prev, "--out", out, "--now", "2025-01-02T03:04:05")
    assert r.exit_code == 0, r.output
    delta = json.loads(r.output)["aas"]["delta"]
    assert delta == {"added": ["new"], "modified": ["keck"], "deprecated": ["gone"]}
    lines = [json.loads(x) for x in read(out / "aas.jsonl").splitlines()]
    gone = next(x for x in lines if x["uri"] == "gone")
    assert gone["deprecated"] is True


def test_cli_ingest_bad_record(tmp_path):
    bad = tmp_path / "aas.jsonl"
    bad.write_text('{"uri": "a", "source": "aas"}\n')
    r = invoke("ingest", bad)
    assert r.exit_code == 2 and "pref_label" in r.output


def test_cli_serve_requires_dictionary():
    r = invoke("serve")
    assert r.exit_code != 0
