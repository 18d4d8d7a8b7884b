from __future__ import annotations

import json
import logging
from datetime import datetime

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obsmatch.emit import MappingRecord
from obsmatch.evaluation import replay
from obsmatch.ingest import enrich, load_snapshot
from obsmatch.matcher import CandidatePair, Decision as CriterionDecision, PairStatus
from obsmatch.model import Entity, SynonymRegistry
from obsmatch.pipeline import default_catalogs
from obsmatch.validate import (
    ChatTransport,
    Decision,
    GroundTruthValidator,
    HttpChatTransport,
    LlmValidator,
    RuleValidator,
    TransportError,
    ValidationConfig,
    ValidationDeferred,
    Verdict,
    build_prompt,
    llm_validate,
    rank_pairs,
    rule_validate,
    run_validation_loop,
)

CLOCK = lambda: datetime(2025, 7, 23, 11, 12, 18)  # noqa: E731


def fixture_entity(source: str, uri: str) -> Entity:
    with open(default_catalogs()[source], encoding="utf-8") as fh:
        snap = load_snapshot(fh, source=source)
    return enrich(snap.by_uri()[uri])


@pytest.fixture(scope="module")
def la_silla_pair():
    left = fixture_entity("pds", "1.52-m-spectrographic-cassegrain-coude-reflector")
    right = fixture_entity("aas", "european-southern-observatory-1.52m-telescope-at-la-silla-observatory")
    return CandidatePair(left, right)


def simple_pair(i: int, score: float | None = 0.5) -> CandidatePair:
    p = CandidatePair(Entity(uri=f"l{i:03d}", source="pds", pref_label=f"L{i}"), Entity(uri=f"r{i:03d}", source="aas", pref_label=f"R{i}"))
    p.global_score = score
    return p


def registry_for(pairs) -> SynonymRegistry:
    return SynonymRegistry([e for p in pairs for e in (p.left, p.right)])


class Scripted:
    """Returns verdicts from a script in call order."""

    def __init__(self, script: str):
        self.script = list(script)
        self.calls = 0

    def __call__(self, pair):
        step = self.script[self.calls]
        self.calls += 1
        if step == "?":
            raise ValidationDeferred("scripted deferral")
        decision = Decision.SAME if step == "S" else Decision.DISTINCT
        return Verdict(decision, f"scripted {step}", "script")


def simulate_calls(script: str, k: int) -> int:
    """Oracle for the stop rule on disjoint pairs: walk the script counting Distinct runs."""
    run = 0
    for n, step in enumerate(script, 1):
        if step == "S":
            run = 0
        elif step == "D":
            run += 1
            if run == k:
                return n
    return len(script)


# --- prompt ---------------------------------------------------------------------------------


def test_prompt_lists_fields_of_both_entities(la_silla_pair):
    prompt = build_prompt(la_silla_pair)
    assert prompt.count("1.52") >= 2
    assert "location: South America" in prompt and "location: Earth" in prompt
    assert "Entity A:" in prompt and "Entity B:" in prompt
    assert "narrower" in prompt and "broader" in prompt
    assert "SAME or DISTINCT" in prompt


def test_prompt_omits_empty_fields(la_silla_pair):
    prompt = build_prompt(la_silla_pair)
    block_b = prompt.split("Entity B:")[1]
    assert "description:" not in block_b
    assert "description:" in prompt.split("Entity B:")[0]
    assert not any(line.rstrip().endswith(":") and line.startswith("  ") for line in prompt.splitlines())


def test_prompt_deterministic(la_silla_pair):
    again = CandidatePair(la_silla_pair.left, la_silla_pair.right)
    assert build_prompt(la_silla_pair) == build_prompt(again)


# --- rule validator ----------------------------------------------------------------------------


@pytest.mark.parametrize("score, same", [(0.9, True), (0.85, True), (0.3, False)])
def test_rule_threshold(score, same):
    v = rule_validate(simple_pair(0, score), ValidationConfig())
    assert v.same is same and v.reviewer_label == "rule-validator"
    assert f"{score:.4f}" in v.justification


def test_rule_label_match_wins():
    p = simple_pair(0, 0.01)
    p.decisions["label_match"] = CriterionDecision.ACCEPT
    assert rule_validate(p, ValidationConfig()).same


def test_rule_needs_score():
    with pytest.raises(ValueError):
        rule_validate(simple_pair(0, None), ValidationConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        ValidationConfig(stop_after_consecutive_rejections=0)


# --- llm validator ------------------------------------------------------------------------------


class FakeTransport(ChatTransport):
    model = "deepseek-v3:671b-q4_K_M"

    def __init__(self, *replies):
        self.replies = list(replies)
        self.prompts = []

    def complete(self, prompt):
        self.prompts.append(prompt)
        reply = self.replies.pop(0)
        if isinstance(reply, Exception):
            raise reply
        return reply


def test_llm_same_with_justification(la_silla_pair):
    t = FakeTransport("SAME \u2014 both refer to the 1.52m telescope at La Silla")
    v = llm_validate(la_silla_pair, t)
    assert v.decision is Decision.SAME
    assert v.justification == "both refer to the 1.52m telescope at La Silla"
    assert v.reviewer_label == "deepseek-v3:671b-q4_K_M"
    assert t.prompts == [build_prompt(la_silla_pair)]


def test_llm_distinct_case_insensitive(la_silla_pair):
    v = llm_validate(la_silla_pair, FakeTransport("distinct: different launch years"))
    assert v.decision is Decision.DISTINCT and v.justification == "different launch years"


def test_llm_reprompt_then_success(la_silla_pair):
    t = FakeTransport("I am not sure", "Same\nshared aperture and site")
    assert llm_validate(la_silla_pair, t).same
    assert len(t.prompts) == 2 and "SAME or DISTINCT" in t.prompts[1].splitlines()[-1]


def test_llm_garbage_twice_defers(la_silla_pair, caplog):
    with caplog.at_level(logging.WARNING):
        with pytest.raises(ValidationDeferred):
            llm_validate(la_silla_pair, FakeTransport("hmm", "samey"))
    assert "unparseable" in caplog.text


def test_llm_transport_failure_defers(la_silla_pair):
    v = LlmValidator(FakeTransport(TransportError("down")))
    with pytest.raises(ValidationDeferred) as info:
        v(la_silla_pair)
    assert isinstance(info.value.__cause__, TransportError)
    assert v.calls == 1


def test_http_chat_transport_and_redaction(caplog):
    seen = []

    def handler(request: httpx.Request) -> httpx.Response:
        seen.append((request.url.path, request.headers.get("authorization"), json.loads(request.content)))
        return httpx.Response(200, json={"choices": [{"message": {"content": "SAME ok"}}]})

    t = HttpChatTransport("http://llm/v1/", "m", api_key="sekret-key", client=httpx.Client(transport=httpx.MockTransport(handler)))
    with caplog.at_level(logging.INFO, logger="obsmatch.validate"):
        assert t.complete("prompt sekret-key") == "SAME ok"
    path, auth, body = seen[0]
    assert path == "/v1/chat/completions" and auth == "Bearer sekret-key"
    assert body["model"] == "m" and body["messages"][0]["content"] == "prompt sekret-key"
    assert "sekret-key" not in caplog.text and "***" in caplog.text


def test_http_chat_transport_retries_then_fails():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(500)

    t = HttpChatTransport("http://llm", "m", retries=1, client=httpx.Client(transport=httpx.MockTransport(handler)))
    with pytest.raises(TransportError):
        t.complete("x")
    assert len(calls) == 2


# --- loop ---------------------------------------------------------------------------------------


def run(script: str, k: int, n: int | None = None):
    pairs = [simple_pair(i, 1 - i / 1000) for i in range(n or len(script))]
    validator = Scripted(script)
    records, stats = run_validation_loop(pairs, validator, ValidationConfig(k), registry_for(pairs), CLOCK)
    return validator, records, stats


def test_stop_rule_all_distinct():
    v, records, stats = run("DDDDDD", 3)
    assert v.calls == 3 and stats.stopped_early and stats.pending == 3 and not records


def test_stop_rule_reset_by_same():
    v, records, stats = run("DDSDDD", 3)
    assert v.calls == 6 == simulate_calls("DDSDDD", 3)
    assert stats.stopped_early and stats.accepted == 1 and stats.rejected == 5 and len(records) == 1


def test_all_same_merges_everything():
    v, records, stats = run("SSSS", 1)
    assert stats.accepted == 4 and not stats.stopped_early


def test_deferred_pairs_do_not_break_streak():
    v, records, stats = run("DD?D", 3)
    assert v.calls == 4 and stats.deferred == 1 and stats.stopped_early


@given(st.text(alphabet="SD?", min_size=1, max_size=30), st.integers(1, 5))
@settings(max_examples=500)
def test_stop_rule_matches_simulation(script, k):
    v, records, stats = run(script, k)
    assert v.calls == simulate_calls(script, k)
    assert stats.calls == v.calls <= len(script)
    assert stats.accepted == len(records) == script[: v.calls].count("S")


def test_ranking_and_unscored():
    pairs = [simple_pair(2, 0.5), simple_pair(1, 0.5), simple_pair(3, 0.9), simple_pair(4, None)]
    ranked = rank_pairs(pairs)
    assert [p.left.uri for p in ranked] == ["l003", "l001", "l002"]


def test_transitive_skip():
    a = Entity(uri="a", source="pds", pref_label="A")
    b = Entity(uri="b", source="aas", pref_label="B")
    c = Entity(uri="c", source="aas", pref_label="C")
    reg = SynonymRegistry([a, b, c])
    reg.merge("aas:b", "aas:c")
    p1, p2 = CandidatePair(a, b), CandidatePair(a, c)
    p1.global_score, p2.global_score = 0.9, 0.8
    validator = RuleValidator(ValidationConfig(rule_threshold=0.5))
    records, stats = run_validation_loop([p1, p2], validator, ValidationConfig(rule_threshold=0.5), reg, CLOCK)
    assert validator.calls == 1 and stats.skipped == 1 and reg.same("pds:a", "aas:c")
    (rec,) = records
    assert isinstance(rec, MappingRecord)
    assert rec.similarity_measure == "weighted_sum" and rec.similarity_score == 0.9
    assert rec.scores["weighted_sum"] == 0.9 and rec.reviewer_label == "rule-validator"
    assert p1.status is PairStatus.VALIDATED


def test_inconsistency_recorded():
    a, b, c = (Entity(uri=u, source=s, pref_label=u) for u, s in (("a", "pds"), ("b", "aas"), ("c", "aas")))
    reg = SynonymRegistry([a, b, c])
    pairs = [CandidatePair(a, b), CandidatePair(a, c), CandidatePair(b, c)]
    for p, s in zip(pairs, (0.9, 0.8, 0.7)):
        p.global_score = s
    # a~b accepted, then b~c rejected, then (scripted) a~c accepted → b and c end up together
    pairs[2].global_score = 0.85
    _, stats = run_validation_loop(pairs, Scripted("SDS"), ValidationConfig(5), reg, CLOCK)
    assert stats.inconsistencies == [("aas:b", "aas:c")]


def test_loop_is_deterministic():
    outs = [run("SDSDDS?S", 2)[1] for _ in range(2)]
    assert outs[0] == outs[1]


# --- replay -----------------------------------------------------------------------------------------


def test_ground_truth_validator_defers_unknown():
    v = GroundTruthValidator({("pds:x", "aas:y"): True})
    p = CandidatePair(Entity(uri="y", source="aas", pref_label="Y"), Entity(uri="x", source="pds", pref_label="X"))
    assert v(p).same
    with pytest.raises(ValidationDeferred):
        v(simple_pair(0))


def test_replay_reproduces_annotated_counts():
    result = replay()
    assert result.stats.ranked == 30
    assert (result.stats.accepted, result.stats.rejected) == (19, 11)
    assert result.stats.inconsistencies == [] and result.disagreements == 0
    assert result.calls == 30
