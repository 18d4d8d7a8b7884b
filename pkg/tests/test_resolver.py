from __future__ import annotations

import json
import random
import statistics
import string
import time

import pytest
from fastapi.testclient import TestClient
from hypothesis import given, settings
from hypothesis import strategies as st

from obsmatch.model import normalize_label
from obsmatch.resolver import NotFound, ResolverIndex, load_hierarchy
from obsmatch.resolver.index import trigrams
from obsmatch.resolver.service import IndexHolder, create_app


def brute_similarity(a: str, b: str) -> float:
    a, b = a.casefold(), b.casefold()
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    longest = max(len(a), len(b))
    return 1.0 if longest == 0 else 1 - prev[-1] / longest


@pytest.fixture(scope="module")
def index(fixture_run):
    out = fixture_run.outputs
    return ResolverIndex.from_files(out["resolver"], out["facilities"])


@pytest.fixture(scope="module")
def client(fixture_run):
    out = fixture_run.outputs
    return TestClient(create_app(IndexHolder(out["resolver"], out["facilities"])))


# --- index ------------------------------------------------------------------------------------


def test_identifier_alias_resolves_exactly(index):
    hits = index.resolve("1980-090A", 5)
    assert hits[0].slug == "cosmos-1221" and hits[0].score == 1.0
    assert hits[0].label == "COSMOS 1221"
    assert len(hits) <= 5


def test_label_resolves_case_and_space_insensitive(index):
    assert index.resolve("  cosmos   1221 ", 1)[0].slug == "cosmos-1221"


def test_fuzzy_query_matches_brute_force_ranking(index):
    query = "observatorio teide"
    hits = index.resolve(query, 5)
    assert hits[0].slug == "observatorio-del-teide"
    assert 0 < hits[0].score < 1.0
    key = normalize_label(query)
    brute = {slug: max(brute_similarity(key, a) for a in e.aliases) for slug, e in index.entries.items() if e.aliases}
    best = max(brute.values())
    assert [s for s, v in brute.items() if v == best] == ["observatorio-del-teide"]
    assert hits[0].score == pytest.approx(best, abs=1e-9)


def test_empty_query_and_bad_limit(index):
    assert index.resolve("", 5) == [] and index.resolve("   ", 5) == []
    with pytest.raises(ValueError):
        index.resolve("x", 0)


def test_aliases_and_not_found(index):
    entry = index.aliases("cosmos-1221")
    assert set(entry["aliases"]) == {"COSMOS 1221", "1980-090A", "12058"}
    assert entry["expanded"] == []
    with pytest.raises(NotFound):
        index.aliases("no-such-slug")


def test_voyager_narrower_expansion(index):
    out = index.aliases("voyager", "narrower")
    assert {"voyager-1", "voyager-2"} <= {e["slug"] for e in out["expanded"]}
    broader = index.aliases("voyager-1", "broader")
    assert [e["slug"] for e in broader["expanded"]] == ["voyager"]


def test_expansion_is_transitive():
    idx = ResolverIndex({"a": ["A"], "b": ["B"], "c": ["C"]}, {"b": ["a"], "c": ["b"]})
    assert [e.slug for e in idx.expand("a", "narrower")] == ["b", "c"]
    assert [e.slug for e in idx.expand("c", "broader")] == ["a", "b"]


def test_unique_exact_alias_wins_top_spot(index):
    owners = {}
    for slug, entry in index.entries.items():
        for alias in entry.aliases:
            owners.setdefault(normalize_label(alias), set()).add(slug)
    for slug, entry in index.entries.items():
        for alias in entry.aliases:
            if len(owners[normalize_label(alias)]) == 1:
                assert index.resolve(alias, 1)[0].slug == slug
                assert alias in index.aliases(slug)["aliases"]


def test_rebuild_is_identical(fixture_run, index):
    out = fixture_run.outputs
    again = ResolverIndex.from_files(out["resolver"], out["facilities"])
    assert again.entries == index.entries and again.exact == index.exact


def test_empty_alias_list_is_tolerated():
    idx = ResolverIndex({"lonely": []})
    assert idx.aliases("lonely")["preferred"] == "lonely"


def test_load_hierarchy(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("term,label,parent,deprecated\nv1,Voyager 1,voyager,\nvoyager,Voyager,,\n")
    assert load_hierarchy(path) == {"v1": ("voyager",), "voyager": ()}


def test_bad_dictionary_file(tmp_path):
    path = tmp_path / "d.json"
    path.write_text(json.dumps(["not", "an", "object"]))
    with pytest.raises(ValueError):
        ResolverIndex.from_files(path)


_alias = st.text(alphabet=string.ascii_lowercase + " 0123456789-", min_size=1, max_size=15).filter(lambda s: s.strip())


@given(st.dictionaries(st.from_regex(r"[a-z]{1,6}", fullmatch=True), st.lists(_alias, min_size=1, max_size=3), min_size=1, max_size=6), _alias)
@settings(max_examples=300)
def test_resolve_ordering_contract(dictionary, query):
    idx = ResolverIndex(dictionary)
    hits = idx.resolve(query, 10)
    scores = [h.score for h in hits]
    assert scores == sorted(scores, reverse=True)
    assert len({h.slug for h in hits}) == len(hits)
    key = normalize_label(query)
    exact = sorted(s for s, al in dictionary.items() if key in {normalize_label(a) for a in al})
    assert [h.slug for h in hits if h.score == 1.0] == exact[:10]
    for h in hits:
        if h.score < 1.0:
            best = max(brute_similarity(key, a) for a in dict.fromkeys(dictionary[h.slug]))
            assert h.score == pytest.approx(min(best, 1 - 1e-9), abs=1e-9)
    assert idx.resolve(query, 10) == hits


def test_trigram_padding():
    assert trigrams("ab") == {"  a", " ab", "ab "}


# --- HTTP ---------------------------------------------------------------------------------------


def test_http_resolve(client):
    r = client.get("/resolve", params={"q": "1980-090A", "limit": 5})
    assert r.status_code == 200
    body = r.json()
    assert body[0] == {"slug": "cosmos-1221", "label": "COSMOS 1221", "score": 1.0}


def test_http_aliases_and_errors(client):
    r = client.get("/aliases", params={"slug": "voyager", "expand": "narrower"})
    assert r.status_code == 200 and {"voyager-1", "voyager-2"} <= {e["slug"] for e in r.json()["expanded"]}
    r = client.get("/aliases", params={"slug": "nope"})
    assert r.status_code == 404 and r.json()["error"] == "not-found"
    r = client.get("/aliases", params={"slug": "voyager", "expand": "sideways"})
    assert r.status_code == 400 and r.json()["error"] == "bad-request"
    r = client.get("/resolve", params={"q": "x", "limit": "many"})
    assert r.status_code == 400 and r.json()["error"] == "bad-request"
    r = client.get("/resolve", params={"q": "x", "limit": 0})
    assert r.status_code == 400
    r = client.get("/aliases")
    assert r.status_code == 400


def test_http_empty_query_and_health(client):
    assert client.get("/resolve", params={"q": ""}).json() == []
    health = client.get("/healthz")
    assert health.status_code == 200 and health.json()["status"] == "ok"


def test_holder_reload_swaps_index(tmp_path):
    path = tmp_path / "d.json"
    path.write_text(json.dumps({"a": ["Alpha"]}))
    holder = IndexHolder(path)
    client = TestClient(create_app(holder))
    assert client.get("/resolve", params={"q": "Alpha"}).json()[0]["slug"] == "a"
    path.write_text(json.dumps({"b": ["Alpha"]}))
    holder.reload()
    assert client.get("/resolve", params={"q": "Alpha"}).json()[0]["slug"] == "b"


# --- latency --------------------------------------------------------------------------------------


def synthetic_dictionary(n: int, seed: int = 7) -> dict[str, list[str]]:
    rng = random.Random(seed)
    words = ["".join(rng.choices(string.ascii_lowercase, k=rng.randint(3, 9))) for _ in range(3000)]
    out = {}
    for i in range(n):
        label = " ".join(rng.choices(words, k=rng.randint(2, 4))).title()
        out[f"facility-{i:05d}"] = [label, f"{label[:3].upper()}-{i}", f"{rng.randint(1957, 2030)}-{rng.randint(0, 999):03d}A"]
    return out


def median_query_ms(idx: ResolverIndex, n_queries: int = 200, seed: int = 11) -> float:
    rng = random.Random(seed)
    alphabet = string.ascii_lowercase + "  "
    queries = ["".join(rng.choices(alphabet, k=30)) for _ in range(n_queries // 2)]
    labels = [e.preferred for e in idx.entries.values()]
    # half the queries are perturbed real labels, which hit many trigram postings
    for label in rng.sample(labels, n_queries // 2):
        q = list(((label + " ") * 8)[:30])
        q[rng.randrange(30)] = "x"
        queries.append("".join(q))
    times = []
    for q in queries:
        t0 = time.perf_counter()
        idx.resolve(q, 10)
        times.append((time.perf_counter() - t0) * 1000)
    return statistics.median(times)


def test_ten_thousand_entries_latency():
    idx = ResolverIndex(synthetic_dictionary(10_000))
    assert len(idx) == 10_000
    assert median_query_ms(idx) < 50.0
