from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import synthetic
from kgprobe.builder import expand
from kgprobe.coverage import (
    BenchmarkProbe,
    RelationMatcher,
    coverage,
    coverage_curve,
    detect_layout,
    extract_key,
    extract_keys,
    is_covered,
    load_benchmark,
    parse_key,
    write_benchmark,
)
from kgprobe.gateway import ModelEndpoint
from kgprobe.graph import ExpansionBudget, FactTriplet, KnowledgeGraph, node_id
from kgprobe.world import WorldSpec, random_world, world_benchmark

GENEROUS = ExpansionBudget(b0=60, alpha=0.9, d_max=2)


def tiny_graph(triples, seed):
    g = KnowledgeGraph(seeds=[node_id(seed)], budget=GENEROUS)
    names = [seed] + [n for s, _, o in triples for n in (s, o) if n != seed]
    for i, n in enumerate(dict.fromkeys(names)):
        if node_id(n) not in g.nodes:
            g.add_node(n, 0 if n == seed else 1, discovery_index=i)
    for s, r, o in triples:
        g.add_edge(FactTriplet(node_id(s), r, node_id(o)))
    return g


@pytest.fixture
def hina():
    w = WorldSpec.from_dict({"seeds": ["Hina Ameen"], "facts": [
        ["Hina Ameen", "born in", "Karachi"], ["Hina Ameen", "occupation", "geologist"]]})
    return w, tiny_graph([("Hina Ameen", "born in", "Karachi"), ("Hina Ameen", "occupation", "geologist")],
                         "Hina Ameen")


def test_key_extraction_examples(hina, king_world):
    w, _ = hina
    ep = synthetic(w)
    ask = lambda ep, q: extract_key(ep, BenchmarkProbe("t", q, ("x",)))  # noqa: E731
    assert ask(ep, "In which city was Hina Ameen born?") == ("Hina Ameen", "born in")
    assert ask(synthetic(king_world), "Stephen King was born in ___, Maine.") == ("Stephen King", "born in")
    assert ask(ep, "Colorless green ideas sleep furiously?") is None


@pytest.mark.parametrize("raw,want", [
    ("Hina Ameen | born in", ("Hina Ameen", "born in")),
    ("`Stephen King | Born In`", ("Stephen King", "born in")),
    ("NONE", None),
    ("I am not sure", None),
    ("", None),
])
def test_parse_key(raw, want):
    assert parse_key(raw) == want


def test_open_ended_partial_match(hina):
    _, g = hina
    assert is_covered(g, "Hina Ameen", "born in", ["Karachi, Pakistan"], open_ended=True)
    assert not is_covered(g, "Hina Ameen", "born in", ["Pakistan"], open_ended=False)
    assert is_covered(g, "Hina Ameen", "born in", ["Lahore", "Karachi"], open_ended=False)
    assert not is_covered(g, "Hina Ameen", "occupation", ["Karachi"], open_ended=True)
    empty = KnowledgeGraph(seeds=[], budget=GENEROUS)
    assert not is_covered(empty, "Hina Ameen", "born in", ["Karachi"], open_ended=True)


def test_synonyms_and_judge(hina):
    _, g = hina
    assert not is_covered(g, "Hina Ameen", "birthplace", ["Karachi"], False)
    syn = RelationMatcher([["born in", "birthplace", "place of birth"]])
    assert is_covered(g, "Hina Ameen", "birthplace", ["Karachi"], False, syn)
    asked = []
    judge = ModelEndpoint(lambda p: asked.append(p) or "Yes", "judge")
    m = RelationMatcher(judge=judge)
    assert m("city of birth", "born in") and m("born in", "city of birth")
    assert len(asked) == 1


def test_layouts_round_trip(tmp_path):
    assert detect_layout({"query": "X was born in ___.", "answer": "Y"}) == "cloze"
    assert detect_layout({"question": "q", "answer": "a"}) == "qa"
    assert detect_layout({"question": "q", "answers": ["a"]}) == "generic"
    with pytest.raises(ValueError):
        detect_layout({"prompt": "q"})
    with pytest.raises(ValueError):
        BenchmarkProbe("s", "q", ())
    probes = [BenchmarkProbe("bench", "Where was Ana born?", ("Lyon", "France"), True)]
    path = tmp_path / "bench.jsonl"
    write_benchmark(probes, path)
    assert load_benchmark(path) == probes


# -- synthetic oracle -------------------------------------------------------------------

def world_suite(seed):
    w = random_world(seed, n_facts=45, n_aliases=3)
    g = expand(synthetic(w), w.seeds, GENEROUS)
    return w, g, world_benchmark(w, 2)


@pytest.mark.parametrize("seed", range(4))
def test_synthesized_benchmark_fully_covered(tmp_path, seed):
    w, g, bench = world_suite(seed)
    path = tmp_path / "bench.jsonl"
    write_benchmark(bench, path)
    rep = coverage(g, load_benchmark(path), synthetic(w))
    assert rep.coverage == 1.0 and rep.unmatchable == 0


@pytest.mark.parametrize("seed", range(4))
def test_deleting_a_quarter_of_edges(seed):
    w, g, bench = world_suite(seed)
    keys = extract_keys(synthetic(w), bench)
    cut = g.copy()
    edges = sorted(cut.edges)
    for key in random.Random(seed).sample(edges, round(0.25 * len(edges))):
        cut.remove_edge(key)
    rep = coverage(cut, bench, keys=keys)
    assert abs(rep.coverage - 0.75) <= 1 / len(bench) + 1e-12


def test_nested_budgets_give_nondecreasing_curve(caplog):
    w, g, bench = world_suite(2)
    graphs = [expand(synthetic(w), w.seeds, ExpansionBudget(b, 0.7, 2)) for b in (3, 6, 12, 24, 48)]
    curve = coverage_curve(graphs, bench, synthetic(w))
    assert "not nested" not in caplog.text
    values = [c for _, c in curve]
    assert values == sorted(values) and values[-1] == 1.0
    assert [n for n, _ in curve] == sorted(n for n, _ in curve)


def test_alias_mentions_do_not_change_coverage():
    w, g, bench = world_suite(1)
    ep = synthetic(w)
    swapped = []
    for p in bench:
        q = p.question
        for group in w.aliases:
            if group[0] in q:
                q = q.replace(group[0], group[1])
        swapped.append(BenchmarkProbe(p.source, q, p.answers, p.open_ended))
    assert any(a.question != b.question for a, b in zip(bench, swapped))
    assert coverage(g, swapped, ep).coverage == coverage(g, bench, ep).coverage


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**5), drop=st.floats(0, 1), junk=st.integers(0, 5))
def test_denominator_integrity_and_subset_monotonicity(seed, drop, junk):
    w = random_world(seed, n_facts=15, n_aliases=1)
    g = expand(synthetic(w), w.seeds, GENEROUS)
    bench = world_benchmark(w, 2)
    bench += [BenchmarkProbe("junk", f"Qwzx vvb {i}?", ("nothing",)) for i in range(junk)]
    keys = extract_keys(synthetic(w), bench)
    small = g.copy()
    edges = sorted(small.edges)
    for key in random.Random(seed).sample(edges, int(drop * len(edges))):
        small.remove_edge(key)
    a, b = coverage(small, bench, keys=keys), coverage(g, bench, keys=keys)
    for rep in (a, b):
        assert rep.matched + rep.unmatched + rep.unmatchable == rep.total == len(bench)
        assert rep.unmatchable == junk
    assert a.coverage <= b.coverage
