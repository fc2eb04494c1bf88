"""How much of an external benchmark a constructed graph already covers."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .graph import KnowledgeGraph, normalize_name, normalize_relation
from .phrasing import render_chain
from .prompts import COVERAGE_KEY, RELATION_EQUIV, parse_yes_no
from .scorer import normalize_answer

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BenchmarkProbe:
    source: str
    question: str
    answers: tuple[str, ...]
    open_ended: bool = False

    def __post_init__(self):
        if not self.answers:
            raise ValueError(f"benchmark probe without answers: {self.question!r}")

    def to_dict(self) -> dict:
        return {"source": self.source, "question": self.question,
                "answers": list(self.answers), "open_ended": self.open_ended}


def _as_list(value) -> list[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return [value]
    return [str(v) for v in value]


def _generic(row: dict, source: str) -> BenchmarkProbe:
    return BenchmarkProbe(row.get("source", source), row["question"], tuple(_as_list(row["answers"])),
                          bool(row.get("open_ended", False)))


def _cloze(row: dict, source: str) -> BenchmarkProbe:
    # fill-in-the-blank layout: {"query": "X was born in ___.", "answer": "..."}
    return BenchmarkProbe(source, row["query"], tuple(_as_list(row["answer"])), False)


def _qa(row: dict, source: str) -> BenchmarkProbe:
    # free-form question/answer layout: {"question": "...", "answer": "..."}
    return BenchmarkProbe(source, row["question"], tuple(_as_list(row["answer"])), True)


ADAPTERS = {"generic": _generic, "cloze": _cloze, "qa": _qa}


def detect_layout(row: dict) -> str:
    if "answers" in row:
        return "generic"
    if "query" in row and "answer" in row:
        return "cloze"
    if "question" in row and "answer" in row:
        return "qa"
    raise ValueError(f"unrecognized benchmark row keys: {sorted(row)}")


def load_benchmark(path: str | Path, layout: str | None = None) -> list[BenchmarkProbe]:
    source = Path(path).stem
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            out.append(ADAPTERS[layout or detect_layout(row)](row, source))
    return out


def write_benchmark(probes: Iterable[BenchmarkProbe], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in probes:
            fh.write(json.dumps(p.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")


def parse_key(raw: str) -> tuple[str, str] | None:
    for line in raw.strip().splitlines():
        line = line.strip().strip("`").strip()
        if not line or line.upper().startswith("NONE"):
            return None
        if "|" in line:
            entity, _, relation = line.partition("|")
            entity, relation = entity.strip().strip("\"'"), normalize_relation(relation)
            if entity and relation:
                return entity, relation
        return None
    return None


def extract_key(endpoint, probe: BenchmarkProbe) -> tuple[str, str] | None:
    """(entity, relation) the benchmark question asks about, or None when unmatchable."""
    raw = endpoint.complete(COVERAGE_KEY.render(question=probe.question), call_class="coverage")
    return parse_key(raw)


def _answer_hit(graph_form: str, answer: str, open_ended: bool) -> bool:
    g, a = normalize_answer(graph_form), normalize_answer(answer)
    if not g or not a:
        return False
    if g == a or f" {g} " in f" {a} ":
        return True
    return open_ended and f" {a} " in f" {g} "


class RelationMatcher:
    """Normalized-label equality, optional synonym groups, optional model judge."""

    def __init__(self, synonyms: Iterable[Iterable[str]] = (), judge=None):
        self.group: dict[str, int] = {}
        for i, names in enumerate(synonyms):
            for n in names:
                self.group[normalize_relation(n)] = i
        self.judge = judge
        self._memo: dict[tuple[str, str], bool] = {}

    def __call__(self, a: str, b: str) -> bool:
        a, b = normalize_relation(a), normalize_relation(b)
        if a == b:
            return True
        if a in self.group and self.group.get(b) == self.group[a]:
            return True
        if self.judge is None:
            return False
        key = (a, b) if a <= b else (b, a)
        if key not in self._memo:
            raw = self.judge.complete(RELATION_EQUIV.render(a=key[0], b=key[1]), call_class="coverage")
            self._memo[key] = parse_yes_no(raw) is True
        return self._memo[key]


def is_covered(graph: KnowledgeGraph, entity: str, relation: str, answers: Sequence[str],
               open_ended: bool, matcher: RelationMatcher | None = None) -> bool:
    matcher = matcher or RelationMatcher()
    node = graph.find(entity)
    if node is None:
        return False
    for e in graph.sorted_edges():
        if node.id == e.subject:
            other = e.object
        elif node.id == e.object:
            other = e.subject
        else:
            continue
        if not matcher(e.relation, relation):
            continue
        forms = sorted(graph.nodes[other].aliases)
        if any(_answer_hit(f, a, open_ended) for f in forms for a in answers):
            return True
    return False


@dataclass
class CoverageReport:
    total: int
    matched: int
    unmatched: int
    unmatchable: int
    details: list[dict] = field(default_factory=list)
    curve: list[tuple[int, float]] | None = None

    @property
    def coverage(self) -> float:
        return self.matched / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        d = {"total": self.total, "matched": self.matched, "unmatched": self.unmatched,
             "unmatchable": self.unmatchable, "coverage": self.coverage, "details": self.details}
        if self.curve is not None:
            d["curve"] = [list(p) for p in self.curve]
        return d


def extract_keys(endpoint, benchmark: Sequence[BenchmarkProbe]) -> list[tuple[str, str] | None]:
    return [extract_key(endpoint, p) for p in benchmark]


def coverage(graph: KnowledgeGraph, benchmark: Sequence[BenchmarkProbe], extractor=None, *,
             keys: Sequence[tuple[str, str] | None] | None = None,
             matcher: RelationMatcher | None = None) -> CoverageReport:
    if keys is None:
        if extractor is None:
            raise ValueError("need an extractor endpoint or precomputed keys")
        keys = extract_keys(extractor, benchmark)
    matched = unmatched = unmatchable = 0
    details = []
    for p, key in zip(benchmark, keys):
        if key is None:
            unmatchable += 1
            details.append({"question": p.question, "key": None, "covered": False})
            continue
        hit = is_covered(graph, key[0], key[1], p.answers, p.open_ended, matcher)
        matched += hit
        unmatched += not hit
        details.append({"question": p.question, "key": list(key), "covered": hit})
    return CoverageReport(len(benchmark), matched, unmatched, unmatchable, details)


def _contains(small: KnowledgeGraph, big: KnowledgeGraph) -> bool:
    names = lambda g: {normalize_name(g.name(n)) for n in g.nodes}  # noqa: E731
    triples = lambda g: {(normalize_name(g.name(s)), r, normalize_name(g.name(o))) for s, r, o in g.edges}  # noqa: E731
    return names(small) <= names(big) and triples(small) <= triples(big)


def coverage_curve(graphs: Sequence[KnowledgeGraph], benchmark: Sequence[BenchmarkProbe],
                   extractor=None, *, keys=None, matcher=None) -> list[tuple[int, float]]:
    """(node count, coverage) per graph, ordered by graph size; keys are extracted once."""
    if keys is None:
        keys = extract_keys(extractor, benchmark)
    ordered = sorted(graphs, key=lambda g: (len(g.nodes), len(g.edges)))
    for a, b in zip(ordered, ordered[1:]):
        if not _contains(a, b):
            log.warning("graphs are not nested; the coverage curve need not be monotone")
            break
    return [(len(g.nodes), coverage(g, benchmark, keys=keys, matcher=matcher).coverage) for g in ordered]


def benchmark_from_graph(graph: KnowledgeGraph, source: str = "synthetic") -> list[BenchmarkProbe]:
    """One closed question per edge, asked from subject and relation."""
    out = []
    for e in graph.sorted_edges():
        q = render_chain(graph.name(e.subject), [(e.relation, False)])
        out.append(BenchmarkProbe(source, q, (graph.name(e.object),), False))
    return out


def benchmark_from_triples(triples: Iterable[tuple[str, str, str]], source: str = "synthetic",
                           open_ended: bool = False) -> list[BenchmarkProbe]:
    return [BenchmarkProbe(source, render_chain(s, [(r, False)]), (o,), open_ended)
            for s, r, o in triples]
