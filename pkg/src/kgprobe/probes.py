"""Probe suites built from graph paths: forgetting, perturbed forgetting and retention."""
from __future__ import annotations

import json
import logging
import random
from collections import Counter, deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .gateway import BudgetExhausted, TransportError
from .graph import Hop, KnowledgeGraph, hop_endpoints, normalize_name, paths_from_seed, short_hash
from .phrasing import render_chain
from .prompts import DECOMPOSE, DECOMPOSE_MARKER, REPHRASE
from .scorer import grade

log = logging.getLogger(__name__)

FORGET_HOP_KINDS = {1: "forget_1hop", 2: "forget_2hop", 3: "forget_3hop"}
DEFAULT_KINDS = ("forget_1hop", "forget_2hop", "forget_3hop", "forget_alias", "forget_decomposed",
                 "retain_1away", "retain_2away", "retain_relation")


class ProbeError(ValueError):
    pass


@dataclass
class Probe:
    id: str
    kind: str
    question: str
    expected: list[str]
    path: list[Hop]
    answer_node: str
    prefilter_passed: bool | None = None
    distance: int | None = None
    base_id: str | None = None

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "kind": self.kind,
            "question": self.question,
            "expected": list(self.expected),
            "path": [[h.edge_id, h.inverted] for h in self.path],
            "answer_node": self.answer_node,
            "prefilter_passed": self.prefilter_passed,
        }
        if self.distance is not None:
            d["distance"] = self.distance
        if self.base_id is not None:
            d["base_id"] = self.base_id
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Probe":
        return cls(
            id=d["id"], kind=d["kind"], question=d["question"], expected=list(d["expected"]),
            path=[Hop(e, bool(inv)) for e, inv in d["path"]], answer_node=d["answer_node"],
            prefilter_passed=d.get("prefilter_passed"), distance=d.get("distance"),
            base_id=d.get("base_id"),
        )


def probe_id(kind: str, question: str, path: Sequence[Hop]) -> str:
    steps = ",".join(f"{h.edge_id}{'~' if h.inverted else ''}" for h in path)
    return "p" + short_hash(f"{kind}|{question}|{steps}", 16)


def write_probes(probes: Iterable[Probe], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in probes:
            fh.write(json.dumps(p.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")


def read_probes(path: str | Path) -> list[Probe]:
    with open(path, encoding="utf-8") as fh:
        return [Probe.from_dict(json.loads(line)) for line in fh if line.strip()]


def answer_forms(graph: KnowledgeGraph, nid: str) -> list[str]:
    node = graph.nodes[nid]
    rest = sorted(a for a in node.aliases if normalize_name(a) != normalize_name(node.canonical_name))
    return [node.canonical_name] + rest


def _make(graph: KnowledgeGraph, kind: str, chain: Sequence[Hop], anchor_text: str | None = None,
          distance: int | None = None) -> Probe:
    index = graph.edge_index()
    hops = [(index[h.edge_id].relation, h.inverted) for h in chain]
    start = hop_endpoints(index[chain[0].edge_id], chain[0].inverted)[0]
    end = hop_endpoints(index[chain[-1].edge_id], chain[-1].inverted)[1]
    question = render_chain(anchor_text or graph.name(start), hops)
    return Probe(probe_id(kind, question, chain), kind, question, answer_forms(graph, end),
                 list(chain), end, distance=distance)


def replay(graph: KnowledgeGraph, path: Sequence[Hop]) -> str:
    """Walk a probe path hop by hop and return the node it lands on."""
    index = graph.edge_index()
    cur = None
    for h in path:
        start, end = hop_endpoints(index[h.edge_id], h.inverted)
        if cur is not None and start != cur:
            raise ProbeError(f"path breaks at {h.edge_id}")
        cur = end
    if cur is None:
        raise ProbeError("empty path")
    return cur


# -- forgetting probes -------------------------------------------------------------

def gen_single_hop(graph: KnowledgeGraph) -> list[Probe]:
    forget = [e for e in graph.sorted_edges() if e.expected_forget]
    if not forget:
        raise ProbeError("graph has no edges marked for forgetting")
    return [_make(graph, "forget_1hop", [Hop(e.id, False)]) for e in forget]


def gen_multi_hop(graph: KnowledgeGraph, n: int) -> list[Probe]:
    if n not in (2, 3):
        raise ProbeError(f"multi-hop length must be 2 or 3, got {n}")
    kind = FORGET_HOP_KINDS[n]
    out = []
    for target in sorted(graph.nodes):
        for chain in paths_from_seed(graph, target, n):
            out.append(_make(graph, kind, chain))
    return out


def perturb_alias(probe: Probe, graph: KnowledgeGraph) -> Probe | None:
    """Same chain, but the named anchor entity is written with a non-canonical alias."""
    if probe.kind == "forget_decomposed":
        raise ProbeError("alias perturbation applies to plain forgetting probes")
    index = graph.edge_index()
    first = probe.path[0]
    anchor = hop_endpoints(index[first.edge_id], first.inverted)[0]
    others = answer_forms(graph, anchor)[1:]
    if not others:
        return None
    p = _make(graph, "forget_alias", probe.path, anchor_text=others[0])
    return replace(p, base_id=probe.id, prefilter_passed=None)


def decompose(probe: Probe) -> Probe:
    if probe.kind == "forget_decomposed" or probe.question.startswith(DECOMPOSE_MARKER):
        raise ProbeError(f"probe {probe.id} is already decomposed")
    if probe.kind not in ("forget_2hop", "forget_3hop"):
        raise ProbeError(f"decomposition needs a multi-hop probe, got {probe.kind}")
    question = DECOMPOSE.render(question=probe.question)
    return replace(probe, id=probe_id("forget_decomposed", question, probe.path),
                   kind="forget_decomposed", question=question, base_id=probe.id,
                   prefilter_passed=None)


# -- retention probes ------------------------------------------------------------------

def edge_distances(graph: KnowledgeGraph) -> dict[str, int]:
    """Undirected edge distance from each edge to the nearest forget edge (forget edges are 0)."""
    adj = graph.adjacency()
    node_dist: dict[str, int] = {}
    queue: deque[str] = deque()
    for e in graph.sorted_edges():
        if e.expected_forget:
            for n in (e.subject, e.object):
                if n not in node_dist:
                    node_dist[n] = 0
                    queue.append(n)
    while queue:
        cur = queue.popleft()
        for nxt in sorted(adj.get(cur, ())):
            if nxt not in node_dist:
                node_dist[nxt] = node_dist[cur] + 1
                queue.append(nxt)
    out = {}
    for e in graph.sorted_edges():
        if e.expected_forget:
            out[e.id] = 0
        else:
            ds = [node_dist[n] for n in (e.subject, e.object) if n in node_dist]
            if ds:
                out[e.id] = 1 + min(ds)
    return out


def gen_retention(graph: KnowledgeGraph, top_m: int = 5, relation_min_distance: int = 2) -> list[Probe]:
    dist = edge_distances(graph)
    seeds = set(graph.seeds)
    out: list[Probe] = []
    candidates = [e for e in graph.sorted_edges() if not e.expected_forget and e.object not in seeds]
    for kind, d in (("retain_1away", 1), ("retain_2away", 2)):
        for e in candidates:
            if dist.get(e.id) == d:
                out.append(_make(graph, kind, [Hop(e.id, False)], distance=d))
    pool = [e for e in candidates if e.subject not in seeds]
    freq = Counter(e.relation for e in pool)
    top = [r for r, _ in sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))[:top_m]]
    for e in pool:
        d = dist.get(e.id)
        if e.relation in top and d is not None and d >= relation_min_distance:
            out.append(_make(graph, "retain_relation", [Hop(e.id, False)], distance=d))
    return out


def generate(graph: KnowledgeGraph, *, max_hops: int = 3, top_m: int = 5,
             alias_kinds: Sequence[str] = ("forget_2hop",),
             decompose_kinds: Sequence[str] = ("forget_2hop",)) -> list[Probe]:
    """Every probe kind for one graph, in a fixed order."""
    if not 1 <= max_hops <= 3:
        raise ProbeError("max_hops must be between 1 and 3")
    probes = gen_single_hop(graph)
    for n in range(2, max_hops + 1):
        probes += gen_multi_hop(graph, n)
    base = list(probes)
    for p in base:
        if p.kind in alias_kinds:
            q = perturb_alias(p, graph)
            if q is not None:
                probes.append(q)
    for p in base:
        if p.kind in decompose_kinds:
            probes.append(decompose(p))
    probes += gen_retention(graph, top_m=top_m)
    return probes


def rephrase(endpoint, probe: Probe) -> Probe:
    """Ask a model to smooth the wording of a templated question (off by default)."""
    text = endpoint.complete(REPHRASE.render(question=probe.question), call_class="probe").strip()
    if not text:
        return probe
    return replace(probe, question=text, id=probe_id(probe.kind, text, probe.path))


# -- prefilter and sampling ------------------------------------------------------------

def prefilter(endpoint, probes: Sequence[Probe], judge=None) -> tuple[list[Probe], bool]:
    """Mark which probes the pre-unlearning model answers correctly.

    Returns the annotated probes and whether the pass was cut short; probes
    left unasked keep ``prefilter_passed = None``.
    """
    workers = max(1, getattr(endpoint, "max_in_flight", 1))

    def ask(p: Probe):
        try:
            raw = endpoint.complete(p.question, call_class="probe")
        except (BudgetExhausted, TransportError) as exc:
            return exc
        return grade(p.expected, raw, judge, question=p.question, probe_id=p.id).correct

    if workers > 1 and len(probes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            verdicts = list(pool.map(ask, probes))
    else:
        verdicts = [ask(p) for p in probes]
    truncated = False
    out = []
    for p, v in zip(probes, verdicts):
        if isinstance(v, Exception):
            truncated = True
            out.append(replace(p, prefilter_passed=None))
        else:
            out.append(replace(p, prefilter_passed=bool(v)))
    if truncated:
        log.warning("prefilter incomplete: budget or transport failure")
    return out, truncated


@dataclass
class Sample:
    probes: list[Probe]
    kinds: dict[str, list[str]]
    shortfall: dict[str, int] = field(default_factory=dict)


def sample(probes: Sequence[Probe], per_kind: int, seed: int,
           kinds: Sequence[str] | None = None) -> Sample:
    if per_kind < 1:
        raise ValueError("per_kind must be at least 1")
    by_kind: dict[str, list[Probe]] = {}
    for p in probes:
        if p.prefilter_passed is True:
            by_kind.setdefault(p.kind, []).append(p)
    chosen: list[Probe] = []
    ids: dict[str, list[str]] = {}
    shortfall: dict[str, int] = {}
    for kind in sorted(set(by_kind) | set(kinds or ())):
        pool = sorted(by_kind.get(kind, []), key=lambda p: p.id)
        if len(pool) <= per_kind:
            picked = pool
            if len(pool) < per_kind:
                shortfall[kind] = per_kind - len(pool)
        else:
            rng = random.Random(f"{seed}:{kind}")
            picked = sorted(rng.sample(pool, per_kind), key=lambda p: p.id)
        chosen += picked
        ids[kind] = [p.id for p in picked]
    return Sample(chosen, ids, shortfall)


def manifest(graph_hash: str, s: Sample, sample_seed: int, per_kind: int) -> dict:
    return {
        "graph_hash": graph_hash,
        "kinds": {k: list(v) for k, v in sorted(s.kinds.items())},
        "sample_seed": sample_seed,
        "per_kind": per_kind,
        "shortfall": dict(sorted(s.shortfall.items())),
    }


def select(probes: Sequence[Probe], man: dict) -> list[Probe]:
    wanted = {pid for ids in man["kinds"].values() for pid in ids}
    found = [p for p in probes if p.id in wanted]
    if len({p.id for p in found}) != len(wanted):
        raise ProbeError("manifest names probes missing from the probe file")
    return found
