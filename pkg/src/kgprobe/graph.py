"""Core graph types: entities, fact triplets, expansion budgets and path search."""
from __future__ import annotations

import hashlib
import json
import math
import re
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, NamedTuple

_WS = re.compile(r"\s+")
_EDGE_PUNCT = "\"'`.,;:!?()[]{}<>*"


class BudgetError(ValueError):
    pass


class GraphInvariantError(AssertionError):
    pass


def normalize_name(name: str) -> str:
    """Case-folded, whitespace-collapsed form used for alias comparison."""
    text = _WS.sub(" ", name).strip().strip(_EDGE_PUNCT).strip()
    return text.casefold()


def normalize_relation(rel: str) -> str:
    text = _WS.sub(" ", rel.lower()).strip()
    text = text.strip("\"'`").strip()
    return text.rstrip(".,;:!?").strip()


def clean_surface(name: str) -> str:
    """Trim a surface form without changing its case."""
    return _WS.sub(" ", name).strip().strip(_EDGE_PUNCT).strip()


def node_id(name: str) -> str:
    return "n" + hashlib.sha1(normalize_name(name).encode("utf-8")).hexdigest()[:12]


def short_hash(text: str, n: int = 16) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:n]


@dataclass(frozen=True)
class ExpansionBudget:
    b0: int
    alpha: float
    d_max: int
    k: int = 3
    relevance_threshold: int = 6

    def __post_init__(self):
        if not isinstance(self.b0, int) or self.b0 < 1:
            raise BudgetError(f"b0 must be a positive integer, got {self.b0!r}")
        if not (0.0 < self.alpha < 1.0):
            raise BudgetError(
                f"alpha must lie strictly inside (0, 1), got {self.alpha!r}: "
                "the geometric node-count formula is singular at alpha = 1"
            )
        if not isinstance(self.d_max, int) or self.d_max < 0:
            raise BudgetError(f"d_max must be a non-negative integer, got {self.d_max!r}")
        if not isinstance(self.k, int) or self.k < 1:
            raise BudgetError(f"k must be a positive integer, got {self.k!r}")
        if not 0 <= self.relevance_threshold <= 10:
            raise BudgetError("relevance_threshold must be within 0..10")

    def n_total(self) -> float:
        return self.b0 * (1.0 - self.alpha ** (self.d_max + 1)) / (1.0 - self.alpha)

    def a_total(self) -> float:
        return self.k * self.n_total()

    def level_width(self, depth: int) -> int:
        if depth < 0 or depth > self.d_max:
            raise IndexError(f"depth {depth} outside 0..{self.d_max}")
        return max(1, math.floor(self.b0 * self.alpha**depth))

    def node_cap(self) -> int:
        return _ceil(self.n_total())

    def call_cap(self) -> int:
        return _ceil(self.a_total())

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExpansionBudget":
        return cls(
            b0=int(data["b0"]),
            alpha=float(data["alpha"]),
            d_max=int(data["d_max"]),
            k=int(data.get("k", 3)),
            relevance_threshold=int(data.get("relevance_threshold", 6)),
        )


def _ceil(x: float) -> int:
    # absorb float noise such as 10.500000000000002
    return math.ceil(round(x, 9))


def estimate_totals(budget: ExpansionBudget) -> tuple[float, float]:
    return budget.n_total(), budget.a_total()


def level_width(budget: ExpansionBudget, depth: int) -> int:
    return budget.level_width(depth)


@dataclass
class EntityNode:
    id: str
    canonical_name: str
    aliases: set[str]
    depth: int
    relevance: int = 10
    is_seed: bool = False
    discovery_index: int = 0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "canonical_name": self.canonical_name,
            "aliases": sorted(self.aliases),
            "depth": self.depth,
            "relevance": self.relevance,
            "discovery_index": self.discovery_index,
        }


@dataclass(frozen=True)
class FactTriplet:
    subject: str
    relation: str
    object: str
    expected_forget: bool = False
    provenance: str = ""
    relevance: int = 10

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.subject, self.relation, self.object)

    @property
    def id(self) -> str:
        return "e" + short_hash(f"{self.subject}|{self.relation}|{self.object}", 12)

    def other(self, node: str) -> str:
        return self.object if node == self.subject else self.subject

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "subject": self.subject,
            "relation": self.relation,
            "object": self.object,
            "expected_forget": self.expected_forget,
            "provenance": self.provenance,
            "relevance": self.relevance,
        }


class Hop(NamedTuple):
    edge_id: str
    inverted: bool


Chain = tuple[Hop, ...]


@dataclass
class KnowledgeGraph:
    seeds: list[str]
    budget: ExpansionBudget
    nodes: dict[str, EntityNode] = field(default_factory=dict)
    edges: dict[tuple[str, str, str], FactTriplet] = field(default_factory=dict)
    calls_used: int = 0
    truncated: bool = False
    redirects: dict[str, str] = field(default_factory=dict)
    _alias_index: dict[str, str] = field(default_factory=dict, repr=False)

    # -- lookups -----------------------------------------------------------
    def resolve(self, nid: str) -> str:
        seen = set()
        while nid in self.redirects and nid not in seen:
            seen.add(nid)
            nid = self.redirects[nid]
        return nid

    def find(self, name: str) -> EntityNode | None:
        nid = self._alias_index.get(normalize_name(name))
        return self.nodes.get(nid) if nid else None

    def edge(self, edge_id: str) -> FactTriplet:
        for e in self.edges.values():
            if e.id == edge_id:
                return e
        raise KeyError(edge_id)

    def edge_index(self) -> dict[str, FactTriplet]:
        return {e.id: e for e in self.edges.values()}

    def incident(self) -> dict[str, list[FactTriplet]]:
        out: dict[str, list[FactTriplet]] = {nid: [] for nid in self.nodes}
        for e in self.sorted_edges():
            out.setdefault(e.subject, []).append(e)
            out.setdefault(e.object, []).append(e)
        return out

    def sorted_edges(self) -> list[FactTriplet]:
        return [self.edges[k] for k in sorted(self.edges)]

    def name(self, nid: str) -> str:
        return self.nodes[nid].canonical_name

    # -- mutation ----------------------------------------------------------
    def add_node(self, name: str, depth: int, *, discovery_index: int,
                 relevance: int = 10, is_seed: bool = False) -> EntityNode:
        surface = clean_surface(name)
        if not surface:
            raise ValueError("entity name must be non-empty")
        existing = self.find(surface)
        if existing is not None:
            return existing
        nid = node_id(surface)
        if nid in self.nodes:
            raise GraphInvariantError(f"id collision for {surface!r}")
        node = EntityNode(nid, surface, {surface}, depth, relevance, is_seed, discovery_index)
        self.nodes[nid] = node
        self._alias_index[normalize_name(surface)] = nid
        return node

    def add_alias(self, nid: str, alias: str) -> None:
        surface = clean_surface(alias)
        norm = normalize_name(surface)
        owner = self._alias_index.get(norm)
        if owner is not None and owner != nid:
            raise GraphInvariantError(f"alias {alias!r} already belongs to {owner}")
        node = self.nodes[nid]
        if norm not in {normalize_name(a) for a in node.aliases}:
            node.aliases.add(surface)
        self._alias_index[norm] = nid

    def add_edge(self, triplet: FactTriplet) -> bool:
        s, o = self.resolve(triplet.subject), self.resolve(triplet.object)
        if s == o:
            return False
        if s not in self.nodes or o not in self.nodes:
            raise GraphInvariantError(f"edge endpoint missing: {triplet}")
        t = replace(triplet, subject=s, object=o)
        if t.key in self.edges:
            return False
        self.edges[t.key] = t
        return True

    def remove_edge(self, key: tuple[str, str, str]) -> None:
        self.edges.pop(key, None)

    def remove_node(self, nid: str) -> None:
        node = self.nodes.pop(nid)
        for a in node.aliases:
            self._alias_index.pop(normalize_name(a), None)
        for key in [k for k in self.edges if nid in (k[0], k[2])]:
            del self.edges[key]

    def merge(self, keep: str, lose: str) -> None:
        """Fold node `lose` into `keep`; edges are redirected, aliases unioned."""
        keep, lose = self.resolve(keep), self.resolve(lose)
        if keep == lose:
            return
        a, b = self.nodes[keep], self.nodes[lose]
        for alias in b.aliases:
            self._alias_index.pop(normalize_name(alias), None)
        for alias in sorted(b.aliases):
            self.add_alias(keep, alias)
        a.is_seed = a.is_seed or b.is_seed
        a.depth = min(a.depth, b.depth)
        a.relevance = max(a.relevance, b.relevance)
        moved = [e for k, e in self.edges.items() if lose in (k[0], k[2])]
        for e in moved:
            del self.edges[e.key]
        del self.nodes[lose]
        self.redirects[lose] = keep
        if lose in self.seeds:
            self.seeds = [keep if s == lose else s for s in self.seeds]
            self.seeds = list(dict.fromkeys(self.seeds))
        for e in moved:
            s = keep if e.subject == lose else e.subject
            o = keep if e.object == lose else e.object
            if s == o:
                continue
            t = replace(e, subject=s, object=o)
            prev = self.edges.get(t.key)
            if prev is None:
                self.edges[t.key] = t
            else:
                self.edges[t.key] = replace(
                    prev,
                    expected_forget=prev.expected_forget or t.expected_forget,
                    relevance=max(prev.relevance, t.relevance),
                )

    def bfs_depths(self) -> dict[str, int]:
        adj = self.adjacency()
        depth = {s: 0 for s in self.seeds if s in self.nodes}
        queue = deque(sorted(depth))
        while queue:
            cur = queue.popleft()
            for nxt in adj.get(cur, ()):
                if nxt not in depth:
                    depth[nxt] = depth[cur] + 1
                    queue.append(nxt)
        return depth

    def recompute_depths(self) -> None:
        depth = self.bfs_depths()
        for nid, node in self.nodes.items():
            if nid in depth:
                node.depth = depth[nid]
            node.is_seed = nid in self.seeds

    def prune_unreachable(self) -> list[str]:
        depth = self.bfs_depths()
        dropped = sorted(nid for nid in self.nodes if nid not in depth)
        for nid in dropped:
            self.remove_node(nid)
        return dropped

    def adjacency(self) -> dict[str, set[str]]:
        adj: dict[str, set[str]] = {nid: set() for nid in self.nodes}
        for s, _, o in self.edges:
            adj.setdefault(s, set()).add(o)
            adj.setdefault(o, set()).add(s)
        return {k: set(sorted(v)) for k, v in adj.items()}

    # -- checks ------------------------------------------------------------
    def problems(self, check_depths: bool = True) -> list[str]:
        errs: list[str] = []
        if not self.seeds:
            errs.append("graph has no seeds")
        for s in self.seeds:
            if s not in self.nodes:
                errs.append(f"seed {s} missing from nodes")
        seen_alias: dict[str, str] = {}
        for nid, node in self.nodes.items():
            if not node.canonical_name:
                errs.append(f"{nid}: empty canonical name")
            norms = [normalize_name(a) for a in node.aliases]
            if normalize_name(node.canonical_name) not in norms:
                errs.append(f"{nid}: canonical name not among aliases")
            if len(set(norms)) != len(norms):
                errs.append(f"{nid}: duplicate aliases after normalization")
            if (node.depth == 0) != node.is_seed or node.is_seed != (nid in self.seeds):
                errs.append(f"{nid}: depth/seed mismatch")
            for n in norms:
                if n in seen_alias and seen_alias[n] != nid:
                    errs.append(f"alias {n!r} shared by {seen_alias[n]} and {nid}")
                seen_alias[n] = nid
        for (s, r, o), e in self.edges.items():
            if s not in self.nodes or o not in self.nodes:
                errs.append(f"edge {e.id} has dangling endpoint")
            if s == o:
                errs.append(f"edge {e.id} is a self-loop")
            if e.key != (s, r, o):
                errs.append(f"edge {e.id} stored under wrong key")
        depth = self.bfs_depths()
        for nid in self.nodes:
            if nid not in depth:
                errs.append(f"{nid} unreachable from seeds")
            elif check_depths and self.nodes[nid].depth != depth[nid]:
                errs.append(f"{nid}: depth {self.nodes[nid].depth} != bfs {depth[nid]}")
        if len(self.nodes) > self.budget.node_cap():
            errs.append(f"{len(self.nodes)} nodes exceed cap {self.budget.node_cap()}")
        if self.calls_used > self.budget.call_cap():
            errs.append(f"{self.calls_used} calls exceed cap {self.budget.call_cap()}")
        return errs

    def validate(self, check_depths: bool = True) -> None:
        errs = self.problems(check_depths)
        if errs:
            raise GraphInvariantError("; ".join(errs))

    # -- serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "seeds": list(self.seeds),
            "nodes": [self.nodes[k].to_dict() for k in sorted(self.nodes)],
            "edges": [e.to_dict() for e in self.sorted_edges()],
            "budget": self.budget.to_dict(),
            "calls_used": self.calls_used,
            "truncated": self.truncated,
            "redirects": dict(sorted(self.redirects.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, indent=1) + "\n"

    def content_hash(self) -> str:
        return short_hash(self.to_json(), 32)

    @classmethod
    def from_dict(cls, data: dict) -> "KnowledgeGraph":
        g = cls(seeds=list(data["seeds"]), budget=ExpansionBudget.from_dict(data["budget"]))
        g.calls_used = int(data.get("calls_used", 0))
        g.truncated = bool(data.get("truncated", False))
        g.redirects = dict(data.get("redirects", {}))
        for nd in data["nodes"]:
            node = EntityNode(
                id=nd["id"],
                canonical_name=nd["canonical_name"],
                aliases=set(nd["aliases"]),
                depth=int(nd["depth"]),
                relevance=int(nd.get("relevance", 10)),
                is_seed=nd["id"] in g.seeds,
                discovery_index=int(nd.get("discovery_index", 0)),
            )
            g.nodes[node.id] = node
            for a in node.aliases:
                g._alias_index[normalize_name(a)] = node.id
        for ed in data["edges"]:
            t = FactTriplet(
                subject=ed["subject"],
                relation=ed["relation"],
                object=ed["object"],
                expected_forget=bool(ed["expected_forget"]),
                provenance=ed.get("provenance", ""),
                relevance=int(ed.get("relevance", 10)),
            )
            g.edges[t.key] = t
        return g

    @classmethod
    def from_json(cls, text: str) -> "KnowledgeGraph":
        return cls.from_dict(json.loads(text))

    def copy(self) -> "KnowledgeGraph":
        return KnowledgeGraph.from_dict(self.to_dict())


def hop_endpoints(edge: FactTriplet, inverted: bool) -> tuple[str, str]:
    """(start, end) of a hop; an inverted hop walks object -> subject."""
    return (edge.object, edge.subject) if inverted else (edge.subject, edge.object)


def chain_anchor(graph: KnowledgeGraph, chain: Iterable[Hop]) -> str:
    first = next(iter(chain))
    return hop_endpoints(graph.edge(first.edge_id), first.inverted)[0]


def paths_from_seed(graph: KnowledgeGraph, target: str, length: int) -> list[Chain]:
    """All simple chains of `length` hops that end at `target` through a forget edge.

    Hops may run against edge direction; the last hop must be an
    expected_forget edge. Output is sorted by edge-id sequence.
    """
    if target not in graph.nodes:
        raise KeyError(target)
    if length < 1:
        raise ValueError("length must be >= 1")
    incident = graph.incident()
    out: list[Chain] = []

    def extend(suffix: list[Hop], start: str, visited: set[str]) -> None:
        if len(suffix) == length:
            out.append(tuple(suffix))
            return
        for e in incident.get(start, ()):
            prev = e.other(start)
            if prev in visited:
                continue
            # hop prev -> start
            hop = Hop(e.id, inverted=(e.subject == start))
            extend([hop] + suffix, prev, visited | {prev})

    for e in incident.get(target, ()):
        if not e.expected_forget:
            continue
        start = e.other(target)
        extend([Hop(e.id, inverted=(e.subject == target))], start, {target, start})
    out.sort(key=lambda ch: [(h.edge_id, h.inverted) for h in ch])
    return out
