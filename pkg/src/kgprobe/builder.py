"""Grow an entity-centric knowledge graph out of a model's own answers.

Each expanded entity costs an elicitation round (question list, then answers)
plus one extraction call. Candidate triplets are rated for relevance against
every seed, candidate entities are alias-checked against the graph, and the
best-rated ones are admitted one BFS level at a time under the level width.
"""
from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

from rapidfuzz.distance import JaroWinkler

from .gateway import BudgetExhausted, CallBudget, ModelEndpoint, TransportError
from .graph import (
    ExpansionBudget,
    FactTriplet,
    KnowledgeGraph,
    clean_surface,
    normalize_name,
    normalize_relation,
    short_hash,
)
from .prompts import ALIAS, ANSWER, ELICIT, EXTRACT_TRIPLETS, RELEVANCE, parse_relevance, parse_yes_no

log = logging.getLogger(__name__)

DEFAULT_FORGET_THRESHOLD = 9
ALIAS_SIMILARITY = 0.85
_STOPWORDS = {"the", "of", "a", "an", "and", "in", "on", "for", "to", "at", "by", "de", "la", "von"}


class SeedUnknownError(RuntimeError):
    def __init__(self, seeds: Sequence[str]):
        super().__init__("model gave no facts for seed(s): " + ", ".join(seeds))
        self.seeds = list(seeds)


@dataclass(frozen=True)
class TripletDraft:
    subject: str
    relation: str
    object: str
    provenance: str = ""

    @property
    def key(self) -> tuple[str, str, str]:
        return (normalize_name(self.subject), self.relation, normalize_name(self.object))


@dataclass
class BuildStats:
    expanded: int = 0
    drafts: int = 0
    unparseable_relevance: int = 0
    alias_queries: int = 0
    alias_merges: int = 0
    dropped_irrelevant: int = 0
    transport_failures: int = 0
    failed_seeds: list[str] = field(default_factory=list)


# -- elicitation and extraction --------------------------------------------------

def elicit(endpoint: ModelEndpoint, entity: str) -> str:
    """Ask the model for questions about `entity`, then for its answers to them."""
    questions = endpoint.complete(ELICIT.render(entity=entity), call_class="elicit")
    return endpoint.complete(ANSWER.render(entity=entity, questions=questions), call_class="elicit")


_LEAD = re.compile(r"^\s*(?:[-*•]+|\d+[.)]|\(\d+\))\s*")
_QUOTED = re.compile(r"""["“']([^"”']+)["”']""")


def parse_triplet_line(line: str) -> tuple[str, str, str] | None:
    text = _LEAD.sub("", line.strip())
    if not text:
        return None
    if "(" in text and ")" in text:
        body = text[text.index("(") + 1: text.rindex(")")]
    elif text.count("|") == 2:
        body = text.replace("|", ",")
    else:
        return None
    quoted = _QUOTED.findall(body)
    if len(quoted) == 3:
        parts = quoted
    else:
        parts = [p for p in (x.strip() for x in body.split(",")) if p]
        if len(parts) < 3:
            return None
        parts = [parts[0], parts[1], ", ".join(parts[2:])]
    s, r, o = clean_surface(parts[0]), normalize_relation(parts[1]), clean_surface(parts[2])
    if not s or not r or not o or normalize_name(s) == normalize_name(o):
        return None
    return s, r, o


def parse_triplets(raw: str, provenance: str = "") -> list[TripletDraft]:
    out: list[TripletDraft] = []
    seen = set()
    for line in raw.splitlines():
        t = parse_triplet_line(line)
        if t is None:
            continue
        d = TripletDraft(*t, provenance=provenance)
        if d.key not in seen:
            seen.add(d.key)
            out.append(d)
    return out


def extract_triplets(endpoint: ModelEndpoint, text: str) -> list[TripletDraft]:
    if not text.strip():
        return []
    raw = endpoint.complete(EXTRACT_TRIPLETS.render(text=text), call_class="extract")
    drafts = parse_triplets(raw, provenance=short_hash(text))
    if not drafts:
        log.warning("extraction produced no parseable triplets")
    return drafts


# -- relevance and aliases ----------------------------------------------------------

def relevance_prompt(seed: str, subject: str, relation: str, obj: str) -> str:
    return RELEVANCE.render(**{"Seed Entity": seed, "entity": subject, "relation": relation, "obj": obj})


def rate(endpoint: ModelEndpoint, seeds: Sequence[str], draft: TripletDraft,
         stats: BuildStats | None = None) -> int:
    """Highest relevance of the triple over all seeds; unparseable replies count as 0."""
    best = 0
    for seed in seeds:
        raw = endpoint.complete(relevance_prompt(seed, draft.subject, draft.relation, draft.object),
                                call_class="relevance")
        score = parse_relevance(raw)
        if score is None:
            if stats is not None:
                stats.unparseable_relevance += 1
            score = 0
        best = max(best, score)
    return best


def _tokens(name: str) -> set[str]:
    return {t for t in re.findall(r"\w+", normalize_name(name)) if t not in _STOPWORDS}


def alias_candidate(a: str, b: str) -> bool:
    """Cheap pre-check deciding whether two names are worth an alias query."""
    na, nb = normalize_name(a), normalize_name(b)
    if na == nb:
        return True
    if _tokens(a) & _tokens(b):
        return True
    return JaroWinkler.similarity(na, nb) >= ALIAS_SIMILARITY


def same_entity(endpoint: ModelEndpoint, name: str, visited: str) -> bool:
    raw = endpoint.complete(ALIAS.render(node=name, visited_node=visited), call_class="alias")
    return parse_yes_no(raw) is True


def find_alias(endpoint: ModelEndpoint, graph: KnowledgeGraph, name: str,
               stats: BuildStats | None = None, exclude: set[str] | None = None) -> str | None:
    """Id of an existing node the model confirms is `name`, checked in discovery order."""
    for node in sorted(graph.nodes.values(), key=lambda n: n.discovery_index):
        if exclude and node.id in exclude:
            continue
        if not any(alias_candidate(name, a) for a in sorted(node.aliases)):
            continue
        if stats is not None:
            stats.alias_queries += 1
        if same_entity(endpoint, name, node.canonical_name):
            return node.id
    return None


def resolve_aliases(endpoint: ModelEndpoint, graph: KnowledgeGraph,
                    stats: BuildStats | None = None) -> KnowledgeGraph:
    """Merge node pairs the model confirms are one entity; the earlier-discovered node wins."""
    g = graph.copy()
    order = sorted(g.nodes.values(), key=lambda n: n.discovery_index)
    for i, later in enumerate(order):
        if later.id not in g.nodes:
            continue
        for earlier in order[:i]:
            if earlier.id not in g.nodes:
                continue
            if not any(alias_candidate(a, b) for a in sorted(later.aliases) for b in sorted(earlier.aliases)):
                continue
            if stats is not None:
                stats.alias_queries += 1
            if same_entity(endpoint, later.canonical_name, earlier.canonical_name):
                g.merge(earlier.id, later.id)
                if stats is not None:
                    stats.alias_merges += 1
                break
    g.recompute_depths()
    return g


def _drop_isolated(g: KnowledgeGraph) -> None:
    touched = {k[0] for k in g.edges} | {k[2] for k in g.edges}
    for nid in sorted(g.nodes):
        if nid not in touched and nid not in g.seeds:
            g.remove_node(nid)
    g.prune_unreachable()
    g.recompute_depths()


def apply_threshold(graph: KnowledgeGraph, threshold: int,
                    forget_threshold: int = DEFAULT_FORGET_THRESHOLD) -> KnowledgeGraph:
    """Filter on stored edge relevance without new model calls."""
    g = graph.copy()
    for key, e in list(g.edges.items()):
        if e.relevance < threshold:
            del g.edges[key]
        else:
            g.edges[key] = _with_relevance(e, e.relevance, forget_threshold)
    _drop_isolated(g)
    return g


def _with_relevance(e: FactTriplet, score: int, forget_threshold: int) -> FactTriplet:
    return FactTriplet(e.subject, e.relation, e.object, score >= forget_threshold, e.provenance, score)


def filter_relevance(endpoint: ModelEndpoint, graph: KnowledgeGraph, threshold: int | None = None,
                     forget_threshold: int = DEFAULT_FORGET_THRESHOLD,
                     stats: BuildStats | None = None) -> KnowledgeGraph:
    """Re-rate every edge against the seeds and drop edges and nodes that fall below threshold."""
    threshold = graph.budget.relevance_threshold if threshold is None else threshold
    g = graph.copy()
    seeds = [g.name(s) for s in g.seeds]
    for key, e in list(g.edges.items()):
        draft = TripletDraft(g.name(e.subject), e.relation, g.name(e.object))
        score = rate(endpoint, seeds, draft, stats)
        g.edges[key] = _with_relevance(e, score, forget_threshold)
    return apply_threshold(g, threshold, forget_threshold)


# -- BFS expansion --------------------------------------------------------------------

@dataclass
class _Rated:
    draft: TripletDraft
    relevance: int


class _Expansion:
    def __init__(self, endpoint, seeds, budget, extractor, judge, forget_threshold, on_step, stats):
        self.ledger = CallBudget(budget.call_cap())
        self.target = endpoint.limited(self.ledger)
        self.extractor = (extractor or endpoint).limited(self.ledger)
        self.judge = (judge or endpoint).limited(self.ledger)
        self.workers = max(1, endpoint.max_in_flight)
        self.budget = budget
        self.forget_threshold = forget_threshold
        self.on_step = on_step
        self.stats = stats
        self.g = KnowledgeGraph(seeds=[], budget=budget)
        self.counter = 0
        self.first_seen: dict[str, int] = {}
        self.held: list[_Rated] = []
        self.expanded: set[str] = set()
        self.seed_names = [clean_surface(s) for s in seeds]
        for name in self.seed_names:
            node = self.g.add_node(name, 0, discovery_index=self._index(name), is_seed=True)
            if node.id not in self.g.seeds:
                self.g.seeds.append(node.id)

    def _index(self, name: str) -> int:
        key = normalize_name(name)
        if key not in self.first_seen:
            self.first_seen[key] = self.counter
            self.counter += 1
        return self.first_seen[key]

    def _map(self, fn, items):
        if self.workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]

    def _expand_one(self, name: str):
        try:
            text = elicit(self.target, name)
            return extract_triplets(self.extractor, text)
        except (BudgetExhausted, TransportError) as exc:
            return exc

    def _rate_one(self, draft: TripletDraft):
        try:
            return rate(self.judge, self.seed_names, draft, self.stats)
        except (BudgetExhausted, TransportError) as exc:
            return exc

    def _misses(self, prompts: list[str]) -> int:
        ep = self.judge
        return sum(1 for p in dict.fromkeys(prompts) if ep.cache.get(p, ep.model_id) is None)

    def run(self) -> KnowledgeGraph:
        g, budget = self.g, self.budget
        for depth in range(budget.d_max + 1):
            frontier = sorted((n for n in g.nodes.values() if n.depth == depth and n.id not in self.expanded),
                              key=lambda n: n.discovery_index)
            if not frontier:
                break
            afford = max(0, self.ledger.remaining // budget.k)
            batch = frontier[:afford]
            if len(batch) < len(frontier):
                g.truncated = True
            names = [n.canonical_name for n in batch]
            results = self._map(self._expand_one, names)

            drafts: list[TripletDraft] = []
            seen = set()
            for node, res in zip(batch, results):
                self.expanded.add(node.id)
                if isinstance(res, Exception):
                    g.truncated = True
                    if isinstance(res, TransportError):
                        self.stats.transport_failures += 1
                    continue
                self.stats.expanded += 1
                if node.is_seed and not res:
                    self.stats.failed_seeds.append(node.canonical_name)
                for d in res:
                    if d.key not in seen:
                        seen.add(d.key)
                        drafts.append(d)
                        self._index(d.subject)
                        self._index(d.object)
            self.stats.drafts += len(drafts)
            if depth == 0:
                self._drop_failed_seeds()

            # rate every draft, issuing only as many uncached calls as the ledger allows
            kept = self._gate_rating(drafts)
            rated = self._map(self._rate_one, kept)
            fresh: list[_Rated] = []
            for d, score in zip(kept, rated):
                if isinstance(score, Exception):
                    g.truncated = True
                    continue
                if score < budget.relevance_threshold:
                    self.stats.dropped_irrelevant += 1
                    continue
                fresh.append(_Rated(d, score))
            self.held.extend(fresh)
            self._attach()
            self._admit(depth)
            self._attach()
            g.calls_used = self.ledger.used
            log.info("event=frontier_step depth=%d nodes=%d calls_used=%d a_total=%.1f",
                     depth, len(g.nodes), g.calls_used, budget.a_total())
            if self.on_step is not None:
                self.on_step(g, depth)
        _drop_isolated(g)
        g.calls_used = self.ledger.used
        return g

    def _gate_rating(self, drafts: list[TripletDraft]) -> list[TripletDraft]:
        remaining = self.ledger.remaining
        kept, prompts = [], []
        for d in drafts:
            mine = [relevance_prompt(s, d.subject, d.relation, d.object) for s in self.seed_names]
            if self._misses(prompts + mine) > remaining:
                self.g.truncated = True
                break
            prompts.extend(mine)
            kept.append(d)
        return kept

    def _drop_failed_seeds(self) -> None:
        failed = self.stats.failed_seeds
        if not failed:
            return
        if len(failed) == len(self.g.seeds):
            raise SeedUnknownError(failed)
        log.warning("dropping seed(s) the model knows nothing about: %s", ", ".join(failed))
        for name in failed:
            node = self.g.find(name)
            if node is not None:
                self.g.seeds.remove(node.id)
                self.g.remove_node(node.id)
        self.seed_names = [self.g.name(s) for s in self.g.seeds]

    def _attach(self) -> None:
        still = []
        for item in self.held:
            d = item.draft
            s, o = self.g.find(d.subject), self.g.find(d.object)
            if s is None or o is None:
                still.append(item)
                continue
            self.g.add_edge(FactTriplet(s.id, d.relation, o.id,
                                        item.relevance >= self.forget_threshold,
                                        d.provenance, item.relevance))
        self.held = still

    def _resolve_orphans(self) -> None:
        # a draft with no known endpoint may still name a graph node by another surface form
        g = self.g
        names: dict[str, str] = {}
        for item in self.held:
            d = item.draft
            if g.find(d.subject) is None and g.find(d.object) is None:
                for name in (d.subject, d.object):
                    names.setdefault(normalize_name(name), name)
        for key in sorted(names, key=lambda k: self.first_seen[k]):
            name = names[key]
            if g.find(name) is not None:
                continue
            try:
                owner = find_alias(self.judge, g, name, self.stats)
            except (BudgetExhausted, TransportError):
                g.truncated = True
                return
            if owner is not None:
                g.add_alias(owner, name)
                self.stats.alias_merges += 1
        self._attach()

    def _admit(self, depth: int) -> None:
        self._resolve_orphans()
        g = self.g
        best: dict[str, tuple[int, str]] = {}
        for item in self.held:
            d = item.draft
            s, o = g.find(d.subject), g.find(d.object)
            for name, other in ((d.subject, o), (d.object, s)):
                if other is None or g.find(name) is not None:
                    continue
                key = normalize_name(name)
                if key not in best:
                    best[key] = (item.relevance, name)
                elif item.relevance > best[key][0]:
                    best[key] = (item.relevance, best[key][1])
        ranked = sorted(best.items(), key=lambda kv: (-kv[1][0], self.first_seen[kv[0]]))
        width = self.budget.level_width(depth)
        admitted = 0
        for key, (score, name) in ranked:
            if admitted >= width or len(g.nodes) >= self.budget.node_cap():
                break
            if g.find(name) is not None:
                continue
            try:
                owner = find_alias(self.judge, g, name, self.stats)
            except (BudgetExhausted, TransportError):
                g.truncated = True
                break
            if owner is not None:
                g.add_alias(owner, name)
                self.stats.alias_merges += 1
                continue
            g.add_node(name, depth + 1, discovery_index=self.first_seen[key], relevance=score)
            admitted += 1


def expand(endpoint: ModelEndpoint, seeds: Sequence[str], budget: ExpansionBudget, *,
           extractor: ModelEndpoint | None = None, judge: ModelEndpoint | None = None,
           forget_threshold: int = DEFAULT_FORGET_THRESHOLD,
           on_step: Callable[[KnowledgeGraph, int], None] | None = None,
           stats: BuildStats | None = None) -> KnowledgeGraph:
    """Breadth-first graph growth under the node and call caps of `budget`.

    Budget exhaustion or persistent transport failure never raises: the
    partial graph comes back with ``truncated`` set.
    """
    if not seeds:
        raise ValueError("at least one seed entity is required")
    run = _Expansion(endpoint, seeds, budget, extractor, judge, forget_threshold, on_step,
                     stats if stats is not None else BuildStats())
    return run.run()
