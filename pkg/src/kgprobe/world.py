"""Deterministic stand-in for a language model, backed by an explicit fact base.

The oracle understands exactly the prompt shapes this package emits. With a
:class:`ForgettingProfile` attached it behaves like an imperfectly unlearned
model: queries are refused according to a replayable hash of the prompt.
"""
from __future__ import annotations

import hashlib
import json
import random
import re
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .graph import KnowledgeGraph, clean_surface, hop_endpoints, normalize_name, normalize_relation
from .phrasing import parse_chain
from .prompts import DECOMPOSE_MARKER, ELICIT

REFUSAL = "I don't have information about that."


class WorldMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Fact:
    id: str
    subject: str
    relation: str
    object: str
    generic: bool = False

    def sentence(self) -> str:
        return f"{self.subject} {self.relation} {self.object}."


@dataclass
class WorldSpec:
    facts: list[Fact]
    aliases: list[list[str]]
    seeds: list[str]
    ignorance: set[str] = field(default_factory=set)

    def __post_init__(self):
        self._canon: dict[str, str] = {}
        for group in self.aliases:
            for name in group:
                key = normalize_name(name)
                if key in self._canon and self._canon[key] != group[0]:
                    raise WorldMismatch(f"{name!r} appears in two alias groups")
                self._canon[key] = group[0]
        for f in self.facts:
            for name in (f.subject, f.object):
                self._canon.setdefault(normalize_name(name), name)
        for s in self.seeds:
            if normalize_name(s) not in self._canon:
                raise WorldMismatch(f"seed {s!r} not mentioned by any fact")
        ids = [f.id for f in self.facts]
        if len(set(ids)) != len(ids):
            raise WorldMismatch("duplicate fact ids")

    def canonical(self, name: str) -> str | None:
        return self._canon.get(normalize_name(name))

    def aliases_of(self, canonical: str) -> list[str]:
        for group in self.aliases:
            if group[0] == canonical:
                return list(group)
        return [canonical]

    @property
    def entities(self) -> list[str]:
        return sorted(set(self._canon.values()))

    def canonical_fact(self, f: Fact) -> tuple[str, str, str]:
        return (self.canonical(f.subject), normalize_relation(f.relation), self.canonical(f.object))

    def to_dict(self) -> dict:
        return {
            "facts": [
                {"id": f.id, "subject": f.subject, "relation": f.relation, "object": f.object,
                 **({"generic": True} if f.generic else {})}
                for f in self.facts
            ],
            "aliases": [list(g) for g in self.aliases],
            "seeds": list(self.seeds),
            "ignorance": sorted(self.ignorance),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "WorldSpec":
        facts = []
        for i, row in enumerate(data["facts"]):
            if isinstance(row, (list, tuple)):
                row = {"subject": row[0], "relation": row[1], "object": row[2]}
            facts.append(Fact(
                id=str(row.get("id", f"f{i}")),
                subject=clean_surface(row["subject"]),
                relation=normalize_relation(row["relation"]),
                object=clean_surface(row["object"]),
                generic=bool(row.get("generic", False)),
            ))
        return cls(facts=facts, aliases=[list(g) for g in data.get("aliases", [])],
                   seeds=list(data["seeds"]), ignorance=set(data.get("ignorance", [])))

    @classmethod
    def load(cls, path: str | Path) -> "WorldSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class ForgettingProfile:
    forget_entities: list[str] = field(default_factory=list)
    p_block_by_hops: dict[int, float] = field(default_factory=dict)
    collateral_radius: int = 0
    p_collateral: float | dict[int, float] = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        self.p_block_by_hops = {int(k): float(v) for k, v in self.p_block_by_hops.items()}
        if isinstance(self.p_collateral, dict):
            self.p_collateral = {int(k): float(v) for k, v in self.p_collateral.items()}
            probs = list(self.p_collateral.values())
        else:
            self.p_collateral = float(self.p_collateral)
            probs = [self.p_collateral]
        for p in list(self.p_block_by_hops.values()) + probs:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0, 1]")
        if self.collateral_radius < 0:
            raise ValueError("collateral_radius must be non-negative")

    def p_block(self, hops: int) -> float:
        if hops in self.p_block_by_hops:
            return self.p_block_by_hops[hops]
        lower = [h for h in self.p_block_by_hops if h <= hops]
        return self.p_block_by_hops[max(lower)] if lower else 0.0

    def p_collateral_at(self, distance: int) -> float:
        if distance > self.collateral_radius:
            return 0.0
        if isinstance(self.p_collateral, dict):
            return self.p_collateral.get(distance, 0.0)
        return self.p_collateral

    def draw(self, key: str) -> float:
        digest = hashlib.sha256(f"{self.rng_seed}\x00{key}".encode("utf-8")).hexdigest()
        return int(digest[:16], 16) / float(1 << 64)

    def to_dict(self) -> dict:
        return {
            "forget_entities": list(self.forget_entities),
            "p_block_by_hops": {str(k): v for k, v in sorted(self.p_block_by_hops.items())},
            "collateral_radius": self.collateral_radius,
            "p_collateral": ({str(k): v for k, v in sorted(self.p_collateral.items())}
                             if isinstance(self.p_collateral, dict) else self.p_collateral),
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ForgettingProfile":
        return cls(
            forget_entities=list(data.get("forget_entities", [])),
            p_block_by_hops=dict(data.get("p_block_by_hops", {})),
            collateral_radius=int(data.get("collateral_radius", 0)),
            p_collateral=data.get("p_collateral", 0.0),
            rng_seed=int(data.get("rng_seed", 0)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "ForgettingProfile":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class Resolution:
    answers: list[str]
    facts: set[str]
    entities: set[str]
    hops: int


_ELICIT_HEAD = re.compile(r"^Generate a list of diverse questions regarding the entity '(.+?)'\. Each")
_ANSWER_HEAD = re.compile(r"^Answer each of the following questions about '(.+?)' from your own knowledge")
_RELEVANCE = re.compile(r'Query: "(.*)"\s*\nTriple: \("(.*)", "(.*)", "(.*)"\)')
_ALIAS = re.compile(r'^Is "(.+)" the same as "(.+)"\?$')
_JUDGE = re.compile(r"^Question: (.*)\nReference answer\(s\): (.*)\nModel answer: (.*)\nDoes", re.S)
_REL_EQUIV = re.compile(r'^Do the relations "(.+)" and "(.+)" describe the same kind of fact')
_CLOZE = re.compile(r"^(.*?)\s*_{2,}")
_GLUE = {"in", "of", "by", "to", "at", "on", "for", "with", "the", "a", "is", "was"}


class SyntheticModel:
    def __init__(self, world: WorldSpec, profile: ForgettingProfile | None = None):
        self.world = world
        self.profile = profile
        self.relations = sorted({normalize_relation(f.relation) for f in world.facts})
        self._by_sentence = {normalize_name(f.sentence()): f for f in world.facts}
        self._out: dict[tuple[str, str], list[Fact]] = {}
        self._in: dict[tuple[str, str], list[Fact]] = {}
        self._touching: dict[str, list[Fact]] = {}
        self._canon_fact: dict[str, tuple[str, str, str]] = {}
        for f in world.facts:
            s, r, o = world.canonical_fact(f)
            self._canon_fact[f.id] = (s, r, o)
            self._out.setdefault((s, r), []).append(f)
            self._in.setdefault((o, r), []).append(f)
            self._touching.setdefault(s, []).append(f)
            if o != s:
                self._touching.setdefault(o, []).append(f)
        forget = profile.forget_entities if profile and profile.forget_entities else world.seeds
        self.forget = {world.canonical(e) or e for e in forget}
        self._distance = self._forget_distances()

    @classmethod
    def from_files(cls, world_path, profile_path=None) -> "SyntheticModel":
        world = WorldSpec.load(world_path)
        profile = ForgettingProfile.load(profile_path) if profile_path else None
        return cls(world, profile)

    def without_profile(self) -> "SyntheticModel":
        return SyntheticModel(self.world, None)

    def _forget_distances(self) -> dict[str, int]:
        dist = {e: 0 for e in self.forget}
        queue = deque(sorted(self.forget))
        while queue:
            cur = queue.popleft()
            for f in self._touching.get(cur, ()):
                s, _, o = self._canon_fact[f.id]
                nxt = o if s == cur else s
                if nxt not in dist:
                    dist[nxt] = dist[cur] + 1
                    queue.append(nxt)
        return dist

    def distance_to_forget(self, entity: str) -> int | None:
        return self._distance.get(entity)

    def is_entity(self, name: str) -> bool:
        return self.world.canonical(name) is not None

    # -- structural resolution -----------------------------------------------
    def resolve(self, anchor: str, hops: Sequence[tuple[str, bool]]) -> Resolution:
        """Follow `hops` from `anchor` over known (non-ignored) facts."""
        start = self.world.canonical(anchor)
        if start is None:
            return Resolution([], set(), set(), len(hops))
        paths: list[tuple[str, tuple[str, ...], tuple[str, ...]]] = [(start, (), (start,))]
        for relation, inverted in hops:
            r = normalize_relation(relation)
            nxt = []
            for cur, used, seen in paths:
                table = self._in if inverted else self._out
                for f in table.get((cur, r), ()):
                    if f.id in self.world.ignorance:
                        continue
                    s, _, o = self._canon_fact[f.id]
                    end = s if inverted else o
                    nxt.append((end, used + (f.id,), seen + (end,)))
            paths = nxt
            if not paths:
                break
        answers = sorted({p[0] for p in paths})
        facts = {fid for p in paths for fid in p[1]}
        ents = {e for p in paths for e in p[2]}
        return Resolution(answers, facts, ents, len(hops))

    def blocked(self, key: str, res: Resolution) -> bool:
        if self.profile is None:
            return False
        p = self.block_probability(res)
        return p > 0.0 and self.profile.draw(key) < p

    def block_probability(self, res: Resolution) -> float:
        prof = self.profile
        if prof is None:
            return 0.0
        touches = any(
            self._canon_fact[fid][0] in self.forget or self._canon_fact[fid][2] in self.forget
            for fid in res.facts
        )
        if touches:
            return prof.p_block(res.hops)
        dists = [self._distance[e] for e in res.entities if e in self._distance]
        if not dists:
            return 0.0
        return prof.p_collateral_at(min(dists))

    def read_question(self, question: str) -> Resolution | None:
        for anchor, hops in parse_chain(question, self.relations, self.is_entity):
            res = self.resolve(anchor, hops)
            if res.answers:
                return res
        return None

    # -- prompt dispatch -----------------------------------------------------
    def answer(self, prompt: str) -> str:
        if m := _ELICIT_HEAD.match(prompt):
            return self._questions(m.group(1))
        if m := _ANSWER_HEAD.match(prompt):
            return self._facts_about(m.group(1))
        if prompt.startswith("In a knowledge graph, entities represent"):
            return self._extract(prompt)
        if prompt.startswith("Rate the relevance of the following triple"):
            return self._relevance(prompt)
        if m := _ALIAS.match(prompt.strip()):
            a, b = self.world.canonical(m.group(1)), self.world.canonical(m.group(2))
            return "Yes" if a is not None and a == b else "No"
        if m := _JUDGE.match(prompt):
            return self._judge(m.group(2), m.group(3))
        if prompt.startswith("Identify the key entity and the relation"):
            return self._coverage_key(prompt.rsplit("Question: ", 1)[-1].strip())
        if m := _REL_EQUIV.match(prompt):
            same = normalize_relation(m.group(1)) == normalize_relation(m.group(2))
            return "Yes" if same else "No"
        if prompt.startswith("Rewrite the following question"):
            return prompt.rsplit("Question: ", 1)[-1].strip()
        if prompt.startswith(DECOMPOSE_MARKER):
            inner = prompt.rsplit("\nQuestion: ", 1)[-1].strip()
            return self._answer_question(inner, key=prompt)
        return self._answer_question(prompt.strip(), key=prompt)

    def _answer_question(self, question: str, key: str) -> str:
        res = self.read_question(question)
        if res is None or self.blocked(key, res):
            return REFUSAL
        return "; ".join(res.answers)

    def _questions(self, entity: str) -> str:
        if self.world.canonical(entity) is None:
            return REFUSAL
        lines = ELICIT.render(entity=entity).splitlines()[1:11]
        return "\n".join(line.split(": ", 1)[0].split(". ", 1)[0] + ". " + line.split(": ", 1)[1]
                         for line in lines)

    def _facts_about(self, entity: str) -> str:
        canon = self.world.canonical(entity)
        if canon is None:
            return REFUSAL
        facts = self._touching.get(canon, [])
        return "\n".join(f.sentence() for f in facts) if facts else REFUSAL

    def _extract(self, prompt: str) -> str:
        start = prompt.find('Text: "')
        text = prompt[start + 7:].rstrip()
        if text.endswith('"'):
            text = text[:-1]
        out = []
        for line in text.splitlines():
            f = self._by_sentence.get(normalize_name(line))
            if f is not None:
                out.append(f"({f.subject}, {f.relation}, {f.object})")
            elif (t := self._spot(line)) is not None:
                out.append("({}, {}, {})".format(*t))
        return "\n".join(out) if out else "No atomic facts found."

    def _spot(self, sentence: str) -> tuple[str, str, str] | None:
        # free text "<entity> <words> <entity>": longest known name at each end
        words = sentence.strip().rstrip(".").split()
        for i in range(len(words) - 1, 0, -1):
            head = " ".join(words[:i])
            if not self.is_entity(head):
                continue
            for j in range(i + 1, len(words)):
                tail = " ".join(words[j:])
                if self.is_entity(tail):
                    return head, " ".join(words[i:j]), tail
        return None

    def _relevance(self, prompt: str) -> str:
        m = _RELEVANCE.search(prompt)
        if not m:
            return REFUSAL
        seed = self.world.canonical(m.group(1))
        a, r, b = self.world.canonical(m.group(2)), normalize_relation(m.group(3)), self.world.canonical(m.group(4))
        for f in self._out.get((a, r), []) + self._in.get((a, r), []):
            s, _, o = self._canon_fact[f.id]
            if {s, o} != {a, b}:
                continue
            if f.generic:
                return "2"
            if seed is not None and seed in (s, o):
                return "10"
            return "7"
        return "0"

    def _judge(self, expected: str, given: str) -> str:
        from .scorer import string_match

        refs = [e for e in expected.split(" | ") if e.strip()]
        return "Yes" if refs and string_match(refs, given) else "No"

    def _coverage_key(self, question: str) -> str:
        for anchor, hops in parse_chain(question, self.relations, self.is_entity, max_hops=1):
            return f"{anchor} | {hops[0][0]}"
        m = _CLOZE.match(question)
        if m:
            head = m.group(1).strip()
            words = head.split()
            for cut in range(len(words), 0, -1):
                name = " ".join(words[:cut])
                if self.is_entity(name):
                    rest = words[cut:]
                    if rest and rest[0].lower() in {"was", "is", "were", "are", "has", "had"}:
                        rest = rest[1:]
                    if rest:
                        return f"{name} | {' '.join(rest)}"
        return self._loose_key(question)

    def _loose_key(self, question: str) -> str:
        # free phrasing: a known entity plus exactly one of its relations whose content words occur
        words = re.findall(r"[\w'-]+", question)
        lowered = {w.lower() for w in words}
        for size in range(min(6, len(words)), 0, -1):
            for i in range(len(words) - size + 1):
                canon = self.world.canonical(" ".join(words[i:i + size]))
                if canon is None:
                    continue
                rels = {normalize_relation(f.relation) for f in self._touching.get(canon, ())}
                hits = [r for r in sorted(rels)
                        if (content := [t for t in r.split() if t not in _GLUE]) and set(content) <= lowered]
                if len(hits) == 1:
                    return f"{' '.join(words[i:i + size])} | {hits[0]}"
                return "NONE"
        return "NONE"


def answer(world: WorldSpec, profile: ForgettingProfile | None, prompt: str) -> str:
    return SyntheticModel(world, profile).answer(prompt)


def chain_of_probe(graph: KnowledgeGraph, probe) -> tuple[str, list[tuple[str, bool]]]:
    """Anchor name and (relation, inverted) hops of a probe, read off the graph."""
    index = graph.edge_index()
    hops = []
    anchor = None
    for step in probe.path:
        e = index[step.edge_id]
        start, _ = hop_endpoints(e, step.inverted)
        if anchor is None:
            anchor = graph.nodes[start].canonical_name
        hops.append((e.relation, step.inverted))
    return anchor, hops


def expected_outcomes(model: SyntheticModel, probes: Iterable, graph: KnowledgeGraph) -> dict[str, bool]:
    """Per-probe correctness replayed from probe paths, without rendering or grading text."""
    out: dict[str, bool] = {}
    for p in probes:
        anchor, hops = chain_of_probe(graph, p)
        if model.world.canonical(anchor) is None:
            raise WorldMismatch(f"probe {p.id}: anchor {anchor!r} unknown to world")
        res = model.resolve(anchor, hops)
        if not res.answers:
            raise WorldMismatch(f"probe {p.id}: path does not resolve in world")
        out[p.id] = not model.blocked(p.question, res)
    return out


def expected_scores(world: WorldSpec, profile: ForgettingProfile | None, probes: Iterable,
                    graph: KnowledgeGraph, manifest: dict | None = None, label: str = "expected"):
    from .scorer import report_from_counts

    probes = list(probes)
    if manifest is not None:
        wanted = {pid for ids in manifest["kinds"].values() for pid in ids}
        probes = [p for p in probes if p.id in wanted]
        if len(probes) != len(wanted):
            raise WorldMismatch("manifest references probes that were not supplied")
    model = SyntheticModel(world, profile)
    outcomes = expected_outcomes(model, probes, graph)
    counts: dict[str, list[int]] = {}
    for p in probes:
        c = counts.setdefault(p.kind, [0, 0])
        c[0] += int(outcomes[p.id])
        c[1] += 1
    return report_from_counts(label, counts)


# -- random worlds -----------------------------------------------------------

_SYL_A = ["al", "bren", "cor", "dav", "el", "fen", "gar", "hal", "is", "jor", "kel", "lor",
          "mar", "nor", "or", "pel", "quen", "ros", "sar", "tor", "ul", "val", "wen", "yar", "zel"]
_SYL_B = ["a", "e", "i", "o", "u", "ia", "eo", "ai"]
_SYL_C = ["brin", "dor", "lith", "mont", "nas", "rick", "sen", "tavs", "vane", "wick", "zar",
          "gard", "holm", "kesh", "quist", "rond"]
RANDOM_RELATIONS = ["born in", "occupation", "spouse", "protagonist", "written by", "mentor",
                    "sibling", "employer", "genre", "located in", "member of", "founded",
                    "directed", "rival", "student of", "award"]


def _word(rng: random.Random) -> str:
    return (rng.choice(_SYL_A) + rng.choice(_SYL_B) + rng.choice(_SYL_C)).capitalize()


def random_world(seed: int, n_facts: int = 40, n_aliases: int = 3, n_generic: int = 0,
                 ignorance: float = 0.0, n_seeds: int = 1,
                 relations: Sequence[str] = RANDOM_RELATIONS) -> WorldSpec:
    """A connected random world with planted alias pairs and an optional generic cluster."""
    rng = random.Random(seed)
    first_pool = [_word(rng) for _ in range(12)]
    used_tokens: set[str] = set()
    names: list[str] = []

    def fresh_name() -> str:
        while True:
            last = _word(rng)
            if last in used_tokens or last in first_pool:
                continue
            used_tokens.add(last)
            return f"{rng.choice(first_pool)} {last}"

    n_entities = max(n_seeds + 2, int(n_facts * 0.7))
    names = [fresh_name() for _ in range(n_entities)]
    seeds = names[:n_seeds]
    triples: list[tuple[str, str, str]] = []
    keys: set[tuple[str, str]] = set()

    def add(s: str, r: str, o: str) -> bool:
        pair = tuple(sorted((s, o)))
        if s == o or pair in keys:
            return False
        keys.add(pair)
        triples.append((s, r, o))
        return True

    # spanning structure: every entity hangs off an earlier one
    for i in range(n_seeds, n_entities):
        if i < n_seeds * 4:
            parent = seeds[i % n_seeds]
        else:
            parent = names[rng.randrange(0, i)]
        r = rng.choice(relations)
        if rng.random() < 0.5:
            add(parent, r, names[i])
        else:
            add(names[i], r, parent)
    for extra in range(1, n_seeds):
        add(seeds[extra - 1], rng.choice(relations), seeds[extra])
    attempts = 0
    while len(triples) < n_facts and attempts < 10 * n_facts:
        attempts += 1
        a, b = rng.sample(names, 2)
        add(a, rng.choice(relations), b)

    alias_groups: list[list[str]] = []
    candidates = [n for n in names if n not in seeds]
    rng.shuffle(candidates)
    for canon in candidates[:n_aliases]:
        first, last = canon.split(" ", 1)
        middle = _word(rng)
        while middle in used_tokens:
            middle = _word(rng)
        used_tokens.add(middle)
        alias = f"{first} {middle} {last}"
        alias_groups.append([canon, alias])
        mentions = [i for i, t in enumerate(triples) if canon in (t[0], t[2])]
        if len(mentions) >= 2:
            i = mentions[-1]
            s, r, o = triples[i]
            triples[i] = (alias if s == canon else s, r, alias if o == canon else o)

    facts = [Fact(f"f{i}", s, r, o) for i, (s, r, o) in enumerate(triples)]
    if n_generic:
        hub = "books"
        facts.append(Fact(f"f{len(facts)}", seeds[0], "related to", hub, generic=True))
        for j in range(n_generic):
            member = fresh_name()
            facts.append(Fact(f"f{len(facts)}", hub, "includes", member, generic=True))
    ignored: set[str] = set()
    if ignorance > 0:
        pool = [f.id for f in facts if not f.generic]
        ignored = set(rng.sample(pool, int(round(ignorance * len(pool)))))
    return WorldSpec(facts=facts, aliases=alias_groups, seeds=seeds, ignorance=ignored)


def reachable_facts(world: WorldSpec, d_max: int, include_generic: bool = False) -> set[tuple[str, str, str]]:
    """Canonical facts with an endpoint within `d_max` hops of a seed (brute-force BFS)."""
    adj: dict[str, set[str]] = {}
    for f in world.facts:
        if f.generic and not include_generic:
            continue
        s, _, o = world.canonical_fact(f)
        adj.setdefault(s, set()).add(o)
        adj.setdefault(o, set()).add(s)
    depth = {world.canonical(s): 0 for s in world.seeds}
    queue = deque(sorted(depth))
    while queue:
        cur = queue.popleft()
        for nxt in sorted(adj.get(cur, ())):
            if nxt not in depth:
                depth[nxt] = depth[cur] + 1
                queue.append(nxt)
    out = set()
    for f in world.facts:
        if f.generic and not include_generic:
            continue
        s, r, o = world.canonical_fact(f)
        if min(depth.get(s, 1 << 30), depth.get(o, 1 << 30)) <= d_max:
            out.add((s, r, o))
    return out


def world_benchmark(world: WorldSpec, d_max: int, source: str = "synthetic") -> list:
    """One closed question per fact reachable within `d_max`, accepting every alias of the answer."""
    from .coverage import BenchmarkProbe
    from .phrasing import render_chain

    out = []
    for s, r, o in sorted(reachable_facts(world, d_max)):
        out.append(BenchmarkProbe(source, render_chain(s, [(r, False)]), tuple(world.aliases_of(o)), False))
    return out
