"""Deterministic question templates for relation chains, and their inverse parser.

A chain starts at a named anchor entity and walks hops ``(relation, inverted)``.
Inner hops become noun phrases ("the book whose protagonist is X"), the
outermost hop becomes the question ("Who wrote ...?").
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Sequence

from .graph import normalize_relation

PLAIN, TYPED, QUOTED = "plain", "typed", "quoted"


@dataclass(frozen=True)
class Slotted:
    """Template with exactly one ``{x}`` slot and an anchor rendering style."""

    prefix: str
    suffix: str
    style: str = PLAIN

    @classmethod
    def of(cls, text: str) -> "Slotted":
        for marker, style in (("{x:typed}", TYPED), ("{x:quoted}", QUOTED), ("{x}", PLAIN)):
            if marker in text:
                pre, post = text.split(marker, 1)
                return cls(pre, post, style)
        raise ValueError(f"template without slot: {text!r}")

    def fill(self, inner: str) -> str:
        return f"{self.prefix}{inner}{self.suffix}"

    def match(self, text: str) -> str | None:
        if len(text) > len(self.prefix) + len(self.suffix) and text.startswith(self.prefix) \
                and text.endswith(self.suffix):
            return text[len(self.prefix): len(text) - len(self.suffix)]
        return None


@dataclass(frozen=True)
class RelationPhrasing:
    fwd_q: Slotted
    fwd_np: Slotted
    inv_q: Slotted
    inv_np: Slotted
    noun: str = "entity"

    @classmethod
    def make(cls, fwd_q, fwd_np, inv_q, inv_np, noun="entity") -> "RelationPhrasing":
        return cls(Slotted.of(fwd_q), Slotted.of(fwd_np), Slotted.of(inv_q), Slotted.of(inv_np), noun)


LEXICON: dict[str, RelationPhrasing] = {
    "written by": RelationPhrasing.make(
        "Who wrote {x:typed}?", "the author of {x}",
        "Which book was written by {x}?", "the book written by {x}", noun="book"),
    "protagonist": RelationPhrasing.make(
        "Who is the protagonist of {x:quoted}?", "the protagonist of {x}",
        "Which book has {x} as its protagonist?", "the book whose protagonist is {x}", noun="book"),
    "married to": RelationPhrasing.make(
        "Who is married to {x}?", "the spouse of {x}",
        "Who is married to {x}?", "the spouse of {x}"),
    "spouse": RelationPhrasing.make(
        "Who is the spouse of {x}?", "the spouse of {x}",
        "Who has {x} as a spouse?", "the person whose spouse is {x}"),
    "occupation": RelationPhrasing.make(
        "What was the occupation of {x}?", "the occupation of {x}",
        "Who has the occupation {x}?", "the person whose occupation is {x}"),
    "born in": RelationPhrasing.make(
        "Where was {x} born?", "the birthplace of {x}",
        "Who was born in {x}?", "the person born in {x}"),
}

_PREPOSITIONS = {"in", "of", "to", "by", "at", "for", "with", "from", "on", "as", "into", "under"}
_IRREGULAR_VERBS = {"wrote", "won", "made", "built", "led", "ran", "sang", "taught", "met",
                    "drew", "gave", "took", "held", "bought", "sold", "owns", "leads",
                    "founded", "directed", "created", "invented", "discovered", "composed"}


def relation_class(relation: str) -> str:
    words = relation.split()
    if not words:
        return "noun"
    last = words[-1]
    if last in _PREPOSITIONS:
        return "prep"
    if last in _IRREGULAR_VERBS or (last.endswith("ed") and len(last) > 3):
        return "verb"
    return "noun"


@lru_cache(maxsize=4096)
def phrasing_for(relation: str) -> RelationPhrasing:
    r = normalize_relation(relation)
    if r in LEXICON:
        return LEXICON[r]
    cls = relation_class(r)
    if cls == "prep":
        return RelationPhrasing.make(
            f"Who or what is {{x}} {r}?", f"the entity that {{x}} is {r}",
            f"Who or what is {r} {{x}}?", f"the entity {r} {{x}}")
    if cls == "verb":
        return RelationPhrasing.make(
            f"What is something that {{x}} {r}?", f"the entity that {{x}} {r}",
            f"Who or what {r} {{x}}?", f"the entity that {r} {{x}}")
    return RelationPhrasing.make(
        f"Who or what is the {r} of {{x}}?", f"the {r} of {{x}}",
        f"Whose {r} is {{x}}?", f"the entity whose {r} is {{x}}")


def _anchor_text(name: str, style: str, noun: str) -> str:
    if style == TYPED:
        return f"the {noun} '{name}'"
    if style == QUOTED:
        return f"'{name}'"
    return name


def _unanchor(text: str, style: str, noun: str) -> list[str]:
    """Anchor names a slot fragment could stand for; styled forms also accept the bare name."""
    names = []
    if style == TYPED:
        pre = f"the {noun} '"
        if text.startswith(pre) and text.endswith("'") and len(text) > len(pre) + 1:
            names.append(text[len(pre):-1])
    elif style == QUOTED:
        if len(text) > 2 and text[0] == "'" and text[-1] == "'":
            names.append(text[1:-1])
    names.append(text)
    return names


def render_chain(anchor: str, hops: Sequence[tuple[str, bool]]) -> str:
    """Question whose answer is the entity reached by walking `hops` from `anchor`."""
    if not hops:
        raise ValueError("a question needs at least one hop")
    inner: str | None = None
    for i, (relation, inverted) in enumerate(hops):
        ph = phrasing_for(relation)
        last = i == len(hops) - 1
        tmpl = (ph.inv_q if inverted else ph.fwd_q) if last else (ph.inv_np if inverted else ph.fwd_np)
        x = _anchor_text(anchor, tmpl.style, ph.noun) if inner is None else inner
        inner = tmpl.fill(x)
    return inner


Parse = tuple[str, tuple[tuple[str, bool], ...]]


def parse_chain(question: str, relations: Iterable[str],
                is_entity: Callable[[str], bool], max_hops: int = 4) -> list[Parse]:
    """Every (anchor, hops) reading of `question` over the given relation labels.

    Only anchors accepted by `is_entity` survive, which keeps the search tiny.
    """
    rels = sorted({normalize_relation(r) for r in relations})
    table = [(r, phrasing_for(r)) for r in rels]
    text = question.strip()
    out: list[Parse] = []

    def np_parses(fragment: str, depth: int) -> list[Parse]:
        found: list[Parse] = []
        if depth >= max_hops:
            return found
        for r, ph in table:
            for inverted, tmpl in ((False, ph.fwd_np), (True, ph.inv_np)):
                inner = tmpl.match(fragment)
                if inner is None:
                    continue
                for anchor, hops in slot_parses(inner, tmpl.style, ph.noun, depth + 1):
                    found.append((anchor, hops + ((r, inverted),)))
        return found

    def slot_parses(inner: str, style: str, noun: str, depth: int) -> list[Parse]:
        found: list[Parse] = []
        for name in _unanchor(inner, style, noun):
            if is_entity(name):
                found.append((name, ()))
                break
        found.extend(np_parses(inner, depth))
        return found

    for r, ph in table:
        for inverted, tmpl in ((False, ph.fwd_q), (True, ph.inv_q)):
            inner = tmpl.match(text)
            if inner is None:
                continue
            for anchor, hops in slot_parses(inner, tmpl.style, ph.noun, 1):
                out.append((anchor, hops + ((r, inverted),)))
    # shortest readings first, then lexical order: deterministic preference
    out = list(dict.fromkeys(out))
    out.sort(key=lambda p: (len(p[1]), p[1], p[0]))
    return out
