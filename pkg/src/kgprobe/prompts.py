"""Prompt templates and parsers for the small structured replies we expect back."""
from __future__ import annotations

import logging
import re
import string
from dataclasses import dataclass

log = logging.getLogger(__name__)


class MissingPlaceholder(KeyError):
    pass


_FIELD = re.compile(r"\{([A-Za-z_][A-Za-z0-9_ ]*)\}")


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str

    @property
    def placeholders(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(_FIELD.findall(self.body)))

    def render(self, **bindings: str) -> str:
        return render(self, bindings)


def render(template: PromptTemplate, bindings: dict[str, str]) -> str:
    missing = [p for p in template.placeholders if p not in bindings]
    if missing:
        raise MissingPlaceholder(f"{template.name}: unbound placeholder(s) {missing}")
    return _FIELD.sub(lambda m: str(bindings[m.group(1)]).strip(), template.body)


ELICIT = PromptTemplate(
    "elicit",
    """Generate a list of diverse questions regarding the entity '{entity}'. Each question should cover a different aspect:
1. Basic introduction: Who is {entity}?
2. Key concepts related to {entity}: What are the main concepts or characteristics associated with {entity}?
3. Connections to related entities: What are the most significant relationships between {entity} and other related entities?
4. Functional roles: What is the role or importance of {entity} in its field or domain?
5. Lesser-known facts: What are some lesser-known or non-mainstream details about {entity}?
6. Controversies or debates: Are there any controversies or debates surrounding {entity}?
7. Future trends: How could {entity} evolve or influence future developments in its field?
8. Historical significance: What has been the historical impact of {entity}?
9. Comparison to similar entities: How does {entity} compare to similar entities in the same or different fields?
10. Missing information: What information is missing or under-researched about {entity} that would help understand it better?

Input: "{entity}"
Provide the output as a list of questions.""",
)

ANSWER = PromptTemplate(
    "answer",
    """Answer each of the following questions about '{entity}' from your own knowledge. State concrete facts in short declarative sentences, one per line.

{questions}""",
)

EXTRACT_TRIPLETS = PromptTemplate(
    "extract_triplets",
    """In a knowledge graph, entities represent real-world objects, concepts, or things.
Valid entities are:
- Specific and identifiable (e.g., names, places, distinct items).
- Not overly abstract, repetitive, or general.
- Relevant to a knowledge graph's structure.

Extract all atomic facts from the input text.
Output each atomic fact in the format: (subject, relationship, object), where:
- Relationships and objects are concise, meaningful, and specific.
- Longer pieces of text can be broken into multiple relationships.
- For each fact, if applicable, create both relationships (e1, r1, e2) and (e2, r2, e1).

Text: "{text}\"""",
)

RELEVANCE = PromptTemplate(
    "relevance",
    """Rate the relevance of the following triple to the initial query on a scale from 0 to 10.
Query: "{Seed Entity}"
Triple: ("{entity}", "{relation}", "{obj}")
Provide only the number in response.""",
)

ALIAS = PromptTemplate("alias", 'Is "{node}" the same as "{visited_node}"?')

JUDGE = PromptTemplate(
    "judge",
    """Question: {question}
Reference answer(s): {expected}
Model answer: {answer}
Does the model answer give the same entity as a reference answer? Reply with yes or no.""",
)

DECOMPOSE = PromptTemplate(
    "decompose",
    """Answer the question by reasoning step by step, resolving one fact at a time.

Question: Who wrote the book whose protagonist is Jack Torrance?
Step 1: The book whose protagonist is Jack Torrance is The Shining.
Step 2: The author of The Shining is Stephen King.
Answer: Stephen King

Question: Who is married to the author of the book whose protagonist is Jack Torrance?
Step 1: The book whose protagonist is Jack Torrance is The Shining.
Step 2: The author of The Shining is Stephen King.
Step 3: Stephen King is married to Tabitha King.
Answer: Tabitha King

Question: {question}""",
)

COVERAGE_KEY = PromptTemplate(
    "coverage_key",
    """Identify the key entity and the relation that the following benchmark question asks about.
Reply on one line in the form: entity | relation
If the question does not ask about a specific entity, reply: NONE

Question: {question}""",
)

REPHRASE = PromptTemplate(
    "rephrase",
    """Rewrite the following question so it reads naturally. Keep every entity name and its meaning unchanged. Reply with the question only.

Question: {question}""",
)

RELATION_EQUIV = PromptTemplate(
    "relation_equiv",
    """Do the relations "{a}" and "{b}" describe the same kind of fact between two entities? Reply with yes or no.""",
)

TEMPLATES: dict[str, PromptTemplate] = {
    t.name: t
    for t in (ELICIT, ANSWER, EXTRACT_TRIPLETS, RELEVANCE, ALIAS, JUDGE, DECOMPOSE,
              COVERAGE_KEY, REPHRASE, RELATION_EQUIV)
}

DECOMPOSE_MARKER = "Answer the question by reasoning step by step"


_INT = re.compile(r"(?<![\d.])(-?\d+(?:\.\d+)?)(?![\d])")


def parse_relevance(raw: str) -> int | None:
    """First integer token in 0..10, or None when the reply has none.

    A fraction like ``8/10`` reads as 8; decimals and out-of-range
    numbers are rejected rather than rounded.
    """
    if raw is None:
        return None
    m = _INT.search(raw)
    if not m:
        log.info("unparseable relevance reply: %r", raw[:80])
        return None
    token = m.group(1)
    if "." in token or token.startswith("-"):
        log.info("non-integer relevance reply: %r", raw[:80])
        return None
    value = int(token)
    if not 0 <= value <= 10:
        log.info("relevance out of range: %r", raw[:80])
        return None
    return value


_YES = {"yes", "y", "true", "correct", "same"}
_NO = {"no", "n", "false", "incorrect", "different", "not"}


def parse_yes_no(raw: str) -> bool | None:
    """Strict yes/no reading of a judge reply; hedged or empty replies give None."""
    if not raw:
        return None
    words = raw.strip().lower().translate(str.maketrans("", "", string.punctuation)).split()
    if not words:
        return None
    if words[0] in _YES:
        return True
    if words[0] in _NO:
        return False
    return None
