"""Answer grading, per-kind accuracies, forget/retain/overall scores and rank correlation."""
from __future__ import annotations

import json
import logging
import math
import re
import string
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .prompts import JUDGE, parse_yes_no

log = logging.getLogger(__name__)

FORGET_KINDS = ("forget_1hop", "forget_2hop", "forget_3hop")
RETAIN_KINDS = ("retain_1away", "retain_2away", "retain_relation")
EXTRA_KINDS = ("forget_alias", "forget_decomposed")
ALL_KINDS = FORGET_KINDS + EXTRA_KINDS + RETAIN_KINDS


class UndefinedScore(ValueError):
    pass


_PUNCT = str.maketrans({c: " " for c in string.punctuation + "‘’“”"})
_ARTICLES = {"a", "an", "the"}


def normalize_answer(text: str) -> str:
    words = text.lower().translate(_PUNCT).split()
    return " ".join(w for w in words if w not in _ARTICLES)


def string_match(expected: Iterable[str], raw: str) -> bool:
    hay = f" {normalize_answer(raw)} "
    for form in expected:
        needle = normalize_answer(form)
        if needle and f" {needle} " in hay:
            return True
    return False


@dataclass
class GradedAnswer:
    probe_id: str
    raw_answer: str
    correct: bool
    grader: str = "string_match"
    judge_failed: bool = False

    def to_dict(self) -> dict:
        d = {"probe_id": self.probe_id, "raw_answer": self.raw_answer,
             "correct": self.correct, "grader": self.grader}
        if self.judge_failed:
            d["judge_failed"] = True
        return d


def grade(expected: Sequence[str], raw: str, judge=None, *, question: str = "",
          probe_id: str = "") -> GradedAnswer:
    if not expected:
        raise ValueError("expected answer set is empty")
    if string_match(expected, raw):
        return GradedAnswer(probe_id, raw, True, "string_match")
    if judge is None:
        return GradedAnswer(probe_id, raw, False, "string_match")
    from .gateway import BudgetExhausted, TransportError

    prompt = JUDGE.render(question=question, expected=" | ".join(sorted(expected)), answer=raw)
    try:
        verdict = parse_yes_no(judge.complete(prompt, call_class="grade"))
    except (TransportError, BudgetExhausted) as exc:
        log.warning("judge unavailable (%s); keeping string-match verdict", exc)
        return GradedAnswer(probe_id, raw, False, "string_match", judge_failed=True)
    return GradedAnswer(probe_id, raw, bool(verdict), "judge")


# -- score algebra -------------------------------------------------------------

def harmonic_overall(forget: float, retain: float) -> float:
    a, b = 1.0 - forget, retain
    if a + b == 0:
        return 0.0
    return 2.0 * a * b / (a + b)


def _mean(values: list[float]) -> float:
    return sum(values) / len(values)


def combine(acc: dict[str, float], strict: bool = False) -> tuple[float | None, float | None, float | None]:
    """Forget score, retain score and overall from per-kind accuracies (fractions)."""
    out = []
    for group, name in ((FORGET_KINDS, "forget"), (RETAIN_KINDS, "retain")):
        present = [acc[k] for k in group if acc.get(k) is not None]
        if len(present) < len(group):
            missing = [k for k in group if acc.get(k) is None]
            if strict:
                raise UndefinedScore(f"{name} score undefined: no probes for {missing}")
            log.warning("%s score computed without %s", name, missing)
        out.append(_mean(present) if present else None)
    f, r = out
    overall = harmonic_overall(f, r) if f is not None and r is not None else None
    return f, r, overall


def scores_from_percent(accuracies: Sequence[float]) -> tuple[float, float, float]:
    """Six percent accuracies (three forget kinds, then three retain kinds) to percent scores."""
    if len(accuracies) != 6:
        raise ValueError("need exactly six accuracies")
    acc = dict(zip(FORGET_KINDS + RETAIN_KINDS, (a / 100.0 for a in accuracies)))
    f, r, o = combine(acc, strict=True)
    return 100 * f, 100 * r, 100 * o


@dataclass
class ScoreReport:
    model_label: str
    acc: dict[str, float]
    n_per_kind: dict[str, int]
    forget_score: float | None
    retain_score: float | None
    overall: float | None
    graph_hash: str = ""
    manifest_hash: str = ""
    graded: list[GradedAnswer] = field(default_factory=list)

    def same_scores(self, other: "ScoreReport") -> bool:
        return (self.acc == other.acc and self.n_per_kind == other.n_per_kind
                and self.forget_score == other.forget_score
                and self.retain_score == other.retain_score and self.overall == other.overall)

    def to_dict(self) -> dict:
        return {
            "model_label": self.model_label,
            "graph_hash": self.graph_hash,
            "manifest_hash": self.manifest_hash,
            "acc": dict(sorted(self.acc.items())),
            "F": self.forget_score,
            "R": self.retain_score,
            "overall": self.overall,
            "n_per_kind": dict(sorted(self.n_per_kind.items())),
            "graded": [g.to_dict() for g in self.graded],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreReport":
        return cls(
            model_label=d["model_label"], acc=dict(d["acc"]), n_per_kind=dict(d["n_per_kind"]),
            forget_score=d["F"], retain_score=d["R"], overall=d["overall"],
            graph_hash=d.get("graph_hash", ""), manifest_hash=d.get("manifest_hash", ""),
            graded=[GradedAnswer(g["probe_id"], g["raw_answer"], g["correct"], g["grader"],
                                 g.get("judge_failed", False)) for g in d.get("graded", [])],
        )

    def percent_row(self) -> list[str]:
        cells = [self.acc.get(k) for k in FORGET_KINDS + RETAIN_KINDS]
        cells += [self.forget_score, self.retain_score, self.overall]
        return ["-" if v is None else f"{100 * v:.1f}" for v in cells]


def report_from_counts(label: str, counts: dict[str, Sequence[int]], strict: bool = False,
                       **extra) -> ScoreReport:
    """Build a report from {kind: (correct, total)}."""
    acc, n = {}, {}
    for kind in sorted(counts):
        correct, total = counts[kind]
        if total == 0:
            continue
        acc[kind] = correct / total
        n[kind] = total
    f, r, o = combine(acc, strict=strict)
    return ScoreReport(label, acc, n, f, r, o, **extra)


def evaluate(endpoint, probes: Sequence, *, label: str | None = None, judge=None,
             strict: bool = False, graph_hash: str = "", manifest_hash: str = "",
             workers: int | None = None) -> ScoreReport:
    """Ask every probe, grade, and aggregate. Probe order does not affect the result."""
    probes = sorted(probes, key=lambda p: (p.kind, p.id))
    for p in probes:
        if p.prefilter_passed is not True:
            raise ValueError(f"probe {p.id} did not pass the prefilter and cannot be evaluated")
    workers = workers or getattr(endpoint, "max_in_flight", 1)

    def ask(p) -> GradedAnswer:
        raw = endpoint.complete(p.question, call_class="probe")
        return grade(p.expected, raw, judge, question=p.question, probe_id=p.id)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            graded = list(pool.map(ask, probes))
    else:
        graded = [ask(p) for p in probes]
    counts: dict[str, list[int]] = {}
    for p, g in zip(probes, graded):
        c = counts.setdefault(p.kind, [0, 0])
        c[0] += int(g.correct)
        c[1] += 1
    return report_from_counts(label or getattr(endpoint, "model_id", "model"), counts,
                              strict=strict, graph_hash=graph_hash,
                              manifest_hash=manifest_hash, graded=graded)


# -- rank correlation ----------------------------------------------------------

def average_ranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def spearman(a: Sequence[float], b: Sequence[float]) -> float:
    if len(a) != len(b):
        raise ValueError("score vectors differ in length")
    if len(a) < 3:
        raise ValueError("need at least three paired scores")
    if len(set(a)) == 1 or len(set(b)) == 1:
        raise UndefinedScore("rank correlation is undefined for a constant vector")
    ra, rb = average_ranks(a), average_ranks(b)
    ma, mb = _mean(ra), _mean(rb)
    cov = sum((x - ma) * (y - mb) for x, y in zip(ra, rb))
    va = sum((x - ma) ** 2 for x in ra)
    vb = sum((y - mb) ** 2 for y in rb)
    return cov / math.sqrt(va * vb)


def spearman_pvalue(rho: float, n: int) -> float:
    """Two-sided p-value from the t approximation with n - 2 degrees of freedom."""
    from scipy.stats import t as student_t

    if abs(rho) >= 1.0:
        return 0.0
    stat = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    return float(2.0 * student_t.sf(abs(stat), n - 2))


# -- comparison tables -----------------------------------------------------------

_HEADER = ["Method", "1-hop", "2-hop", "3-hop", "1-fact away", "2-facts away", "Rel. Ret.",
           "Forget Score", "Avg. Retain", "Overall"]


def compare_markdown(reports: Sequence[ScoreReport], reference: Sequence[float] | None = None) -> str:
    lines = ["| " + " | ".join(_HEADER) + " |", "|" + "---|" * len(_HEADER)]
    for rep in reports:
        lines.append("| " + " | ".join([rep.model_label] + rep.percent_row()) + " |")
    if reference is not None:
        ours = [r.forget_score for r in reports]
        if len(ours) >= 3 and None not in ours:
            rho = spearman(ours, reference)
            lines.append("")
            lines.append(f"Spearman rho (forget score vs reference) = {rho:.3f}, "
                         f"p = {spearman_pvalue(rho, len(ours)):.3g}")
    return "\n".join(lines) + "\n"


def load_report(path) -> ScoreReport:
    with open(path, encoding="utf-8") as fh:
        return ScoreReport.from_dict(json.load(fh))


_LABEL = re.compile(r"[^\w.+-]+")


def safe_label(label: str) -> str:
    return _LABEL.sub("_", label).strip("_") or "model"
