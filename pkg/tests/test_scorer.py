from __future__ import annotations

import math

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import load_fixture
from kgprobe.gateway import ModelEndpoint, TransportError
from kgprobe.graph import Hop
from kgprobe.probes import Probe
from kgprobe.scorer import (
    FORGET_KINDS,
    RETAIN_KINDS,
    ScoreReport,
    UndefinedScore,
    average_ranks,
    combine,
    compare_markdown,
    evaluate,
    grade,
    harmonic_overall,
    report_from_counts,
    scores_from_percent,
    spearman,
    spearman_pvalue,
    string_match,
)

TABLES = load_fixture("reference_tables.json")
APPENDIX = ("rwku_phi4_mini", "rwku_granite32_8b", "tofu_llama31_8b")


def rows(*names):
    return [pytest.param(row, id=f"{name}:{row['method']}") for name in names for row in TABLES[name]]


def check_row(row):
    f, r, o = scores_from_percent(row["acc"])
    assert abs(f - row["forget"]) <= 0.1 + 1e-9, f"forget {f:.2f} vs printed {row['forget']}"
    assert abs(r - row["retain"]) <= 0.1 + 1e-9, f"retain {r:.2f} vs printed {row['retain']}"
    assert abs(o - row["overall"]) <= 0.1 + 1e-9, f"overall {o:.2f} vs printed {row['overall']}"


@pytest.mark.parametrize("row", rows("rwku_llama31_8b"))
def test_main_table_row(row):
    check_row(row)


@pytest.mark.parametrize("row", rows(*APPENDIX))
def test_appendix_table_row(row):
    check_row(row)


def test_anchor_rows():
    f, r, o = scores_from_percent([98.6, 97.2, 84.1, 98.9, 98.1, 99.1])
    assert (round(f, 1), round(r, 1), round(o, 1)) == (93.3, 98.7, 12.5)
    f, r, o = scores_from_percent([11.2, 18.7, 28.1, 74.2, 78.8, 86.1])
    assert (round(f, 1), round(r, 1), round(o, 1)) == (19.3, 79.7, 80.2)
    assert scores_from_percent([0, 0, 0, 100, 100, 100]) == (0.0, 100.0, 100.0)


def test_overall_zero_when_both_terms_zero():
    assert harmonic_overall(1.0, 0.0) == 0.0


def test_missing_kind():
    acc = {"forget_1hop": 0.2, "forget_2hop": 0.4, "retain_1away": 1.0, "retain_2away": 0.5,
           "retain_relation": 0.0}
    f, r, _ = combine(acc)
    assert f == pytest.approx(0.3) and r == pytest.approx(0.5)
    with pytest.raises(UndefinedScore):
        combine(acc, strict=True)


# -- rank correlation ------------------------------------------------------------------

def test_static_vs_dynamic_rank_correlation():
    t = TABLES["rwku_static_vs_dynamic"]
    body = [r for r in t["rows"] if r["method"] != "Target model"]
    assert len(body) == 12
    rho = spearman([r["multihop_forget"] for r in body], [r["forget_set_all"] for r in body])
    assert abs(rho - t["rho_forget"]) <= 0.01
    assert spearman_pvalue(rho, 12) < 0.005


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=3, max_size=15))
def test_spearman_matches_reference_implementation(pairs):
    a, b = [float(x) for x, _ in pairs], [float(y) for _, y in pairs]
    assume(len(set(a)) > 1 and len(set(b)) > 1)
    want = stats.spearmanr(a, b)
    assert spearman(a, b) == pytest.approx(want.statistic, abs=1e-12)
    rho = spearman(a, b)
    if abs(rho) < 1:
        assert spearman_pvalue(rho, len(a)) == pytest.approx(want.pvalue, rel=1e-6, abs=1e-12)


def test_average_ranks_ties():
    assert average_ranks([3.0, 1.0, 3.0, 2.0]) == [3.5, 1.0, 3.5, 2.0]


def test_spearman_errors():
    with pytest.raises(ValueError):
        spearman([1, 2], [2, 1])
    with pytest.raises(UndefinedScore):
        spearman([1, 1, 1], [1, 2, 3])


# -- score algebra properties ---------------------------------------------------------

unit = st.floats(0.0, 1.0, allow_nan=False)
accs = st.fixed_dictionaries({k: unit for k in FORGET_KINDS + RETAIN_KINDS})


@settings(max_examples=1000, deadline=None)
@given(acc=accs)
def test_components_are_plain_means(acc):
    f, r, o = combine(acc)
    assert f == sum(acc[k] for k in FORGET_KINDS) / 3
    assert r == sum(acc[k] for k in RETAIN_KINDS) / 3
    assert o == harmonic_overall(f, r)


@settings(max_examples=1000, deadline=None)
@given(f=unit, r=unit)
def test_harmonic_mean_bounds(f, r):
    o = harmonic_overall(f, r)
    a = 1 - f
    assert 0.0 <= o <= 1.0
    if a + r > 0:
        assert min(a, r) - 1e-12 <= o <= max(a, r) + 1e-12
        assert o <= (a + r) / 2 + 1e-12
        assert math.isclose(o, 2 * a * r / (a + r), rel_tol=1e-12, abs_tol=1e-15)


@settings(max_examples=1000, deadline=None)
@given(acc=accs, kind=st.sampled_from(FORGET_KINDS + RETAIN_KINDS), bump=unit)
def test_overall_monotone(acc, kind, bump):
    better = dict(acc)
    better[kind] = max(acc[kind], bump)
    _, _, before = combine(acc)
    _, _, after = combine(better)
    if kind in RETAIN_KINDS:
        assert after >= before - 1e-12
    else:
        assert after <= before + 1e-12


@settings(max_examples=1000, deadline=None)
@given(counts=st.dictionaries(st.sampled_from(FORGET_KINDS + RETAIN_KINDS),
                              st.integers(1, 50).flatmap(lambda n: st.tuples(st.integers(0, n), st.just(n))),
                              min_size=6, max_size=6))
def test_report_round_trip(counts):
    rep = report_from_counts("m", counts)
    again = ScoreReport.from_dict(rep.to_dict())
    assert again.same_scores(rep)
    assert 0 <= rep.overall <= 1


# -- grading ---------------------------------------------------------------------------

def test_grading_fixture_agreement():
    cases = load_fixture("grading_cases.json")
    assert len(cases) == 60
    agree = sum(grade(c["expected"], c["raw"]).correct == c["label"] for c in cases)
    assert agree >= 58


def test_grade_examples():
    assert grade(["Stephen King", "Stephen Edwin King"], "The author is Stephen Edwin King.").correct
    assert not grade(["Tabitha King"], "I don't know.").correct
    assert not string_match(["King"], "Kingsley")
    with pytest.raises(ValueError):
        grade([], "x")


def test_judge_path_and_fallback():
    yes = ModelEndpoint(lambda p: "Yes", "judge")
    g = grade(["Stephen King"], "The author of It", yes)
    assert g.correct and g.grader == "judge"

    def broken(p):
        raise TransportError("down")

    down = ModelEndpoint(broken, "judge", retries=1, sleep=lambda s: None)
    g = grade(["Stephen King"], "The author of It", down)
    assert not g.correct and g.judge_failed and g.grader == "string_match"
    # a string match never consults the judge
    assert grade(["Stephen King"], "Stephen King", down).grader == "string_match"


def _probe(kind, i, ans="a"):
    return Probe(f"p{kind}{i}", kind, f"question {kind} {i}", [ans], [Hop("e", False)], "n",
                 prefilter_passed=True)


def test_evaluate_counts_and_order_independence():
    probes = [_probe(k, i, "yes" if i % 2 else "no") for k in FORGET_KINDS + RETAIN_KINDS for i in range(4)]
    ep = ModelEndpoint(lambda q: "yes", "m", max_in_flight=4)
    rep = evaluate(ep, probes, label="m")
    assert all(v == 0.5 for v in rep.acc.values())
    rev = evaluate(ModelEndpoint(lambda q: "yes", "m", max_in_flight=1), probes[::-1], label="m")
    assert rev.to_dict() == rep.to_dict()


def test_evaluate_rejects_unfiltered():
    p = _probe("forget_1hop", 0)
    p.prefilter_passed = None
    with pytest.raises(ValueError):
        evaluate(ModelEndpoint(lambda q: "a", "m"), [p])


def test_compare_table_with_reference():
    reps = [report_from_counts(f"m{i}", {k: (i, 4) for k in FORGET_KINDS + RETAIN_KINDS}) for i in range(4)]
    text = compare_markdown(reps, reference=[1.0, 2.0, 3.0, 4.0])
    assert text.count("\n| m") == 4
    assert "Spearman rho (forget score vs reference) = 1.000" in text
