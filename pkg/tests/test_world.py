from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import synthetic
from kgprobe.builder import expand
from kgprobe.graph import ExpansionBudget
from kgprobe.probes import generate, prefilter, sample
from kgprobe.scorer import evaluate
from kgprobe.study import closed_loop, standard_profiles
from kgprobe.world import (
    REFUSAL,
    ForgettingProfile,
    SyntheticModel,
    WorldMismatch,
    WorldSpec,
    answer,
    expected_scores,
    random_world,
    reachable_facts,
)

GENEROUS = ExpansionBudget(b0=60, alpha=0.9, d_max=2)


def test_plain_answers(king_world):
    assert answer(king_world, None, "Who wrote The Shining?") == "Stephen King"
    assert answer(king_world, None, "Who is married to Stephen Edwin King?") == "Tabitha King"
    assert answer(king_world, None, "What is the airspeed of a swallow?") == REFUSAL
    assert answer(king_world, None, 'Is "Tabitha Spruce" the same as "Tabitha King"?') == "Yes"
    assert answer(king_world, None, 'Is "Carrie" the same as "Carrie White"?') == "No"


def test_profile_blocks_by_hop_count(king_world):
    prof = ForgettingProfile(["Stephen King"], {1: 1.0, 2: 0.0})
    m = SyntheticModel(king_world, prof)
    assert m.answer("Who wrote The Shining?") == REFUSAL
    assert m.answer("Who wrote the book whose protagonist is Jack Torrance?") == "Stephen King"


def test_blocked_fraction_matches_probability(king_world):
    prof = ForgettingProfile(["Stephen King"], {2: 0.7}, rng_seed=3)
    m = SyntheticModel(king_world, prof)
    res = m.read_question("Who wrote the book whose protagonist is Jack Torrance?")
    blocked = sum(m.blocked(f"probe-{i}", res) for i in range(1000))
    assert abs(blocked / 1000 - 0.7) <= 0.03


def test_draw_is_seeded():
    a = ForgettingProfile(["x"], rng_seed=1)
    b = ForgettingProfile(["x"], rng_seed=2)
    assert a.draw("k") == ForgettingProfile(["x"], rng_seed=1).draw("k")
    assert a.draw("k") != b.draw("k")
    assert 0.0 <= a.draw("k") < 1.0


def test_profile_validation_and_round_trip(tmp_path):
    with pytest.raises(ValueError):
        ForgettingProfile(["x"], {1: 1.5})
    with pytest.raises(ValueError):
        ForgettingProfile(["x"], {}, collateral_radius=-1)
    prof = ForgettingProfile(["x"], {1: 1.0, 3: 0.25}, 2, {1: 0.5, 2: 0.1}, 9)
    path = tmp_path / "p.json"
    path.write_text(json.dumps(prof.to_dict()))
    again = ForgettingProfile.load(path)
    assert again.to_dict() == prof.to_dict()
    # unlisted hop counts inherit the nearest shorter entry
    assert again.p_block(2) == 1.0 and again.p_block(5) == 0.25
    assert again.p_collateral_at(2) == 0.1 and again.p_collateral_at(3) == 0.0


def test_world_round_trip(king_world):
    again = WorldSpec.from_dict(json.loads(king_world.to_json()))
    assert again.to_json() == king_world.to_json()


def test_random_world_is_seeded_and_connected():
    a, b = random_world(4, n_facts=30), random_world(4, n_facts=30)
    assert a.to_json() == b.to_json()
    assert a.to_json() != random_world(5, n_facts=30).to_json()
    assert len(reachable_facts(a, 100)) == len(a.facts)


def test_resolution_ignores_unknown_facts():
    w = WorldSpec.from_dict({"seeds": ["Ana Bell"], "ignorance": ["f0"], "facts": [
        {"id": "f0", "subject": "Ana Bell", "relation": "born in", "object": "Lyon"},
        {"id": "f1", "subject": "Ana Bell", "relation": "spouse", "object": "Cole Bell"}]})
    m = SyntheticModel(w)
    assert m.resolve("Ana Bell", [("born in", False)]).answers == []
    assert m.resolve("Cole Bell", [("spouse", True)]).answers == ["Ana Bell"]


# -- oracle vs pipeline ---------------------------------------------------------------

def suite(world):
    g = expand(synthetic(world), world.seeds, GENEROUS)
    filtered, _ = prefilter(synthetic(world), generate(g))
    return g, sample(filtered, 100, 0).probes


def test_blocking_everything_gives_zero_forget(king_world):
    g, probes = suite(king_world)
    prof = ForgettingProfile(["Stephen King"], {1: 1.0, 2: 1.0, 3: 1.0})
    rep = expected_scores(king_world, prof, probes, g)
    assert (rep.forget_score, rep.retain_score, rep.overall) == (0.0, 1.0, 1.0)


@pytest.mark.parametrize("name", ["untouched", "clean", "brittle", "partial", "collateral"])
def test_evaluate_equals_oracle(king_world, name):
    g, probes = suite(king_world)
    prof = standard_profiles(king_world, 7)[name]
    got = evaluate(synthetic(king_world, prof), probes, label=name)
    assert got.same_scores(expected_scores(king_world, prof, probes, g, label=name))


def test_proximity_effect(king_world, king_profile):
    g, probes = suite(king_world)
    rep = expected_scores(king_world, king_profile, probes, g)
    assert rep.acc["retain_1away"] < rep.acc["retain_2away"]


def test_mismatch_is_reported(king_world):
    g, probes = suite(king_world)
    other = random_world(1, n_facts=20)
    with pytest.raises(WorldMismatch):
        expected_scores(other, None, probes, g)
    with pytest.raises(WorldMismatch):
        expected_scores(king_world, None, probes[:3], g, {"kinds": {"forget_1hop": ["pnothere"]}})


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**5), kind_hops=st.sampled_from([1, 2, 3]),
       lo=st.floats(0, 1), hi=st.floats(0, 1))
def test_raising_block_probability_never_raises_accuracy(seed, kind_hops, lo, hi):
    lo, hi = sorted((lo, hi))
    w = random_world(seed, n_facts=20)
    g, probes = suite(w)
    kind = f"forget_{kind_hops}hop"
    if not any(p.kind == kind for p in probes):
        return
    low = expected_scores(w, ForgettingProfile(w.seeds, {1: 0.0, kind_hops: lo}, rng_seed=seed), probes, g)
    high = expected_scores(w, ForgettingProfile(w.seeds, {1: 0.0, kind_hops: hi}, rng_seed=seed), probes, g)
    assert high.acc[kind] <= low.acc[kind]


def test_file_pipeline_matches_oracle(tmp_path):
    w = random_world(3, n_facts=35)
    outcomes, summary = closed_loop(w, standard_profiles(w, 3), tmp_path)
    assert all(o.exact for o in outcomes), [o.label for o in outcomes if not o.exact]
    assert summary.calls > 0 and not summary.truncated_stages
