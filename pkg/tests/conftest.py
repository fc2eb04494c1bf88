from __future__ import annotations

import json
from pathlib import Path

import pytest
from hypothesis import settings

from kgprobe.gateway import ModelEndpoint
from kgprobe.world import ForgettingProfile, SyntheticModel, WorldSpec

FIXTURES = Path(__file__).parent / "fixtures"

settings.register_profile("thorough", max_examples=1000, deadline=None)
settings.register_profile("default", deadline=None)
settings.load_profile("default")


def load_fixture(name: str):
    return json.loads((FIXTURES / name).read_text(encoding="utf-8"))


def synthetic(world: WorldSpec, profile: ForgettingProfile | None = None, **kw) -> ModelEndpoint:
    return ModelEndpoint(SyntheticModel(world, profile).answer, "synthetic", kind="synthetic", **kw)


@pytest.fixture
def king_world() -> WorldSpec:
    return WorldSpec.load(FIXTURES / "stephen_king_world.json")


@pytest.fixture
def king_profile() -> ForgettingProfile:
    return ForgettingProfile(forget_entities=["Stephen King"],
                             p_block_by_hops={1: 1.0, 2: 0.7, 3: 0.6},
                             collateral_radius=1, p_collateral=0.5, rng_seed=7)


# -- acceptance summary: one line per criterion --------------------------------------------

_CRITERIA: dict[str, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    title = getattr(item.function, "criterion", None)
    if title is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA[item.name] = (title, "PASS" if report.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for title, verdict in sorted(_CRITERIA.values()):
        terminalreporter.write_line(f"{verdict}  {title}")
