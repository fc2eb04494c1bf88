"""Closed-loop runs of the file-based pipeline against synthetic worlds.

A world and a set of forgetting profiles are written to disk, the pipeline
runs with ``synthetic:`` endpoints, and each results file is compared to the
exact scores replayed by the world oracle.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .graph import ExpansionBudget
from .pipeline import ModelSpec, RunConfig, RunSummary, load_graph, load_results, read_json, run_pipeline
from .probes import read_probes
from .scorer import ScoreReport
from .world import ForgettingProfile, WorldSpec, expected_scores


def standard_profiles(world: WorldSpec, rng_seed: int = 0) -> dict[str, ForgettingProfile]:
    """Five profiles used by the synthetic study, from no forgetting to heavy collateral damage."""
    seeds = list(world.seeds)
    return {
        "untouched": ForgettingProfile(seeds, {}, 0, 0.0, rng_seed),
        "clean": ForgettingProfile(seeds, {1: 1.0, 2: 1.0, 3: 1.0}, 0, 0.0, rng_seed),
        # single facts are gone, composed questions still leak
        "brittle": ForgettingProfile(seeds, {1: 1.0, 2: 0.7, 3: 0.6}, 1, 0.5, rng_seed),
        "partial": ForgettingProfile(seeds, {1: 0.5, 2: 0.5, 3: 0.5}, 0, 0.0, rng_seed),
        "collateral": ForgettingProfile(seeds, {1: 0.9, 2: 0.8, 3: 0.8}, 2, {1: 0.6, 2: 0.3}, rng_seed),
    }


@dataclass
class LoopOutcome:
    label: str
    observed: ScoreReport
    expected: ScoreReport

    @property
    def exact(self) -> bool:
        return self.observed.same_scores(self.expected)


def write_world(world: WorldSpec, profiles: Mapping[str, ForgettingProfile], root: Path) -> dict[str, Path]:
    root.mkdir(parents=True, exist_ok=True)
    (root / "world.json").write_text(world.to_json(), encoding="utf-8")
    paths = {}
    for label, prof in profiles.items():
        p = root / f"profile_{label}.json"
        p.write_text(json.dumps(prof.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
        paths[label] = p
    return paths


def loop_config(world: WorldSpec, profiles: Mapping[str, ForgettingProfile], root: Path, *,
                budget: ExpansionBudget | None = None, per_kind: int = 100, sample_seed: int = 0,
                max_in_flight: int = 4) -> RunConfig:
    root = Path(root)
    paths = write_world(world, profiles, root)
    target = f"synthetic:{root / 'world.json'}"
    return RunConfig(
        seeds=list(world.seeds),
        budget=budget or ExpansionBudget(b0=60, alpha=0.9, d_max=2),
        target=target,
        models=[ModelSpec(label, f"{target}?profile={paths[label]}") for label in profiles],
        max_in_flight=max_in_flight,
        per_kind=per_kind,
        sample_seed=sample_seed,
        out_dir=root / "run",
    )


def closed_loop(world: WorldSpec, profiles: Mapping[str, ForgettingProfile], root: Path,
                **kw) -> tuple[list[LoopOutcome], RunSummary]:
    cfg = loop_config(world, profiles, root, **kw)
    summary = run_pipeline(cfg)
    graph = load_graph(cfg.graph_path)
    probes = read_probes(cfg.filtered_path)
    man = read_json(cfg.manifest_path)
    out = []
    for label, prof in profiles.items():
        observed = load_results(cfg.results_path(label))
        out.append(LoopOutcome(label, observed, expected_scores(world, prof, probes, graph, man, label)))
    return out, summary
