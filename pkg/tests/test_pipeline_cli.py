from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import jsonschema
import pytest

from conftest import FIXTURES
from kgprobe import __version__
from kgprobe.cli import main
from kgprobe.coverage import write_benchmark
from kgprobe.graph import ExpansionBudget
from kgprobe.pipeline import ConfigError, RunConfig, run_pipeline
from kgprobe.schemas import SCHEMAS
from kgprobe.study import loop_config, standard_profiles, write_world
from kgprobe.world import random_world, world_benchmark

KING = FIXTURES / "stephen_king_world.json"

CONFIG = """\
seeds = ["Stephen King"]
out_dir = "run"

[budget]
b0 = 40
alpha = 0.9
d_max = 2

[endpoints]
target = "synthetic:world.json"
max_in_flight = {mif}

[probes]
per_kind = 20
sample_seed = 3

[[models]]
label = "brittle"
endpoint = "synthetic:world.json?profile=brittle.json"
"""

BRITTLE = {"forget_entities": ["Stephen King"], "p_block_by_hops": {"1": 1.0, "2": 0.7, "3": 0.6},
           "collateral_radius": 1, "p_collateral": 0.5, "rng_seed": 7}


def make_project(root: Path, mif: int = 4) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    (root / "world.json").write_bytes(KING.read_bytes())
    (root / "brittle.json").write_text(json.dumps(BRITTLE))
    cfg = root / "run.toml"
    cfg.write_text(CONFIG.format(mif=mif))
    return cfg


def artifacts(root: Path) -> dict[str, bytes]:
    run = root / "run"
    return {str(p.relative_to(run)): p.read_bytes() for p in sorted(run.rglob("*")) if p.is_file()}


def test_config_run_and_rerun_is_free(tmp_path):
    cfg = RunConfig.load(make_project(tmp_path))
    first = run_pipeline(cfg)
    assert first.calls > 0 and not first.truncated_stages
    before = artifacts(tmp_path)
    again = run_pipeline(cfg)
    assert again.calls == 0 and all(s.skipped for s in again.stages)
    assert artifacts(tmp_path) == before
    forced = run_pipeline(cfg, force=True)
    assert forced.calls == first.calls and artifacts(tmp_path) == before


def test_config_errors(tmp_path):
    make_project(tmp_path)
    path = tmp_path / "bad.toml"
    path.write_text((tmp_path / "run.toml").read_text().replace("alpha = 0.9", "alpha = 1.0"))
    with pytest.raises(ConfigError, match="alpha"):
        RunConfig.load(path)
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"seeds": ["x"], "endpoints": {}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"endpoints": {"target": "synthetic:w.json"}})


@pytest.mark.parametrize("mif", [1, 8])
def test_artifacts_do_not_depend_on_concurrency(tmp_path, mif):
    base = tmp_path / "base"
    run_pipeline(RunConfig.load(make_project(base, 4)))
    other = tmp_path / f"mif{mif}"
    run_pipeline(RunConfig.load(make_project(other, mif)))
    assert artifacts(other) == artifacts(base)


def test_artifacts_match_schemas(tmp_path):
    run_pipeline(RunConfig.load(make_project(tmp_path)))
    run = tmp_path / "run"
    jsonschema.validate(json.loads((run / "graph.json").read_text()), SCHEMAS["graph"])
    jsonschema.validate(json.loads((run / "manifest.json").read_text()), SCHEMAS["manifest"])
    jsonschema.validate(json.loads((run / "results" / "brittle.json").read_text()), SCHEMAS["results"])
    for line in (run / "probes.prefiltered.jsonl").read_text().splitlines():
        jsonschema.validate(json.loads(line), SCHEMAS["probe"])
    jsonschema.validate(json.loads(KING.read_text()), SCHEMAS["world"])
    jsonschema.validate(BRITTLE, SCHEMAS["profile"])


def test_study_config_paths_resolve(tmp_path):
    w = random_world(2, n_facts=20)
    cfg = loop_config(w, standard_profiles(w), tmp_path, budget=ExpansionBudget(20, 0.8, 2))
    assert cfg.target == f"synthetic:{tmp_path / 'world.json'}"
    assert len(cfg.models) == 5 and all("?profile=" in m.endpoint for m in cfg.models)


# -- command line ---------------------------------------------------------------------------

def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_version_and_schema(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0 and capsys.readouterr().out.strip() == f"kgprobe {__version__}"
    with pytest.raises(SystemExit):
        main(["--schema"])
    assert set(json.loads(capsys.readouterr().out)) == set(SCHEMAS)


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "kgprobe", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip() == f"kgprobe {__version__}"


def test_estimate(capsys):
    code, out, _ = run_cli(capsys, "estimate", "--b0", 10, "--alpha", 0.5, "--dmax", 2, "--k", 3)
    data = json.loads(out)
    assert code == 0
    assert (data["n_total"], data["a_total"], data["level_widths"]) == (17.5, 52.5, [10, 5, 2])
    code, _, err = run_cli(capsys, "estimate", "--b0", 10, "--alpha", 1.0, "--dmax", 2)
    assert code == 2 and "alpha" in err


def test_stage_by_stage(tmp_path, capsys):
    make_project(tmp_path)
    w, g, p, f, m = (tmp_path / n for n in ("world.json", "g.json", "p.jsonl", "f.jsonl", "m.json"))
    target = f"synthetic:{w}"
    assert run_cli(capsys, "build-graph", "--seed", "Stephen King", "--b0", 40, "--alpha", 0.9,
                   "--dmax", 2, "--endpoint", target, "--out", g)[0] == 0
    assert run_cli(capsys, "gen-probes", "--graph", g, "--out", p)[0] == 0
    assert run_cli(capsys, "prefilter", "--graph", g, "--probes", p, "--endpoint", target,
                   "--out", f, "--manifest", m, "--per-kind", 20, "--sample-seed", 3)[0] == 0
    brittle = f"{target}?profile={tmp_path / 'brittle.json'}"
    res = tmp_path / "res.json"
    assert run_cli(capsys, "evaluate", "--probes", f, "--manifest", m, "--endpoint", brittle,
                   "--label", "brittle", "--out", res)[0] == 0
    code, out, _ = run_cli(capsys, "simulate", "--world", w, "--profile", tmp_path / "brittle.json",
                           "--expected", "--graph", g, "--probes", f, "--manifest", m, "--label", "brittle")
    expected = json.loads(out)
    observed = json.loads(res.read_text())
    assert code == 0
    assert (expected["F"], expected["R"], expected["overall"]) == (observed["F"], observed["R"], observed["overall"])
    code, out, _ = run_cli(capsys, "score", "--results", res)
    assert code == 0 and out.startswith("brittle: forget=")
    code, out, _ = run_cli(capsys, "compare", res, res, "--reference", 1, 2)
    assert code == 0 and out.count("| brittle") == 2
    # second build is skipped without any calls
    code, _, err = run_cli(capsys, "build-graph", "--seed", "Stephen King", "--b0", 40, "--alpha", 0.9,
                           "--dmax", 2, "--endpoint", target, "--out", g)
    assert code == 0 and "skipped" in err


def test_score_from_accuracies(capsys):
    code, out, _ = run_cli(capsys, "score", "--acc", 98.6, 97.2, 84.1, 98.9, 98.1, 99.1)
    assert code == 0 and out.strip() == "accuracies: forget=93.3 retain=98.7 overall=12.5"


def test_truncated_graph_exit_code_and_downstream_refusal(tmp_path, capsys):
    w = random_world(4, n_facts=40)
    (tmp_path / "w.json").write_text(w.to_json())
    g = tmp_path / "g.json"
    code, _, err = run_cli(capsys, "build-graph", "--seed", w.seeds[0], "--b0", 8, "--alpha", 0.3,
                           "--dmax", 3, "--k", 1, "--endpoint", f"synthetic:{tmp_path / 'w.json'}", "--out", g)
    assert code == 3 and "truncated" in err
    code, _, err = run_cli(capsys, "gen-probes", "--graph", g, "--out", tmp_path / "p.jsonl")
    assert code == 2 and "--allow-truncated" in err
    assert run_cli(capsys, "gen-probes", "--graph", g, "--out", tmp_path / "p.jsonl", "--allow-truncated")[0] == 0


def test_unknown_seed_is_a_stage_error(tmp_path, capsys):
    code, _, err = run_cli(capsys, "build-graph", "--seed", "Nobody Atall", "--b0", 5, "--alpha", 0.5,
                           "--dmax", 1, "--endpoint", f"synthetic:{KING}", "--out", tmp_path / "g.json")
    assert code == 2 and "Nobody Atall" in err


def test_coverage_command(tmp_path, capsys):
    w = random_world(1, n_facts=30)
    write_world(w, {}, tmp_path)
    spec = f"synthetic:{tmp_path / 'world.json'}"
    graphs = []
    for b0 in (4, 40):
        g = tmp_path / f"g{b0}.json"
        run_cli(capsys, "build-graph", "--seed", w.seeds[0], "--b0", b0, "--alpha", 0.8, "--dmax", 2,
                "--endpoint", spec, "--out", g)
        graphs += ["--graph", g]
    bench = tmp_path / "bench.jsonl"
    write_benchmark(world_benchmark(w, 2), bench)
    out_path = tmp_path / "cov.json"
    code, out, _ = run_cli(capsys, "coverage", *graphs, "--benchmark", bench, "--extractor", spec,
                           "--out", out_path, "--allow-truncated")
    data = json.loads(out_path.read_text())
    jsonschema.validate(data, SCHEMAS["coverage"])
    assert code == 0 and data["coverage"] == 1.0 and "coverage" in out
    assert [c for _, c in data["curve"]] == sorted(c for _, c in data["curve"])


def test_simulate_prompt(capsys):
    code, out, _ = run_cli(capsys, "simulate", "--world", KING, "--prompt", "Who wrote The Shining?")
    assert code == 0 and out.strip() == "Stephen King"
