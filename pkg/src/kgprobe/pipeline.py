"""Stage runners with hashed inputs, plus the config-driven end-to-end pipeline.

Every artifact records ``meta = {stage, inputs_hash, truncated}``. A stage
whose output already carries the hash it would compute is skipped, so a
rerun with unchanged inputs issues no model calls.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import builder, probes as probe_mod
from .gateway import ModelEndpoint, open_endpoint
from .graph import BudgetError, ExpansionBudget, KnowledgeGraph, short_hash
from .scorer import ScoreReport, evaluate, safe_label

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage} failed: {message}")
        self.stage = stage


class ConfigError(ValueError):
    pass


@dataclass
class StageResult:
    stage: str
    outputs: list[Path]
    skipped: bool = False
    truncated: bool = False
    calls: int = 0


# -- artifact helpers --------------------------------------------------------------

def dump_json(data) -> str:
    return json.dumps(data, sort_keys=True, ensure_ascii=False, indent=1) + "\n"


def write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_json(data), encoding="utf-8")


def read_json(path: Path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def sidecar(path: Path) -> Path:
    return Path(str(path) + ".meta.json")


def read_meta(path: Path) -> dict | None:
    path = Path(path)
    if path.suffix == ".jsonl":
        side = sidecar(path)
        return read_json(side) if side.exists() else None
    if not path.exists():
        return None
    return read_json(path).get("meta")


def file_hash(path: Path) -> str:
    return short_hash(Path(path).read_text(encoding="utf-8"), 32)


def inputs_hash(payload: dict) -> str:
    return short_hash(json.dumps(payload, sort_keys=True, ensure_ascii=False), 32)


def up_to_date(outputs: Sequence[Path], digest: str) -> bool:
    for out in outputs:
        meta = read_meta(out) if Path(out).exists() else None
        if not meta or meta.get("inputs_hash") != digest or meta.get("truncated"):
            return False
    return True


def require_complete(stage: str, path: Path, allow_truncated: bool) -> None:
    meta = read_meta(path)
    if meta and meta.get("truncated") and not allow_truncated:
        raise StageError(stage, f"input {path} is truncated (pass --allow-truncated to use it anyway)")


def endpoint_fingerprint(spec: str | None, model: str | None = None) -> str | None:
    if not spec:
        return None
    if spec.startswith("synthetic:"):
        rest = spec[len("synthetic:"):]
        world, _, query = rest.partition("?")
        parts = [file_hash(Path(world))]
        if query.startswith("profile="):
            parts.append(file_hash(Path(query[len("profile="):])))
        return "synthetic:" + ":".join(parts)
    return f"{spec}#{model or ''}"


@dataclass
class EndpointFactory:
    """Opens endpoints from spec strings and keeps them for call accounting."""

    model: str | None = None
    max_in_flight: int = 4
    cache_dir: Path | None = None
    opener: Callable[..., ModelEndpoint] = open_endpoint
    opened: list[ModelEndpoint] = field(default_factory=list)

    def __call__(self, spec: str, model: str | None = None) -> ModelEndpoint:
        model = model or self.model
        cache = None
        if self.cache_dir is not None:
            cache = Path(self.cache_dir) / f"{safe_label(spec + '_' + (model or ''))[:80]}.jsonl"
        ep = self.opener(spec, model=model, max_in_flight=self.max_in_flight, cache_path=cache)
        self.opened.append(ep)
        return ep

    @property
    def calls(self) -> int:
        return sum(ep.calls_used for ep in self.opened)


# -- stages ---------------------------------------------------------------------------

def build_graph_stage(factory: EndpointFactory, *, seeds: Sequence[str], budget: ExpansionBudget,
                      target: str, out: Path, extractor: str | None = None, judge: str | None = None,
                      forget_threshold: int = builder.DEFAULT_FORGET_THRESHOLD,
                      force: bool = False) -> StageResult:
    stage = "build-graph"
    out = Path(out)
    digest = inputs_hash({
        "stage": stage, "seeds": list(seeds), "budget": budget.to_dict(),
        "forget_threshold": forget_threshold, "target": endpoint_fingerprint(target),
        "extractor": endpoint_fingerprint(extractor), "judge": endpoint_fingerprint(judge),
    })
    if not force and up_to_date([out], digest):
        return StageResult(stage, [out], skipped=True)
    try:
        ep = factory(target)
        g = builder.expand(ep, seeds, budget,
                           extractor=factory(extractor) if extractor else None,
                           judge=factory(judge) if judge else None,
                           forget_threshold=forget_threshold)
    except (builder.SeedUnknownError, OSError, ValueError) as exc:
        raise StageError(stage, str(exc)) from exc
    data = g.to_dict()
    data["meta"] = {"stage": stage, "inputs_hash": digest, "truncated": g.truncated}
    write_json(out, data)
    # the builder bills a private ledger view, so report its count directly
    return StageResult(stage, [out], truncated=g.truncated, calls=g.calls_used)


def load_graph(path: Path) -> KnowledgeGraph:
    return KnowledgeGraph.from_dict(read_json(path))


def gen_probes_stage(*, graph_path: Path, out: Path, max_hops: int = 3, top_m: int = 5,
                     alias_kinds: Sequence[str] = ("forget_2hop",),
                     decompose_kinds: Sequence[str] = ("forget_2hop",),
                     allow_truncated: bool = False, force: bool = False) -> StageResult:
    stage = "gen-probes"
    out = Path(out)
    require_complete(stage, graph_path, allow_truncated)
    digest = inputs_hash({"stage": stage, "graph": file_hash(graph_path), "max_hops": max_hops,
                          "top_m": top_m, "alias_kinds": list(alias_kinds),
                          "decompose_kinds": list(decompose_kinds)})
    if not force and up_to_date([out], digest):
        return StageResult(stage, [out], skipped=True)
    g = load_graph(graph_path)
    try:
        items = probe_mod.generate(g, max_hops=max_hops, top_m=top_m, alias_kinds=alias_kinds,
                                   decompose_kinds=decompose_kinds)
    except probe_mod.ProbeError as exc:
        raise StageError(stage, str(exc)) from exc
    out.parent.mkdir(parents=True, exist_ok=True)
    probe_mod.write_probes(items, out)
    write_json(sidecar(out), {"stage": stage, "inputs_hash": digest, "truncated": False,
                              "graph_hash": g.content_hash(), "count": len(items)})
    return StageResult(stage, [out])


def prefilter_stage(factory: EndpointFactory, *, graph_path: Path, probes_path: Path, target: str,
                    out: Path, manifest_out: Path, per_kind: int = 100, sample_seed: int = 0,
                    judge: str | None = None, allow_truncated: bool = False,
                    force: bool = False) -> StageResult:
    stage = "prefilter"
    out, manifest_out = Path(out), Path(manifest_out)
    require_complete(stage, probes_path, allow_truncated)
    digest = inputs_hash({"stage": stage, "graph": file_hash(graph_path),
                          "probes": file_hash(probes_path), "target": endpoint_fingerprint(target),
                          "judge": endpoint_fingerprint(judge), "per_kind": per_kind,
                          "sample_seed": sample_seed})
    if not force and up_to_date([out, manifest_out], digest):
        return StageResult(stage, [out, manifest_out], skipped=True)
    before = factory.calls
    g = load_graph(graph_path)
    items = probe_mod.read_probes(probes_path)
    ep = factory(target)
    filtered, truncated = probe_mod.prefilter(ep, items, judge=factory(judge) if judge else None)
    chosen = probe_mod.sample(filtered, per_kind, sample_seed)
    probe_mod.write_probes(filtered, out)
    meta = {"stage": stage, "inputs_hash": digest, "truncated": truncated}
    passed = sum(1 for p in filtered if p.prefilter_passed)
    write_json(sidecar(out), dict(meta, passed=passed, count=len(filtered)))
    man = probe_mod.manifest(g.content_hash(), chosen, sample_seed, per_kind)
    man["meta"] = meta
    write_json(manifest_out, man)
    return StageResult(stage, [out, manifest_out], truncated=truncated, calls=factory.calls - before)


def evaluate_stage(factory: EndpointFactory, *, probes_path: Path, manifest_path: Path,
                   endpoint: str, label: str, out: Path, judge: str | None = None,
                   strict: bool = False, allow_truncated: bool = False,
                   force: bool = False) -> StageResult:
    stage = "evaluate"
    out = Path(out)
    require_complete(stage, probes_path, allow_truncated)
    require_complete(stage, manifest_path, allow_truncated)
    digest = inputs_hash({"stage": stage, "probes": file_hash(probes_path),
                          "manifest": file_hash(manifest_path),
                          "endpoint": endpoint_fingerprint(endpoint),
                          "judge": endpoint_fingerprint(judge), "label": label, "strict": strict})
    if not force and up_to_date([out], digest):
        return StageResult(stage, [out], skipped=True)
    before = factory.calls
    man = read_json(manifest_path)
    try:
        chosen = probe_mod.select(probe_mod.read_probes(probes_path), man)
        ep = factory(endpoint)
        report = evaluate(ep, chosen, label=label, judge=factory(judge) if judge else None,
                          strict=strict, graph_hash=man["graph_hash"],
                          manifest_hash=file_hash(manifest_path))
    except (probe_mod.ProbeError, ValueError) as exc:
        raise StageError(stage, str(exc)) from exc
    data = report.to_dict()
    data["meta"] = {"stage": stage, "inputs_hash": digest, "truncated": False}
    write_json(out, data)
    return StageResult(stage, [out], calls=factory.calls - before)


def load_results(path: Path) -> ScoreReport:
    return ScoreReport.from_dict(read_json(path))


# -- config-driven run ----------------------------------------------------------------------

@dataclass
class ModelSpec:
    label: str
    endpoint: str


@dataclass
class RunConfig:
    seeds: list[str]
    budget: ExpansionBudget
    target: str
    models: list[ModelSpec] = field(default_factory=list)
    model: str | None = None
    extractor: str | None = None
    judge: str | None = None
    grade_with_judge: bool = False
    max_in_flight: int = 4
    cache_dir: Path | None = None
    forget_threshold: int = builder.DEFAULT_FORGET_THRESHOLD
    per_kind: int = 100
    sample_seed: int = 0
    max_hops: int = 3
    top_m: int = 5
    alias_kinds: list[str] = field(default_factory=lambda: ["forget_2hop"])
    decompose_kinds: list[str] = field(default_factory=lambda: ["forget_2hop"])
    out_dir: Path = Path("run")
    strict: bool = False

    @property
    def graph_path(self) -> Path:
        return self.out_dir / "graph.json"

    @property
    def probes_path(self) -> Path:
        return self.out_dir / "probes.jsonl"

    @property
    def filtered_path(self) -> Path:
        return self.out_dir / "probes.prefiltered.jsonl"

    @property
    def manifest_path(self) -> Path:
        return self.out_dir / "manifest.json"

    def results_path(self, label: str) -> Path:
        return self.out_dir / "results" / f"{safe_label(label)}.json"

    @classmethod
    def from_dict(cls, data: dict, base: Path = Path(".")) -> "RunConfig":
        def rel(p: str | None) -> str | None:
            if not p:
                return None
            if p.startswith("synthetic:"):
                world, sep, query = p[len("synthetic:"):].partition("?")
                if query.startswith("profile="):
                    query = "profile=" + str(base / query[len("profile="):])
                return "synthetic:" + str(base / world) + sep + query
            return p

        try:
            ep = data.get("endpoints", {})
            b = data.get("budget", {})
            pr = data.get("probes", {})
            budget = ExpansionBudget(
                b0=int(b.get("b0", 10)), alpha=float(b.get("alpha", 0.8)), d_max=int(b.get("d_max", 2)),
                k=int(b.get("k", 3)), relevance_threshold=int(b.get("threshold", 6)))
            if "target" not in ep:
                raise ConfigError("endpoints.target is required")
            seeds = list(data.get("seeds", []))
            if not seeds:
                raise ConfigError("at least one seed is required")
            return cls(
                seeds=seeds,
                budget=budget,
                target=rel(ep["target"]),
                models=[ModelSpec(m["label"], rel(m["endpoint"])) for m in data.get("models", [])],
                model=ep.get("model"),
                extractor=rel(ep.get("extractor")),
                judge=rel(ep.get("judge")),
                grade_with_judge=bool(ep.get("grade_with_judge", False)),
                max_in_flight=int(ep.get("max_in_flight", 4)),
                cache_dir=(base / ep["cache_dir"]) if ep.get("cache_dir") else None,
                forget_threshold=int(b.get("forget_threshold", builder.DEFAULT_FORGET_THRESHOLD)),
                per_kind=int(pr.get("per_kind", 100)),
                sample_seed=int(pr.get("sample_seed", 0)),
                max_hops=int(pr.get("max_hops", 3)),
                top_m=int(pr.get("top_m", 5)),
                alias_kinds=list(pr.get("alias_kinds", ["forget_2hop"])),
                decompose_kinds=list(pr.get("decompose_kinds", ["forget_2hop"])),
                out_dir=base / data.get("out_dir", "run"),
                strict=bool(data.get("strict", False)),
            )
        except BudgetError as exc:
            raise ConfigError(str(exc)) from exc
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed config: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        with path.open("rb") as fh:
            data = tomllib.load(fh)
        return cls.from_dict(data, base=path.parent)


@dataclass
class RunSummary:
    stages: list[StageResult]
    calls: int

    @property
    def truncated_stages(self) -> list[str]:
        return [s.stage for s in self.stages if s.truncated]


def run_pipeline(cfg: RunConfig, *, allow_truncated: bool = False, force: bool = False,
                 opener: Callable[..., ModelEndpoint] = open_endpoint) -> RunSummary:
    factory = EndpointFactory(cfg.model, cfg.max_in_flight, cfg.cache_dir, opener)
    judge = cfg.judge if cfg.grade_with_judge else None
    results = [build_graph_stage(factory, seeds=cfg.seeds, budget=cfg.budget, target=cfg.target,
                                 out=cfg.graph_path, extractor=cfg.extractor, judge=cfg.judge,
                                 forget_threshold=cfg.forget_threshold, force=force)]
    results.append(gen_probes_stage(graph_path=cfg.graph_path, out=cfg.probes_path,
                                    max_hops=cfg.max_hops, top_m=cfg.top_m,
                                    alias_kinds=cfg.alias_kinds, decompose_kinds=cfg.decompose_kinds,
                                    allow_truncated=allow_truncated, force=force))
    results.append(prefilter_stage(factory, graph_path=cfg.graph_path, probes_path=cfg.probes_path,
                                   target=cfg.target, out=cfg.filtered_path,
                                   manifest_out=cfg.manifest_path, per_kind=cfg.per_kind,
                                   sample_seed=cfg.sample_seed, judge=judge,
                                   allow_truncated=allow_truncated, force=force))
    for m in cfg.models:
        results.append(evaluate_stage(factory, probes_path=cfg.filtered_path,
                                      manifest_path=cfg.manifest_path, endpoint=m.endpoint,
                                      label=m.label, out=cfg.results_path(m.label), judge=judge,
                                      strict=cfg.strict, allow_truncated=allow_truncated,
                                      force=force))
    return RunSummary(results, sum(r.calls for r in results))
