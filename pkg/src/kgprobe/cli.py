"""kgprobe command line."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .graph import BudgetError, ExpansionBudget
from .pipeline import (
    ConfigError,
    EndpointFactory,
    RunConfig,
    StageError,
    build_graph_stage,
    dump_json,
    evaluate_stage,
    gen_probes_stage,
    load_graph,
    load_results,
    prefilter_stage,
    read_json,
    require_complete,
    run_pipeline,
    write_json,
)
from .schemas import SCHEMAS
from .scorer import compare_markdown, scores_from_percent

EXIT_STAGE_FAILED = 2
EXIT_TRUNCATED = 3


def _budget(args) -> ExpansionBudget:
    return ExpansionBudget(b0=args.b0, alpha=args.alpha, d_max=args.dmax, k=args.k,
                           relevance_threshold=getattr(args, "threshold", 6))


def _budget_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--b0", type=int, required=True, help="branching at depth 0")
    p.add_argument("--alpha", type=float, required=True, help="per-level decay in (0, 1)")
    p.add_argument("--dmax", type=int, required=True, help="maximum expansion depth")
    p.add_argument("--k", type=int, default=3, help="model calls per node expansion")


def _endpoint_args(p: argparse.ArgumentParser, name: str = "--endpoint", required: bool = True) -> None:
    p.add_argument(name, required=required,
                   help="http(s)://server/v1 or synthetic:<world.json>[?profile=<profile.json>]")
    p.add_argument("--model", help="model id for remote endpoints")
    p.add_argument("--max-in-flight", type=int, default=4)
    p.add_argument("--cache-dir", type=Path)


def _factory(args) -> EndpointFactory:
    return EndpointFactory(args.model, args.max_in_flight, args.cache_dir)


def cmd_estimate(args) -> int:
    b = _budget(args)
    print(dump_json({
        "n_total": b.n_total(), "a_total": b.a_total(), "node_cap": b.node_cap(),
        "call_cap": b.call_cap(), "level_widths": [b.level_width(i) for i in range(b.d_max + 1)],
    }), end="")
    return 0


def _finish(results) -> int:
    code = 0
    for r in results:
        state = "skipped (up to date)" if r.skipped else f"calls={r.calls}"
        print(f"{r.stage}: {', '.join(str(o) for o in r.outputs)} {state}", file=sys.stderr)
        if r.truncated:
            print(f"stage {r.stage} produced a truncated artifact", file=sys.stderr)
            code = EXIT_TRUNCATED
    return code


def cmd_build_graph(args) -> int:
    res = build_graph_stage(_factory(args), seeds=args.seed, budget=_budget(args), target=args.endpoint,
                            out=args.out, extractor=args.extractor, judge=args.judge,
                            forget_threshold=args.forget_threshold, force=args.force)
    return _finish([res])


def cmd_gen_probes(args) -> int:
    res = gen_probes_stage(graph_path=args.graph, out=args.out, max_hops=args.max_hops, top_m=args.top_m,
                           alias_kinds=args.alias_kinds, decompose_kinds=args.decompose_kinds,
                           allow_truncated=args.allow_truncated, force=args.force)
    return _finish([res])


def cmd_prefilter(args) -> int:
    res = prefilter_stage(_factory(args), graph_path=args.graph, probes_path=args.probes,
                          target=args.endpoint, out=args.out, manifest_out=args.manifest,
                          per_kind=args.per_kind, sample_seed=args.sample_seed, judge=args.judge,
                          allow_truncated=args.allow_truncated, force=args.force)
    return _finish([res])


def cmd_evaluate(args) -> int:
    res = evaluate_stage(_factory(args), probes_path=args.probes, manifest_path=args.manifest,
                         endpoint=args.endpoint, label=args.label or args.endpoint, out=args.out,
                         judge=args.judge, strict=args.strict, allow_truncated=args.allow_truncated,
                         force=args.force)
    return _finish([res])


def cmd_score(args) -> int:
    if args.acc:
        f, r, o = scores_from_percent(args.acc)
        label = "accuracies"
    else:
        rep = load_results(args.results)
        if rep.forget_score is None or rep.retain_score is None:
            raise StageError("score", "results lack a forget or retain component")
        f, r, o = 100 * rep.forget_score, 100 * rep.retain_score, 100 * rep.overall
        label = rep.model_label
    print(f"{label}: forget={f:.1f} retain={r:.1f} overall={o:.1f}")
    return 0


def cmd_compare(args) -> int:
    reports = [load_results(p) for p in args.results]
    print(compare_markdown(reports, args.reference), end="")
    return 0


def cmd_coverage(args) -> int:
    from .coverage import RelationMatcher, coverage, coverage_curve, extract_keys, load_benchmark

    for g in args.graph:
        require_complete("coverage", g, args.allow_truncated)
    bench = load_benchmark(args.benchmark, args.layout)
    factory = _factory(args)
    extractor = factory(args.extractor)
    synonyms = json.loads(Path(args.synonyms).read_text()) if args.synonyms else ()
    matcher = RelationMatcher(synonyms, judge=factory(args.relation_judge) if args.relation_judge else None)
    keys = extract_keys(extractor, bench)
    graphs = [load_graph(g) for g in args.graph]
    rep = coverage(max(graphs, key=lambda g: len(g.nodes)), bench, keys=keys, matcher=matcher)
    if len(graphs) > 1:
        rep.curve = coverage_curve(graphs, bench, keys=keys, matcher=matcher)
    data = rep.to_dict()
    data["meta"] = {"stage": "coverage", "inputs_hash": "", "truncated": False}
    if args.out:
        write_json(args.out, data)
    print(f"coverage {rep.matched}/{rep.total} = {rep.coverage:.3f} (unmatchable {rep.unmatchable})")
    return 0


def cmd_simulate(args) -> int:
    from .world import ForgettingProfile, SyntheticModel, WorldSpec, expected_scores

    world = WorldSpec.load(args.world)
    profile = ForgettingProfile.load(args.profile) if args.profile else None
    if args.expected:
        if not (args.probes and args.manifest and args.graph):
            raise StageError("simulate", "--expected needs --graph, --probes and --manifest")
        from .probes import read_probes

        rep = expected_scores(world, profile, read_probes(args.probes), load_graph(args.graph),
                              manifest=read_json(args.manifest), label=args.label)
        print(dump_json({k: v for k, v in rep.to_dict().items() if k != "graded"}), end="")
        return 0
    model = SyntheticModel(world, profile)
    prompts = [args.prompt] if args.prompt else [line.rstrip("\n") for line in sys.stdin if line.strip()]
    for p in prompts:
        print(model.answer(p))
    return 0


def cmd_run(args) -> int:
    cfg = RunConfig.load(args.config)
    summary = run_pipeline(cfg, allow_truncated=args.allow_truncated, force=args.force)
    code = _finish(summary.stages)
    print(f"total model calls: {summary.calls}", file=sys.stderr)
    return code


class _SchemaAction(argparse.Action):
    def __init__(self, option_strings, dest, **kw):
        super().__init__(option_strings, dest, nargs=0, **kw)

    def __call__(self, parser, namespace, values, option_string=None):
        print(dump_json(SCHEMAS), end="")
        parser.exit()


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kgprobe", description="Knowledge-graph probes for unlearning evaluation")
    ap.add_argument("--version", action="version", version=f"kgprobe {__version__}")
    ap.add_argument("--schema", action=_SchemaAction, help="print JSON schemas for all artifacts")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="node and call totals for a budget")
    _budget_args(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("build-graph", help="grow a knowledge graph from a model")
    p.add_argument("--seed", action="append", required=True)
    _budget_args(p)
    p.add_argument("--threshold", type=int, default=6, help="relevance cutoff (0-10)")
    p.add_argument("--forget-threshold", type=int, default=9)
    _endpoint_args(p)
    p.add_argument("--extractor", help="separate endpoint for triplet extraction")
    p.add_argument("--judge", help="separate endpoint for relevance and alias checks")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("gen-probes", help="generate probe suites from a graph")
    p.add_argument("--graph", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--max-hops", type=int, default=3)
    p.add_argument("--top-m", type=int, default=5)
    p.add_argument("--alias-kinds", nargs="*", default=["forget_2hop"])
    p.add_argument("--decompose-kinds", nargs="*", default=["forget_2hop"])
    p.add_argument("--allow-truncated", action="store_true")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_probes)

    p = sub.add_parser("prefilter", help="keep probes the pre-unlearning model answers, then sample")
    p.add_argument("--graph", type=Path, required=True)
    p.add_argument("--probes", type=Path, required=True)
    _endpoint_args(p)
    p.add_argument("--judge")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--per-kind", type=int, default=100)
    p.add_argument("--sample-seed", type=int, default=0)
    p.add_argument("--allow-truncated", action="store_true")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_prefilter)

    p = sub.add_parser("evaluate", help="score a post-unlearning model on a sampled suite")
    p.add_argument("--probes", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    _endpoint_args(p)
    p.add_argument("--label")
    p.add_argument("--judge")
    p.add_argument("--strict", action="store_true")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--allow-truncated", action="store_true")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("score", help="forget, retain and overall scores")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--results", type=Path)
    g.add_argument("--acc", type=float, nargs=6, metavar="PCT",
                   help="1-hop 2-hop 3-hop 1-away 2-away relation accuracies in percent")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("compare", help="markdown table over several results files")
    p.add_argument("results", type=Path, nargs="+")
    p.add_argument("--reference", type=float, nargs="+",
                   help="reference forget scores (same order) for a rank correlation")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("coverage", help="benchmark coverage of one or more graphs")
    p.add_argument("--graph", type=Path, action="append", required=True)
    p.add_argument("--benchmark", type=Path, required=True)
    p.add_argument("--layout", choices=["generic", "cloze", "qa"])
    _endpoint_args(p, "--extractor")
    p.add_argument("--synonyms", type=Path, help="JSON list of relation synonym groups")
    p.add_argument("--relation-judge", help="endpoint asked whether two relations match")
    p.add_argument("--out", type=Path)
    p.add_argument("--allow-truncated", action="store_true")
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("simulate", help="answer prompts with a synthetic world, or print expected scores")
    p.add_argument("--world", type=Path, required=True)
    p.add_argument("--profile", type=Path)
    p.add_argument("--prompt")
    p.add_argument("--expected", action="store_true")
    p.add_argument("--graph", type=Path)
    p.add_argument("--probes", type=Path)
    p.add_argument("--manifest", type=Path)
    p.add_argument("--label", default="expected")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="run every stage from a TOML config")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--allow-truncated", action="store_true")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_run)
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE_FAILED
    except (ConfigError, BudgetError) as exc:
        print(f"error: stage config failed: {exc}", file=sys.stderr)
        return EXIT_STAGE_FAILED
    except (OSError, ValueError) as exc:
        print(f"error: stage {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_STAGE_FAILED


if __name__ == "__main__":
    sys.exit(main())
