"""JSON schemas for every artifact the command line reads or writes."""
from __future__ import annotations

_META = {
    "type": "object",
    "required": ["stage", "inputs_hash", "truncated"],
    "properties": {
        "stage": {"type": "string"},
        "inputs_hash": {"type": "string"},
        "truncated": {"type": "boolean"},
    },
}

_BUDGET = {
    "type": "object",
    "required": ["b0", "alpha", "d_max", "k", "relevance_threshold"],
    "properties": {
        "b0": {"type": "integer", "minimum": 1},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "d_max": {"type": "integer", "minimum": 0},
        "k": {"type": "integer", "minimum": 1},
        "relevance_threshold": {"type": "integer", "minimum": 0, "maximum": 10},
    },
}

GRAPH = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "graph",
    "type": "object",
    "required": ["seeds", "nodes", "edges", "budget", "calls_used"],
    "properties": {
        "seeds": {"type": "array", "minItems": 1, "items": {"type": "string"}},
        "nodes": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "canonical_name", "aliases", "depth", "relevance"],
                "properties": {
                    "id": {"type": "string"},
                    "canonical_name": {"type": "string", "minLength": 1},
                    "aliases": {"type": "array", "minItems": 1, "items": {"type": "string"}},
                    "depth": {"type": "integer", "minimum": 0},
                    "relevance": {"type": "integer", "minimum": 0, "maximum": 10},
                    "discovery_index": {"type": "integer", "minimum": 0},
                },
            },
        },
        "edges": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["subject", "relation", "object", "expected_forget", "provenance"],
                "properties": {
                    "id": {"type": "string"},
                    "subject": {"type": "string"},
                    "relation": {"type": "string", "minLength": 1},
                    "object": {"type": "string"},
                    "expected_forget": {"type": "boolean"},
                    "provenance": {"type": "string"},
                    "relevance": {"type": "integer", "minimum": 0, "maximum": 10},
                },
            },
        },
        "budget": _BUDGET,
        "calls_used": {"type": "integer", "minimum": 0},
        "truncated": {"type": "boolean"},
        "redirects": {"type": "object", "additionalProperties": {"type": "string"}},
        "meta": _META,
    },
}

KINDS = ["forget_1hop", "forget_2hop", "forget_3hop", "forget_alias", "forget_decomposed",
         "retain_1away", "retain_2away", "retain_relation"]

PROBE = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "probe (one JSONL line)",
    "type": "object",
    "required": ["id", "kind", "question", "expected", "path", "answer_node", "prefilter_passed"],
    "properties": {
        "id": {"type": "string"},
        "kind": {"enum": KINDS},
        "question": {"type": "string", "minLength": 1},
        "expected": {"type": "array", "minItems": 1, "items": {"type": "string"}},
        "path": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "array", "prefixItems": [{"type": "string"}, {"type": "boolean"}],
                      "minItems": 2, "maxItems": 2},
        },
        "answer_node": {"type": "string"},
        "prefilter_passed": {"type": ["boolean", "null"]},
        "distance": {"type": "integer", "minimum": 0},
        "base_id": {"type": "string"},
    },
}

MANIFEST = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "manifest",
    "type": "object",
    "required": ["graph_hash", "kinds", "sample_seed", "per_kind"],
    "properties": {
        "graph_hash": {"type": "string"},
        "kinds": {"type": "object", "additionalProperties": {"type": "array", "items": {"type": "string"}}},
        "sample_seed": {"type": "integer"},
        "per_kind": {"type": "integer", "minimum": 1},
        "shortfall": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 1}},
        "meta": _META,
    },
}

_SCORE = {"type": ["number", "null"], "minimum": 0, "maximum": 1}

RESULTS = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "results",
    "type": "object",
    "required": ["model_label", "graph_hash", "manifest_hash", "acc", "F", "R", "overall",
                 "n_per_kind", "graded"],
    "properties": {
        "model_label": {"type": "string"},
        "graph_hash": {"type": "string"},
        "manifest_hash": {"type": "string"},
        "acc": {"type": "object", "additionalProperties": {"type": "number", "minimum": 0, "maximum": 1}},
        "F": _SCORE,
        "R": _SCORE,
        "overall": _SCORE,
        "n_per_kind": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 1}},
        "graded": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["probe_id", "raw_answer", "correct", "grader"],
                "properties": {
                    "probe_id": {"type": "string"},
                    "raw_answer": {"type": "string"},
                    "correct": {"type": "boolean"},
                    "grader": {"enum": ["string_match", "judge"]},
                    "judge_failed": {"type": "boolean"},
                },
            },
        },
        "meta": _META,
    },
}

COVERAGE = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "coverage",
    "type": "object",
    "required": ["total", "matched", "coverage"],
    "properties": {
        "total": {"type": "integer", "minimum": 0},
        "matched": {"type": "integer", "minimum": 0},
        "unmatched": {"type": "integer", "minimum": 0},
        "unmatchable": {"type": "integer", "minimum": 0},
        "coverage": {"type": "number", "minimum": 0, "maximum": 1},
        "details": {"type": "array"},
        "curve": {"type": "array", "items": {"type": "array", "minItems": 2, "maxItems": 2}},
        "meta": _META,
    },
}

WORLD = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "synthetic world",
    "type": "object",
    "required": ["facts", "seeds"],
    "properties": {
        "facts": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["subject", "relation", "object"],
                "properties": {
                    "id": {"type": "string"},
                    "subject": {"type": "string"},
                    "relation": {"type": "string"},
                    "object": {"type": "string"},
                    "generic": {"type": "boolean"},
                },
            },
        },
        "aliases": {"type": "array", "items": {"type": "array", "minItems": 2, "items": {"type": "string"}}},
        "seeds": {"type": "array", "minItems": 1, "items": {"type": "string"}},
        "ignorance": {"type": "array", "items": {"type": "string"}},
    },
}

_PROB = {"type": "number", "minimum": 0, "maximum": 1}

PROFILE = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "forgetting profile",
    "type": "object",
    "properties": {
        "forget_entities": {"type": "array", "items": {"type": "string"}},
        "p_block_by_hops": {"type": "object", "additionalProperties": _PROB},
        "collateral_radius": {"type": "integer", "minimum": 0},
        "p_collateral": {"oneOf": [_PROB, {"type": "object", "additionalProperties": _PROB}]},
        "rng_seed": {"type": "integer"},
    },
}

SCHEMAS = {
    "graph": GRAPH,
    "probe": PROBE,
    "manifest": MANIFEST,
    "results": RESULTS,
    "coverage": COVERAGE,
    "world": WORLD,
    "profile": PROFILE,
}
