"""Knowledge-graph driven probing of unlearned language models."""
from __future__ import annotations

__version__ = "0.1.0"

from .graph import ExpansionBudget, EntityNode, FactTriplet, Hop, KnowledgeGraph, estimate_totals, level_width, paths_from_seed  # noqa: E402
from .scorer import ScoreReport, grade, spearman  # noqa: E402

__all__ = [
    "ExpansionBudget", "EntityNode", "FactTriplet", "Hop", "KnowledgeGraph", "estimate_totals",
    "level_width", "paths_from_seed", "ScoreReport", "grade", "spearman", "__version__",
]
