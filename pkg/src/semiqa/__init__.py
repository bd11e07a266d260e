"""Plan-assisted question answering over semi-structured (text + relational) graphs."""

from .agent import Agent, AgentConfig, AgentOutcome
from .graph import (
    TEXT,
    Edge,
    GraphError,
    Node,
    RelationPath,
    SemiStructuredGraph,
    graph_stats,
    load_graph,
    neighbors,
    reachable_set,
    shortest_relation_paths,
)
from .matcher import Question, hybrid_match, keyword_match, similarity_match
from .pipeline import Pipeline
from .planner import Plan, PlanTarget, answer_distribution, kl_loss, p_semi, target_distribution

__version__ = "0.1.0"

__all__ = [
    "TEXT",
    "Agent",
    "AgentConfig",
    "AgentOutcome",
    "Edge",
    "GraphError",
    "Node",
    "Pipeline",
    "Plan",
    "PlanTarget",
    "Question",
    "RelationPath",
    "SemiStructuredGraph",
    "answer_distribution",
    "graph_stats",
    "hybrid_match",
    "keyword_match",
    "kl_loss",
    "load_graph",
    "neighbors",
    "p_semi",
    "reachable_set",
    "shortest_relation_paths",
    "similarity_match",
    "target_distribution",
]
