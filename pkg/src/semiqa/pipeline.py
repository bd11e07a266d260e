"""Match -> plan -> agent wiring for a single question."""
from __future__ import annotations

from .agent import Agent, AgentConfig, AgentOutcome
from .embeddings import EmbeddingIndex, EmbeddingProvider, index_for
from .graph import DEFAULT_MAX_LEN, SemiStructuredGraph
from .llm import Backend
from .matcher import DEFAULT_K, MatchResult, Question, QuestionLike, as_question, hybrid_match
from .planner import DEFAULT_N_PATHS, Plan, PathModel, make_plan


class Pipeline:
    """Answers questions over one graph; safe to call from several threads."""

    def __init__(
        self,
        g: SemiStructuredGraph,
        provider: EmbeddingProvider,
        backend: Backend,
        agent_config: AgentConfig | None = None,
        path_model: PathModel | None = None,
        match_k: int = DEFAULT_K,
        n_paths: int = DEFAULT_N_PATHS,
        max_len: int = DEFAULT_MAX_LEN,
        index: EmbeddingIndex | None = None,
    ):
        self.g = g
        self.provider = provider
        self.path_model = path_model
        self.match_k = match_k
        self.n_paths = n_paths
        self.max_len = max_len
        self._index = index
        self.agent = Agent(g, backend, agent_config, provider, index)

    @property
    def index(self) -> EmbeddingIndex:
        if self._index is None:
            self._index = index_for(self.g, self.provider)
        return self._index

    def match(self, q: QuestionLike) -> MatchResult:
        return hybrid_match(q, self.g, self.provider, self.match_k, self._index)

    def plan(self, q: QuestionLike) -> Plan:
        q = as_question(q)
        seeds = self.match(q).ids
        if self.path_model is None:
            return Plan(tuple(seeds))
        return make_plan(q.text, seeds, self.path_model, self.n_paths)

    def answer(self, q: QuestionLike, plan: Plan | None = None) -> AgentOutcome:
        q = as_question(q)
        return self.agent.run(q, plan if plan is not None else self.plan(q))

    def __call__(self, q) -> AgentOutcome:
        # accepts EvalQuestion as well as Question/str
        if hasattr(q, "gold"):
            q = Question(q.id, q.text)
        return self.answer(q)
