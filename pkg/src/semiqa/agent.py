"""Graph-traversing agent: Thought -> Action -> Observation rounds over the graph."""
from __future__ import annotations

import json
import logging
import re
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Literal, NamedTuple, Union

from .embeddings import EmbeddingIndex, EmbeddingProvider, embed_text, index_for
from .graph import INVERSE_PREFIX, Edge, SemiStructuredGraph, neighbors
from .llm import Backend, BackendError, ChatRequest
from .matcher import Question, QuestionLike, as_question, name_index, tokens
from .planner import Plan

log = logging.getLogger(__name__)

INSTRUCTIONS = """Solve a question answering task with interleaving Thought, Action, Observation steps. Thought can reason about the current situation, and Action can be three types:
(1) Search[node1 | node2 | ...], which searches the exact nodes on the knowledge graph and returns their one-hop subgraphs. You should extract the all concrete nodes appeared in your last thought without redundant words, and you should always select nodes from topic nodes in the first search.
(2) Query[question], which finds the most related node of the given question based on text embedding similarity.
(3) Finish[answer1 | answer2 | ...], which returns the answer and finishes the task. The answers should be complete node name appeared in the triples. If you don't know the answer, please output Finish[unknown].
Nodes and answers should be separated by tab.
You should generate each step without redundant words."""

REPROMPT = (
    "Your reply had no valid action. Reply with one 'Thought n: ...' line and one 'Action n: ...' line "
    "using Search[...], Query[...] or Finish[...]."
)
QUERY_RELATION = "matches_query"
QUERY_PREFIX = "query:"
NO_TRIPLES = "no triples found"
MALFORMED = "malformed action"

PruneMode = Literal["llm", "plan_first", "score"]


@dataclass(frozen=True)
class Search:
    targets: tuple[str, ...]


@dataclass(frozen=True)
class Query:
    text: str


@dataclass(frozen=True)
class Finish:
    answers: tuple[str, ...]

    @property
    def unknown(self) -> bool:
        return not self.answers


Action = Union[Search, Query, Finish]


class ActionParseError(ValueError):
    pass


_THOUGHT = re.compile(r"^\s*Thought\s*\d*\s*:\s*(.*)$", re.M)
_ACTION = re.compile(r"^\s*Action\s*\d*\s*:\s*(.*)$", re.M)
_CALL = re.compile(r"^(\w+)\s*\[(.*)\]\s*\.?$", re.S)


def split_names(payload: str) -> list[str]:
    if "\t" in payload:
        parts = payload.split("\t")
    elif " | " in payload:
        parts = payload.split(" | ")
    else:
        parts = [payload]
    return [p.strip() for p in parts if p.strip()]


def parse_action(raw: str) -> tuple[str, Action]:
    """Return the last thought and the last action found in a model reply."""
    actions = _ACTION.findall(raw)
    if not actions:
        raise ActionParseError("no Action line")
    line = actions[-1].strip()
    m = _CALL.match(line)
    if not m:
        raise ActionParseError(f"unparseable action {line!r}")
    head, payload = m.group(1), m.group(2)
    thoughts = _THOUGHT.findall(raw)
    thought = thoughts[-1].strip() if thoughts else ""
    if head == "Query":
        if not payload.strip():
            raise ActionParseError("empty Query")
        return thought, Query(payload.strip())
    if head not in ("Search", "Finish"):
        raise ActionParseError(f"unknown action {head!r}")
    names = split_names(payload)
    if not names:
        raise ActionParseError(f"{head} without names")
    if head == "Search":
        return thought, Search(tuple(names))
    if len(names) == 1 and names[0].casefold() == "unknown":
        return thought, Finish(())
    return thought, Finish(tuple(names))


def format_action(action: Action) -> str:
    if isinstance(action, Search):
        return f"Search[{chr(9).join(action.targets)}]"
    if isinstance(action, Query):
        return f"Query[{action.text}]"
    return f"Finish[{chr(9).join(action.answers) or 'unknown'}]"


class Triplet(NamedTuple):
    head: str
    relation: str
    tail: str
    pseudo: bool = False


@dataclass
class Step:
    thought: str
    action: str
    observation: str
    elapsed_ms: float = 0.0


@dataclass
class AgentConfig:
    k: int = 5
    t: int = 5
    prune_mode: PruneMode = "score"
    snippet_chars: int = 200
    shots: str = ""
    model: str = "default"
    temperature: float = 0.0
    max_tokens: int = 256

    def __post_init__(self):
        if self.k < 1 or self.t < 1:
            raise ValueError("K and T must be >= 1")
        if self.prune_mode not in ("llm", "plan_first", "score"):
            raise ValueError(f"unknown prune mode {self.prune_mode!r}")


@dataclass
class AgentState:
    question: Question
    plan: Plan
    round: int = 0
    frontier: dict[str, None] = field(default_factory=dict)
    triplets: dict[Triplet, None] = field(default_factory=dict)
    transcript: list[Step] = field(default_factory=list)
    cursors: list[int] = field(default_factory=list)
    backend_calls: int = 0
    diagnostics: list[str] = field(default_factory=list)

    @classmethod
    def start(cls, question: Question, plan: Plan) -> "AgentState":
        return cls(question, plan, frontier=dict.fromkeys(plan.seeds), cursors=[0] * len(plan.paths))

    def observed_nodes(self) -> list[str]:
        seen: dict[str, None] = {}
        for t in self.triplets:
            if not t.pseudo:
                seen.setdefault(t.head)
            seen.setdefault(t.tail)
        return list(seen)

    def preferred_relations(self) -> list[str]:
        """Next unconsumed hop of each plan path, best-scored path first, without repeats."""
        hops = (p[c] for (p, _), c in zip(self.plan.paths, self.cursors) if c < len(p))
        return list(dict.fromkeys(hops))


@dataclass
class AgentOutcome:
    question_id: str
    answers: list[str]
    rounds_used: int
    transcript: list[Step]
    latency: float
    status: Literal["finished", "exhausted", "backend_error"]
    backend_calls: int = 0
    diagnostics: list[str] = field(default_factory=list)

    def transcript_records(self) -> list[dict]:
        return [
            {
                "question_id": self.question_id,
                "round": i + 1,
                "thought": s.thought,
                "action_raw": s.action,
                "observation": s.observation,
                "elapsed_ms": round(s.elapsed_ms, 3),
            }
            for i, s in enumerate(self.transcript)
        ]

    def write_transcript(self, fh) -> None:
        for rec in self.transcript_records():
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def _name(g: SemiStructuredGraph, nid: str) -> str:
    return g.nodes[nid].display_name


def render_prompt(q: QuestionLike, state: AgentState, g: SemiStructuredGraph, config: AgentConfig) -> str:
    q = as_question(q)
    parts = [INSTRUCTIONS]
    if config.shots:
        parts += ["Here are some examples", config.shots.strip()]
    topics = " | ".join(_name(g, s) for s in state.plan.seeds)
    parts += [f"Question: {q.text}", f"Topic Node: [{topics}]"]
    for i, step in enumerate(state.transcript, start=1):
        parts += [f"Thought {i}: {step.thought}", f"Action {i}: {step.action}", f"Observation {i}: {step.observation}"]
    return "\n".join(parts)


def resolve_finish(answers: Iterable[str], g: SemiStructuredGraph, state: AgentState | None = None) -> tuple[list[str], list[str]]:
    """Map answer names to node ids, preferring nodes already observed.

    Returns (ids, diagnostics). Names matching several observed nodes yield
    all of them in observation order.
    """
    observed = state.observed_nodes() if state else []
    resolved: dict[str, None] = {}
    problems = []
    for name in answers:
        key = tokens(name)
        hits = [n for n in observed if n in g.nodes and tokens(g.nodes[n].display_name) == key]
        if not hits:
            hits = name_index(g).lookup(name) if key else []
        if not hits and name in g.nodes:
            hits = [name]
        if not hits:
            problems.append(f"unresolved answer {name!r}")
        resolved.update(dict.fromkeys(hits))
    return list(resolved), problems


class Agent:
    """Runs the bounded agent loop for one question at a time over a shared graph."""

    def __init__(
        self,
        g: SemiStructuredGraph,
        backend: Backend,
        config: AgentConfig | None = None,
        provider: EmbeddingProvider | None = None,
        index: EmbeddingIndex | None = None,
    ):
        self.g = g
        self.backend = backend
        self.config = config or AgentConfig()
        self.provider = provider
        self._index = index

    @property
    def index(self) -> EmbeddingIndex | None:
        if self._index is None and self.provider is not None:
            self._index = index_for(self.g, self.provider)
        return self._index

    def _call(self, state: AgentState, messages: tuple[tuple[str, str], ...]) -> str:
        state.backend_calls += 1
        req = ChatRequest(
            messages=messages,
            temperature=self.config.temperature,
            max_tokens=self.config.max_tokens,
            model=self.config.model,
        )
        return self.backend.complete(req)

    def run(self, q: QuestionLike, plan: Plan, on_step: Callable[[AgentState], None] | None = None) -> AgentOutcome:
        """Answer one question; ``on_step`` sees the live state after every round."""
        q = as_question(q)
        started = time.perf_counter()
        state = AgentState.start(q, plan)
        status = "exhausted"
        answers: list[str] = []
        rounds = self.config.t
        try:
            for t in range(self.config.t):
                try:
                    state.round = t
                    step_start = time.perf_counter()
                    prompt = render_prompt(q, state, self.g, self.config)
                    raw = self._call(state, (("user", prompt),))
                    reprompted = False
                    try:
                        thought, action = parse_action(raw)
                    except ActionParseError:
                        reprompted = True
                        raw2 = self._call(state, (("user", prompt), ("assistant", raw), ("user", REPROMPT)))
                        try:
                            thought, action = parse_action(raw2)
                        except ActionParseError as exc:
                            state.diagnostics.append(f"round {t + 1}: {exc}")
                            thoughts = _THOUGHT.findall(raw2)
                            state.transcript.append(
                                Step(thoughts[-1].strip() if thoughts else "", "", MALFORMED, _ms(step_start))
                            )
                            continue
                    if isinstance(action, Finish):
                        answers, problems = resolve_finish(action.answers, self.g, state)
                        state.diagnostics += problems
                        state.transcript.append(Step(thought, format_action(action), "", _ms(step_start)))
                        status, rounds = "finished", t + 1
                        break
                    if isinstance(action, Search):
                        observation = self.exec_search(state, action.targets, allow_llm_prune=not reprompted)
                    else:
                        observation = self.exec_query(state, action.text)
                    state.transcript.append(Step(thought, format_action(action), observation, _ms(step_start)))
                finally:
                    if on_step is not None:
                        on_step(state)
        except BackendError as exc:
            log.warning("backend failure on question %s: %s", q.id, exc)
            state.diagnostics.append(f"backend error: {exc}")
            status, rounds = "backend_error", len(state.transcript) + 1
        return AgentOutcome(
            question_id=q.id,
            answers=answers,
            rounds_used=min(rounds, self.config.t),
            transcript=state.transcript,
            latency=time.perf_counter() - started,
            status=status,
            backend_calls=state.backend_calls,
            diagnostics=state.diagnostics,
        )

    # ------------------------------------------------------------------ actions

    def _resolve_target(self, state: AgentState, name: str) -> list[str]:
        key = tokens(name)
        hits = [n for n in state.frontier if tokens(_name(self.g, n)) == key]
        if not hits and key:
            hits = name_index(self.g).lookup(name)
        if not hits and name in self.g.nodes:
            hits = [name]
        return hits

    def exec_search(self, state: AgentState, targets: Iterable[str], allow_llm_prune: bool = True) -> str:
        """Expand named nodes to at most K incident triplets each, plan relations first."""
        k = self.config.k
        lines: list[str] = []
        preferred = state.preferred_relations()
        tier_of = {rel: i for i, rel in enumerate(preferred)}
        # per searched node: one tier per preferred relation in plan order, then everything else
        groups: list[tuple[str, list[list[Edge]]]] = []
        for name in targets:
            ids = self._resolve_target(state, name)
            if not ids:
                lines.append(f"unknown node {name}")
                continue
            for nid in ids:
                tiers: list[list[Edge]] = [[] for _ in range(len(preferred) + 1)]
                for e in neighbors(self.g, nid, None, "both"):
                    tiers[tier_of.get(_label(e, nid), len(preferred))].append(e)
                groups.append((nid, tiers))

        pending: list[tuple[tuple[int, int], str, list[Edge], int]] = []  # (key, searched node, candidates, slots)
        chosen: dict[tuple[int, int], list[Edge]] = {}
        for gi, (nid, tiers) in enumerate(groups):
            slots = k
            for ti, cands in enumerate(tiers):
                if not cands or not slots:
                    continue
                if len(cands) <= slots:
                    chosen[gi, ti] = list(cands)
                else:
                    pending.append(((gi, ti), nid, cands, slots))
                slots -= min(slots, len(cands))
        if pending:
            chosen.update(self._prune(state, pending, allow_llm_prune))
        kept_all: list[tuple[str, Edge]] = []
        for gi, (nid, tiers) in enumerate(groups):
            for ti in range(len(tiers)):
                kept_all.extend((nid, e) for e in chosen.get((gi, ti), ()))

        used: set[str] = set()
        for nid, e in kept_all:
            used.add(_label(e, nid))
            state.triplets.setdefault(Triplet(e.src, e.relation, e.dst))
            state.frontier.setdefault(nid)
            state.frontier.setdefault(e.dst if e.src == nid else e.src)
            lines.append(f"({_name(self.g, e.src)}, {e.relation}, {_name(self.g, e.dst)})")
        for i, ((path, _), c) in enumerate(zip(state.plan.paths, state.cursors)):
            if c < len(path) and path[c] in used:
                state.cursors[i] = c + 1
        if groups and not kept_all:
            lines.append(NO_TRIPLES)
        return "\n".join(lines) if lines else NO_TRIPLES

    def _prune(self, state: AgentState, pending, allow_llm: bool) -> dict[tuple[int, int], list[Edge]]:
        mode = self.config.prune_mode
        if mode == "llm" and allow_llm:
            picked = self._llm_prune(state, pending)
            if picked is not None:
                return picked
        out = {}
        for key, nid, cands, slots in pending:
            if mode == "score" and self.provider is not None:
                ranked = self._score_rank(state, nid, cands)
            else:
                ranked = cands
            out[key] = ranked[:slots]
        return out

    def _score_rank(self, state: AgentState, searched: str, cands: list[Edge]) -> list[Edge]:
        texts = [f"{e.relation} {_name(self.g, e.dst if e.src == searched else e.src)}" for e in cands]
        try:
            q = embed_text(self.provider, state.question.text)
            vecs = self.provider.embed(texts)
        except BackendError as exc:
            state.diagnostics.append(f"score pruning fell back to index order: {exc}")
            return cands
        ranking = EmbeddingIndex([str(i).zfill(8) for i in range(len(cands))], vecs).top_k(q, len(cands))
        return [cands[int(i)] for i, _ in ranking]

    def _llm_prune(self, state: AgentState, pending) -> dict[tuple[int, int], list[Edge]] | None:
        numbered: list[tuple[int, Edge]] = []
        lines = []
        for key, _, cands, slots in pending:
            for e in cands:
                numbered.append((key, e))
                lines.append(f"{len(numbered)}. ({_name(self.g, e.src)}, {e.relation}, {_name(self.g, e.dst)})")
        prompt = (
            f"Question: {state.question.text}\n"
            f"Select the triples most relevant to answering the question, at most {self.config.k} per searched node.\n"
            + "\n".join(lines)
            + "\nAnswer with the numbers of the selected triples separated by commas."
        )
        raw = self._call(state, (("user", prompt),))
        slots_left = {key: slots for key, _, _, slots in pending}
        out: dict[tuple[int, int], list[Edge]] = {key: [] for key, _, _, _ in pending}
        for num in dict.fromkeys(int(x) for x in re.findall(r"\d+", raw)):
            if 1 <= num <= len(numbered):
                key, e = numbered[num - 1]
                if slots_left[key] > 0:
                    out[key].append(e)
                    slots_left[key] -= 1
        if not any(out.values()):
            state.diagnostics.append("llm pruning reply unusable; index order used")
            return None
        for key, _, cands, slots in pending:
            if not out[key]:
                out[key] = cands[:slots]
        return out

    def exec_query(self, state: AgentState, text: str) -> str:
        """Top-K nodes by document similarity; each joins the frontier."""
        index = self.index
        if index is None or not len(index):
            return "query failed"
        try:
            hits = index.top_k(embed_text(self.provider, text), self.config.k)
        except BackendError as exc:
            state.diagnostics.append(f"query failed: {exc}")
            return "query failed"
        lines = []
        for nid, _ in hits:
            state.frontier.setdefault(nid)
            state.triplets.setdefault(Triplet(QUERY_PREFIX + text, QUERY_RELATION, nid, pseudo=True))
            node = self.g.nodes[nid]
            snippet = " ".join(node.text.split())[: self.config.snippet_chars]
            lines.append(f"{node.display_name}: {snippet}" if snippet else node.display_name)
        return "\n".join(lines)


def _label(e: Edge, searched: str) -> str:
    return e.relation if e.src == searched else INVERSE_PREFIX + e.relation


def _ms(start: float) -> float:
    return (time.perf_counter() - start) * 1000.0
