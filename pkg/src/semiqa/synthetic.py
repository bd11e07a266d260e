"""Synthetic graphs, benchmarks and scripted agents for offline experiments and tests."""
from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass

from .agent import AgentConfig, AgentOutcome
from .embeddings import EmbeddingProvider
from .evaluation import EvalQuestion
from .graph import INVERSE_PREFIX, Node, RelationPath, SemiStructuredGraph, build_graph
from .llm import ChatRequest
from .matcher import Question, hybrid_match, tokens
from .pipeline import Pipeline
from .planner import OraclePathModel, Plan, target_distribution

AWP = "author_writes_paper"
AFFILIATED = "affiliated"


def g0() -> SemiStructuredGraph:
    """Four-node author/paper/institution graph used throughout the tests."""
    return build_graph(
        [
            Node("A", "author", "Ada", "Ada is an author working on graph algorithms."),
            Node("P1", "paper", "Graph Search Methods", "A paper on breadth-first graph search."),
            Node("P2", "paper", "Text Retrieval at Scale", "A paper on dense text retrieval."),
            Node("I1", "institution", "Analytical Engines Institute", "A research institution."),
        ],
        [("A", AWP, "P1"), ("A", AWP, "P2"), ("A", AFFILIATED, "I1")],
    )


_SYLLABLES = ["ka", "lo", "mi", "zu", "te", "ri", "no", "va", "shi", "pe", "do", "ga", "xu", "be", "fo", "ny"]


def pseudo_words(rng: random.Random, n: int) -> list[str]:
    words: dict[str, None] = {}
    while len(words) < n:
        words.setdefault("".join(rng.choice(_SYLLABLES) for _ in range(rng.randint(3, 4))))
    return list(words)


def random_graph(
    rng: random.Random,
    n_nodes: int = 20,
    n_relations: int = 3,
    n_edges: int = 40,
    max_fanout: int | None = None,
    node_types: tuple[str, ...] = ("author", "paper", "venue", "topic"),
) -> SemiStructuredGraph:
    """Random typed multigraph with unique two-token names ``"<type> <word>"``.

    ``max_fanout`` bounds how many edges of one relation leave or enter a node.
    """
    words = pseudo_words(rng, 2 * n_nodes)
    relations = [f"rel{i}" for i in range(n_relations)]
    nodes = []
    for i in range(n_nodes):
        t = rng.choice(node_types)
        nodes.append(Node(f"n{i:03d}", t, f"{t} {words[i]}", f"{t} {words[i]} concerns {words[n_nodes + i]}."))
    out_deg: dict[tuple[str, str], int] = {}
    in_deg: dict[tuple[str, str], int] = {}
    edges: list[tuple[str, str, str]] = []
    seen = set()
    attempts = 0
    while len(edges) < n_edges and attempts < 50 * n_edges:
        attempts += 1
        u, v = rng.sample(range(n_nodes), 2) if n_nodes > 1 else (0, 0)
        r = rng.choice(relations)
        e = (nodes[u].id, r, nodes[v].id)
        if e in seen:
            continue
        if max_fanout is not None and (
            out_deg.get((e[0], r), 0) >= max_fanout or in_deg.get((e[2], r), 0) >= max_fanout
        ):
            continue
        seen.add(e)
        edges.append(e)
        out_deg[e[0], r] = out_deg.get((e[0], r), 0) + 1
        in_deg[e[2], r] = in_deg.get((e[2], r), 0) + 1
    return build_graph(nodes, edges)


def random_walk(rng: random.Random, g: SemiStructuredGraph, start: str, length: int) -> list[str]:
    path = [start]
    for _ in range(length):
        options = list(g.labelled_neighbors(path[-1]))
        if not options:
            break
        path.append(rng.choice(options)[1])
    return path


@dataclass
class BenchmarkItem:
    graph: SemiStructuredGraph
    question: EvalQuestion
    seed: str


def oracle_benchmark(
    rng: random.Random,
    n_questions: int = 100,
    questions_per_graph: int = 5,
    max_hops: int = 2,
    max_fanout: int = 3,
) -> list[BenchmarkItem]:
    """Questions whose gold node lies within ``max_hops`` of a named topic node.

    The question names the topic node verbatim and mentions the gold node's
    distinguishing word, so a reader following the right relations can pick it.
    """
    items: list[BenchmarkItem] = []
    while len(items) < n_questions:
        g = random_graph(
            rng,
            n_nodes=rng.randint(15, 40),
            n_relations=rng.randint(2, 4),
            n_edges=rng.randint(25, 60),
            max_fanout=max_fanout,
        )
        ids = list(g.nodes)
        made = 0
        tries = 0
        while made < questions_per_graph and len(items) < n_questions and tries < 200:
            tries += 1
            seed = rng.choice(ids)
            walk = random_walk(rng, g, seed, rng.randint(1, max_hops))
            gold = walk[-1]
            if gold == seed:
                continue
            gnode, snode = g.nodes[gold], g.nodes[seed]
            word = gnode.name.split()[-1]
            text = f"Find the {gnode.node_type} connected to {snode.name} that mentions {word}."
            q = EvalQuestion(f"q{len(items):03d}", text, frozenset({gold}))
            items.append(BenchmarkItem(g, q, seed))
            made += 1
    return items


def answer_with_oracle_plan(
    item: BenchmarkItem, provider: EmbeddingProvider, config: AgentConfig | None = None
) -> AgentOutcome:
    """Run the full pipeline with the target paths as the plan and a plan-following agent."""
    q = item.question
    seeds = hybrid_match(q.text, item.graph, provider).ids
    target = target_distribution(q.text, q.gold, item.graph, seeds, question_id=q.id)
    backend = PlanFollowingBackend(target.paths[0])
    pipe = Pipeline(item.graph, provider, backend, config, OraclePathModel([target]))
    return pipe(Question(q.id, q.text))


_OBS = re.compile(r"^Observation (\d+): (.*?)(?=^Thought \d+:|\Z)", re.M | re.S)


def _section(prompt: str) -> tuple[str, list[str], str]:
    q = re.findall(r"^Question: (.*)$", prompt, re.M)[-1]
    topics = re.findall(r"^Topic Node: \[(.*)\]$", prompt, re.M)[-1]
    tail = prompt[prompt.rindex("Topic Node: ["):]
    return q, [t for t in topics.split(" | ") if t], tail


class PlanFollowingBackend:
    """Scripted agent that searches along one relation path, then answers.

    Round i searches the nodes reached after i hops; once the path is used up
    it finishes with the reached node whose name shares most words with the
    question (topic nodes excluded). Stateless: everything is re-derived from
    the prompt, so replies depend on the prompt alone.
    """

    def __init__(self, path: RelationPath):
        self.path = list(path)
        self.calls = 0

    def complete(self, req: ChatRequest) -> str:
        self.calls += 1
        prompt = req.messages[0][1]
        question, topics, tail = _section(prompt)
        observations = [body.strip() for _, body in _OBS.findall(tail)]
        current = list(topics)
        for hop, body in zip(self.path, observations):
            current = _follow(body, hop, current)
        n = len(observations) + 1
        if len(observations) < len(self.path) and current:
            hop = self.path[len(observations)]
            return f"Thought {n}: I follow {hop} from the current nodes.\nAction {n}: Search[{chr(9).join(current)}]"
        qtok = set(tokens(question))
        candidates = [c for c in current if c not in topics]
        if not candidates:
            return f"Thought {n}: Nothing relevant was found.\nAction {n}: Finish[unknown]"
        best = max(candidates, key=lambda c: (len(qtok & set(tokens(c))), -candidates.index(c)))
        return f"Thought {n}: {best} matches the question.\nAction {n}: Finish[{best}]"


def _follow(observation: str, hop: str, current: list[str]) -> list[str]:
    inverse = hop.startswith(INVERSE_PREFIX)
    rel = hop[len(INVERSE_PREFIX):] if inverse else hop
    sep = f", {rel}, "
    cur = set(current)
    reached: dict[str, None] = {}
    for line in observation.splitlines():
        line = line.strip()
        if not (line.startswith("(") and line.endswith(")")) or sep not in line:
            continue
        head, tail = line[1:-1].split(sep, 1)
        if inverse and tail in cur:
            reached.setdefault(head)
        elif not inverse and head in cur:
            reached.setdefault(tail)
    return list(reached)


class ChaosBackend:
    """Deterministic pseudo-random agent for invariant fuzzing.

    The reply is a function of the prompt and seed only. It mixes valid
    actions over names it has seen, malformed replies and pruning answers.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.calls = 0

    def complete(self, req: ChatRequest) -> str:
        self.calls += 1
        text = req.rendered
        rng = random.Random(hashlib.sha256(f"{self.seed}\n{text}".encode()).digest())
        if "Select the triples" in text:
            n = len(re.findall(r"^\d+\. ", text, re.M))
            return ", ".join(str(rng.randint(1, max(n, 1))) for _ in range(rng.randint(0, 6)))
        names = re.findall(r"^Topic Node: \[(.*)\]$", text, re.M)[-1].split(" | ")
        names += re.findall(r"^\((.*?), \w+, ", text, re.M)
        names += re.findall(r", \w+, (.*)\)$", text, re.M)
        names = [n for n in names if n] or ["nobody"]
        roll = rng.random()
        n = text.count("\nObservation ") + 1
        if roll < 0.1:
            return "I am not sure what to do."
        if roll < 0.15:
            return f"Thought {n}: hmm\nAction {n}: Lookup[{rng.choice(names)}]"
        if roll < 0.65:
            picks = rng.sample(names, min(len(names), rng.randint(1, 3)))
            return f"Thought {n}: expand\nAction {n}: Search[{chr(9).join(picks)}]"
        if roll < 0.8:
            return f"Thought {n}: look up text\nAction {n}: Query[{rng.choice(names)}]"
        if roll < 0.9:
            return f"Thought {n}: done\nAction {n}: Finish[{rng.choice(names)}]"
        return f"Thought {n}: give up\nAction {n}: Finish[unknown]"


# --------------------------------------------------------------------------- MAG case study

FRIEDRICH_QUESTION = (
    "Show me publications by Th. Friedrich on high heat flux experiments with divertor components."
)
HHF_TITLE = (
    "Results and consequences of high heat flux testing as quality assessment of the Wendelstein 7-X divertor"
)
DESIGN_TITLE = "Design improvement of the target elements of Wendelstein 7-X divertor"
WRITES = "author___writes___paper"
CITES = "paper___cites___paper"
HAS_TOPIC = "paper___has_topic___field_of_study"
AFFILIATED_WITH = "author___affiliated_with___institution"


def case_study_graph() -> SemiStructuredGraph:
    """Small academic graph around the Wendelstein 7-X divertor papers."""
    nodes = [
        Node("a1", "author", "Th. Friedrich", "Author of papers on plasma-facing components."),
        Node("a2", "author", "J. Boscary", "Author working on divertor target elements."),
        Node("a3", "author", "Mira Okafor", "Author working on graph neural networks."),
        Node("a4", "author", "Lena Haas", "Author working on superconducting magnets."),
        Node("p1", "paper", DESIGN_TITLE, "Describes design changes to the target elements of the divertor."),
        Node("p2", "paper", HHF_TITLE, "High heat flux tests of pre-series divertor target elements are reported."),
        Node("p3", "paper", "Thermal fatigue of tungsten monoblocks", "Cyclic high heat flux loading of tungsten."),
        Node("p4", "paper", "Message passing on heterogeneous graphs", "A study of relational graph networks."),
        Node("p5", "paper", "Quench detection in large coils", "Protection of superconducting coils."),
        Node("i1", "institution", "Max Planck Institute for Plasma Physics", "Research institute in Garching."),
        Node("i2", "institution", "Technical University of Munich", "University in Munich."),
        Node("f1", "field_of_study", "Nuclear engineering", "Engineering of fusion and fission devices."),
        Node("f2", "field_of_study", "Machine learning", "Statistical learning from data."),
        Node("f3", "field_of_study", "Plasma physics", "Physics of ionized gases."),
    ]
    edges = [
        ("a1", WRITES, "p1"),
        ("a1", WRITES, "p2"),
        ("a2", WRITES, "p1"),
        ("a2", WRITES, "p3"),
        ("a3", WRITES, "p4"),
        ("a4", WRITES, "p5"),
        ("a2", AFFILIATED_WITH, "i1"),
        ("a3", AFFILIATED_WITH, "i2"),
        ("a4", AFFILIATED_WITH, "i1"),
        ("p2", CITES, "p1"),
        ("p3", CITES, "p2"),
        ("p5", CITES, "p3"),
        ("p1", HAS_TOPIC, "f1"),
        ("p2", HAS_TOPIC, "f1"),
        ("p3", HAS_TOPIC, "f3"),
        ("p4", HAS_TOPIC, "f2"),
        ("p5", HAS_TOPIC, "f3"),
    ]
    return build_graph(nodes, edges)


def case_study_plan() -> Plan:
    return Plan(("a1",), ((RelationPath([WRITES]), 1.0),))


THOUGHT_1 = "Th. Friedrich is the only topic node, so expand the papers this author wrote."
THOUGHT_2 = "One of the two papers is about heat flux testing of the divertor, which fits the question."


def case_study_rules() -> list[tuple[str, str]]:
    """Scripted replies reproducing the two-round case-study trace."""
    return [
        ("Observation 1:", f"Thought 2: {THOUGHT_2}\nAction 2: Finish[{HHF_TITLE}]"),
        ("Topic Node: [Th. Friedrich]", f"Thought 1: {THOUGHT_1}\nAction 1: Search[Th. Friedrich]"),
    ]


def case_study_training_questions() -> list[EvalQuestion]:
    """A few labelled questions over the case-study graph for planner fitting."""
    qs = [
        ("t1", "Show me publications by J. Boscary on divertor target design.", {"p1"}),
        ("t2", "List papers written by Mira Okafor about relational learning.", {"p4"}),
        ("t3", "Show me publications by Lena Haas on coil protection.", {"p5"}),
        ("t4", "Which institution is J. Boscary affiliated with?", {"i1"}),
        ("t5", "Which institution is Mira Okafor affiliated with?", {"i2"}),
        ("t6", "Show me publications by J. Boscary on tungsten fatigue.", {"p3"}),
        ("t7", "Papers that cite Thermal fatigue of tungsten monoblocks.", {"p5"}),
        ("t8", "Find publications by Lena Haas about quench detection.", {"p5"}),
    ]
    out = [EvalQuestion(i, t, frozenset(g), "train") for i, t, g in qs]
    out.append(EvalQuestion("q1", FRIEDRICH_QUESTION, frozenset({"p2"}), "test"))
    return out
