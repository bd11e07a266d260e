"""Relation-path planning: targets, answer marginal, KL objective, corpus and path models."""
from __future__ import annotations

import heapq
import json
import math
import os
import re
import warnings
from abc import ABC, abstractmethod
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .graph import (
    DEFAULT_MAX_LEN,
    TEXT,
    RelationPath,
    SemiStructuredGraph,
    reachable_set,
    shortest_relation_paths,
)
from .llm import Backend, ChatRequest
from .matcher import MatchResult, keyword_match, tokens

PATH_START, PATH_SEP, PATH_END = "<PATH>", "<SEP>", "</PATH>"
END = PATH_END  # stop token of the step-wise path models
PROMPT_PREFIX = "Please generate a valid relation path that can be helpful for answering the following question: "
ICL_HEADER = (
    "Please generate a valid relation path that can be helpful for answering the following question. "
    "Examples are listed below:"
)
DEFAULT_N_PATHS = 3
SMOOTHING = 0.01


# --------------------------------------------------------------------------- serialization


class PathParseError(ValueError):
    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"{message} (at character {position})")


class TrailingContentWarning(UserWarning):
    pass


def serialize_path(path: RelationPath | Sequence[str]) -> str:
    hops = list(path)
    if not hops:
        raise ValueError("cannot serialize an empty relation path")
    return f"{PATH_START} {f' {PATH_SEP} '.join(hops)} {PATH_END}"


def parse_path(serialized: str) -> RelationPath:
    """Inverse of :func:`serialize_path`.

    Leading/trailing whitespace is tolerated. Text after the closing marker is
    ignored with a :class:`TrailingContentWarning`. The label ``text`` maps to
    the text-only pseudo-path.
    """
    start = serialized.find(PATH_START)
    if start < 0:
        raise PathParseError(f"missing {PATH_START}", 0)
    if serialized[:start].strip():
        raise PathParseError(f"unexpected content before {PATH_START}", 0)
    body_start = start + len(PATH_START)
    end = serialized.find(PATH_END, body_start)
    if end < 0:
        raise PathParseError(f"missing {PATH_END}", len(serialized))
    nested = serialized.find(PATH_START, body_start, end)
    if nested >= 0:
        raise PathParseError(f"nested {PATH_START}", nested)
    hops: list[str] = []
    pos = body_start
    for piece in serialized[body_start:end].split(PATH_SEP):
        label = piece.strip()
        if not label:
            raise PathParseError("empty relation between markers", pos)
        hops.append(label)
        pos += len(piece) + len(PATH_SEP)
    trailing = serialized[end + len(PATH_END):]
    if trailing.strip():
        warnings.warn(f"ignored trailing content after {PATH_END}: {trailing.strip()[:40]!r}", TrailingContentWarning)
    if TEXT in hops and len(hops) > 1:
        raise PathParseError("text pseudo-relation mixed with relations", body_start)
    return RelationPath(hops)


_PATH_BLOCK = re.compile(re.escape(PATH_START) + r".*?" + re.escape(PATH_END), re.S)


def extract_paths(text: str) -> tuple[list[RelationPath], list[str]]:
    """All well-formed path blocks in free text, plus diagnostics for rejected ones."""
    paths, problems = [], []
    for m in _PATH_BLOCK.finditer(text):
        try:
            paths.append(parse_path(m.group(0)))
        except PathParseError as exc:
            problems.append(f"{exc} in {m.group(0)[:60]!r}")
    if not paths and not problems:
        problems.append("no relation path markers in completion")
    return paths, problems


# --------------------------------------------------------------------------- targets


@dataclass(frozen=True)
class PlanTarget:
    question_id: str
    question: str
    seeds: tuple[str, ...]
    paths: tuple[RelationPath, ...]

    @property
    def weight(self) -> float:
        return 1.0 / len(self.paths) if self.paths else 0.0

    def weights(self) -> dict[RelationPath, Fraction]:
        return {p: Fraction(1, len(self.paths)) for p in self.paths}


@dataclass(frozen=True)
class Plan:
    seeds: tuple[str, ...]
    paths: tuple[tuple[RelationPath, float], ...] = ()

    @property
    def relation_paths(self) -> list[RelationPath]:
        return [p for p, _ in self.paths]


def _seed_ids(seeds: MatchResult | Iterable[str]) -> tuple[str, ...]:
    if isinstance(seeds, MatchResult):
        return tuple(seeds.ids)
    return tuple(dict.fromkeys(seeds))


def target_distribution(
    question: str,
    gold: Iterable[str],
    g: SemiStructuredGraph,
    seeds: MatchResult | Iterable[str],
    max_len: int = DEFAULT_MAX_LEN,
    question_id: str = "",
) -> PlanTarget:
    """Uniform target over the globally shortest relation paths reaching any gold node.

    Falls back to the text-only path when no gold node is reachable within
    ``max_len`` hops.
    """
    seed_ids = _seed_ids(seeds)
    gold = list(gold)
    if not seed_ids:
        raise ValueError("no topic nodes; run embedding fallback before building targets")
    if not gold:
        raise ValueError("gold answer set is empty")
    found: set[RelationPath] = set()
    for a in gold:
        found |= shortest_relation_paths(g, seed_ids, a, max_len)
    if found:
        shortest = min(len(p) for p in found)
        paths = tuple(sorted((p for p in found if len(p) == shortest), key=lambda p: p.hops))
    else:
        paths = (RelationPath.text_only(),)
    return PlanTarget(question_id, question, seed_ids, paths)


def semi_distribution(
    path: RelationPath,
    g: SemiStructuredGraph,
    seeds: Iterable[str],
    text_nodes: Sequence[str] = (),
) -> dict[str, float]:
    """Uniform distribution over the nodes a path reaches from the seeds.

    The text-only path is uniform over ``text_nodes`` (the embedding-retrieved
    candidates) instead.
    """
    reached = list(dict.fromkeys(text_nodes)) if path.is_text else sorted(reachable_set(g, seeds, path))
    if not reached:
        return {}
    share = 1.0 / len(reached)
    return {a: share for a in reached}


def p_semi(
    answer: str,
    path: RelationPath,
    g: SemiStructuredGraph,
    seeds: Iterable[str],
    text_nodes: Sequence[str] = (),
) -> float:
    return semi_distribution(path, g, seeds, text_nodes).get(answer, 0.0)


def answer_distribution(
    question: str,
    g: SemiStructuredGraph,
    model: "PathModel",
    seeds: Iterable[str],
    n_paths: int = DEFAULT_N_PATHS,
    text_nodes: Sequence[str] = (),
) -> dict[str, float]:
    """Answer marginal truncated to the model's top ``n_paths`` paths.

    Path scores are renormalized over the truncated set; paths reaching no
    node drop out, so the result may sum to less than one.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    seeds = list(seeds)
    generated = model.generate(question, n_paths)[:n_paths]
    total = sum(s for _, s in generated)
    if total <= 0:
        return {}
    out: dict[str, float] = defaultdict(float)
    for path, score in generated:
        for a, pa in semi_distribution(path, g, seeds, text_nodes).items():
            out[a] += pa * score / total
    return dict(out)


def kl_loss(model: "PathModel", targets: Sequence[PlanTarget]) -> float:
    """Mean over questions of the Q-weighted negative log-likelihood of the target paths.

    Equals the KL divergence up to the (model-independent) entropy of Q. A
    target path with zero model probability makes the loss infinite.
    """
    if not targets:
        raise ValueError("no targets")
    total = 0.0
    for t in targets:
        if not t.paths:
            raise ValueError(f"target {t.question_id!r} has no paths")
        lps = [model.log_prob(p, t.question) for p in t.paths]
        if any(lp == -math.inf for lp in lps):
            return math.inf
        total += -sum(lps) / len(lps)
    return total / len(targets)


# --------------------------------------------------------------------------- corpus


@dataclass(frozen=True)
class TrainingExample:
    question_id: str
    prompt: str
    completion: str

    @property
    def question(self) -> str:
        return question_from_prompt(self.prompt)

    @property
    def path(self) -> RelationPath:
        return parse_path(self.completion)


def corpus_prompt(question: str) -> str:
    return f"{PROMPT_PREFIX}{question}."


def question_from_prompt(prompt: str) -> str:
    if not prompt.startswith(PROMPT_PREFIX) or not prompt.endswith("."):
        raise ValueError("prompt does not follow the path-generation template")
    return prompt[len(PROMPT_PREFIX):-1]


def build_corpus(targets: Iterable[PlanTarget]) -> list[TrainingExample]:
    return [
        TrainingExample(t.question_id, corpus_prompt(t.question), serialize_path(z))
        for t in targets
        for z in t.paths
    ]


class CorpusError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        self.line, self.column = line, column
        super().__init__(f"line {line}, column {column}: {message}")


def write_corpus(examples: Iterable[TrainingExample], path: str | os.PathLike) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            rec = {"question_id": ex.question_id, "prompt": ex.prompt, "completion": ex.completion}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
            n += 1
    return n


def parse_corpus_line(line: str, lineno: int) -> TrainingExample:
    try:
        rec = json.loads(line)
        ex = TrainingExample(str(rec["question_id"]), rec["prompt"], rec["completion"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CorpusError(f"malformed record ({exc})", lineno, 0) from None
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", TrailingContentWarning)
            ex.path
    except TrailingContentWarning as exc:
        raise CorpusError(str(exc), lineno, ex.completion.find(PATH_END) + len(PATH_END)) from None
    except PathParseError as exc:
        raise CorpusError(str(exc), lineno, exc.position) from None
    return ex


def read_corpus(path: str | os.PathLike) -> list[TrainingExample]:
    """Load and validate a corpus file; completions must parse cleanly."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                out.append(parse_corpus_line(line, lineno))
    return out


# --------------------------------------------------------------------------- path models


class PathModel(ABC):
    """Generator of relation paths conditioned on a question."""

    @abstractmethod
    def log_prob(self, path: RelationPath, question: str) -> float: ...

    @abstractmethod
    def generate(self, question: str, n: int) -> list[tuple[RelationPath, float]]:
        """Up to ``n`` distinct paths with scores in [0, 1], best first."""


class StepwisePathModel(PathModel):
    """Paths factorized as a product of next-relation probabilities ending in a stop token.

    The text pseudo-relation may only open a path and is always followed by
    the stop token; paths stop by ``max_len`` hops.
    """

    vocabulary: list[str]
    max_len: int

    def allowed(self, prefix: tuple[str, ...]) -> list[str]:
        if prefix == (TEXT,) or len(prefix) >= self.max_len:
            return [END]
        if not prefix:
            return self.vocabulary + [TEXT]
        return self.vocabulary + [END]

    @abstractmethod
    def next_distribution(self, prefix: tuple[str, ...], question: str) -> dict[str, float]:
        """Probabilities over ``allowed(prefix)``."""

    def log_prob(self, path: RelationPath, question: str) -> float:
        hops = tuple(path)
        if not hops:
            return -math.inf
        total = 0.0
        for i, tok in enumerate(hops + (END,)):
            p = self.next_distribution(hops[:i], question).get(tok, 0.0)
            if p <= 0.0:
                return -math.inf
            total += math.log(p)
        return total

    def generate(self, question: str, n: int, max_expansions: int = 20_000) -> list[tuple[RelationPath, float]]:
        # best-first over prefixes; log-probs only decrease, so completions pop in order
        heap: list[tuple[float, tuple[str, ...], bool]] = [(0.0, (), False)]
        out: list[tuple[RelationPath, float]] = []
        expansions = 0
        while heap and len(out) < n and expansions < max_expansions:
            neg, prefix, done = heapq.heappop(heap)
            if done:
                out.append((RelationPath(prefix), math.exp(-neg)))
                continue
            expansions += 1
            for tok, p in self.next_distribution(prefix, question).items():
                if p <= 0.0:
                    continue
                if tok == END:
                    if prefix:
                        heapq.heappush(heap, (neg - math.log(p), prefix, True))
                else:
                    heapq.heappush(heap, (neg - math.log(p), prefix + (tok,), False))
        return out


class UniformRelationModel(StepwisePathModel):
    def __init__(self, vocabulary: Iterable[str], max_len: int = DEFAULT_MAX_LEN):
        self.vocabulary = sorted(set(vocabulary) - {TEXT, END})
        self.max_len = max_len

    def next_distribution(self, prefix, question):
        options = self.allowed(prefix)
        return {tok: 1.0 / len(options) for tok in options}


Featurizer = Callable[[str], Iterable[str]]

_STOPWORDS = frozenset(
    "a an and are as at be by can do does for from how i in is it me of on or show some than that the "
    "their them these this those to was what when where which who whom whose why with".split()
)


def keyword_features(question: str) -> set[str]:
    return {f"kw:{t}" for t in tokens(question) if len(t) > 2 and t not in _STOPWORDS and not t.isdigit()}


class GraphFeaturizer:
    """Question keywords plus the node types of keyword-matched topic nodes."""

    def __init__(self, g: SemiStructuredGraph):
        self.g = g

    def __call__(self, question: str) -> set[str]:
        feats = keyword_features(question)
        for nid in keyword_match(question, self.g).ids:
            feats.add(f"type:{self.g.nodes[nid].node_type}")
        return feats


class FrequencyPathModel(StepwisePathModel):
    """Smoothed count model of next relations given the path prefix and question features.

    Each feature f keeps counts c_f(prefix, token); its estimate is
    (c + eps) / (C + eps * |allowed|). The next-relation distribution averages
    the estimates of the always-present ``*`` feature and of every question
    feature observed with the prefix in training.
    """

    BASE = "*"

    def __init__(
        self,
        vocabulary: Iterable[str],
        max_len: int = DEFAULT_MAX_LEN,
        smoothing: float = SMOOTHING,
        featurizer: Featurizer | None = None,
    ):
        self.vocabulary = sorted(set(vocabulary) - {TEXT, END})
        self.max_len = max_len
        self.smoothing = smoothing
        self.featurizer = featurizer or keyword_features
        self.counts: dict[str, dict[tuple[str, ...], Counter]] = defaultdict(lambda: defaultdict(Counter))

    def features(self, question: str) -> list[str]:
        return [self.BASE, *sorted(set(self.featurizer(question)) - {self.BASE})]

    def observe(self, path: RelationPath, question: str) -> None:
        hops = tuple(path)
        for f in self.features(question):
            table = self.counts[f]
            for i, tok in enumerate(hops + (END,)):
                table[hops[:i]][tok] += 1

    def next_distribution(self, prefix, question):
        options = self.allowed(prefix)
        if len(options) == 1:
            return {options[0]: 1.0}
        active = []
        for f in self.features(question):
            table = self.counts.get(f)
            if f == self.BASE or (table and prefix in table):
                active.append(table.get(prefix, Counter()) if table else Counter())
        eps = self.smoothing
        dist = dict.fromkeys(options, 0.0)
        for counter in active:
            total = sum(counter[o] for o in options) + eps * len(options)
            for o in options:
                dist[o] += (counter[o] + eps) / total
        return {o: p / len(active) for o, p in dist.items()}

    def to_dict(self) -> dict:
        return {
            "vocabulary": self.vocabulary,
            "max_len": self.max_len,
            "smoothing": self.smoothing,
            "counts": {
                f: [[list(prefix), dict(counter)] for prefix, counter in table.items()]
                for f, table in self.counts.items()
            },
        }

    @classmethod
    def from_dict(cls, data: Mapping, featurizer: Featurizer | None = None) -> "FrequencyPathModel":
        model = cls(data["vocabulary"], data["max_len"], data["smoothing"], featurizer)
        for f, rows in data["counts"].items():
            for prefix, counter in rows:
                model.counts[f][tuple(prefix)] = Counter(counter)
        return model

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike, featurizer: Featurizer | None = None) -> "FrequencyPathModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")), featurizer)


def fit_frequency_model(
    corpus: Sequence[TrainingExample],
    schema: SemiStructuredGraph | Iterable[str],
    featurizer: Featurizer | None = None,
    max_len: int = DEFAULT_MAX_LEN,
    smoothing: float = SMOOTHING,
) -> FrequencyPathModel:
    """Count-based stand-in for a fine-tuned path generator.

    ``schema`` is a graph (its relations in both directions) or an explicit
    label list; labels seen in the corpus are always added.
    """
    if not corpus:
        raise ValueError("empty corpus")
    if isinstance(schema, SemiStructuredGraph):
        vocab = set(schema.path_vocabulary)
        if featurizer is None:
            featurizer = GraphFeaturizer(schema)
    else:
        vocab = set(schema)
    parsed = [(ex.path, ex.question) for ex in corpus]
    for path, _ in parsed:
        vocab.update(h for h in path if h != TEXT)
    longest = max(len(p) for p, _ in parsed)
    model = FrequencyPathModel(vocab, max(max_len, longest), smoothing, featurizer)
    for path, question in parsed:
        model.observe(path, question)
    return model


class FixedPathModel(PathModel):
    """Question-independent distribution over an explicit set of paths."""

    def __init__(self, probabilities: Mapping[RelationPath, float]):
        self.probabilities = dict(probabilities)

    def log_prob(self, path, question):
        p = self.probabilities.get(RelationPath(path), 0.0)
        return math.log(p) if p > 0 else -math.inf

    def generate(self, question, n):
        ranked = sorted(self.probabilities.items(), key=lambda kv: (-kv[1], kv[0].hops))
        return ranked[:n]


class OraclePathModel(PathModel):
    """Returns each question's target paths uniformly; the optimum of the KL objective."""

    def __init__(self, targets: Iterable[PlanTarget]):
        self.by_question = {t.question: t.paths for t in targets}

    def log_prob(self, path, question):
        paths = self.by_question.get(question, ())
        return -math.log(len(paths)) if RelationPath(path) in paths else -math.inf

    def generate(self, question, n):
        paths = self.by_question.get(question, ())
        return [(p, 1.0 / len(paths)) for p in paths[:n]]


# --------------------------------------------------------------------------- LLM path generation


def in_context_prompt(question: str, shots: Sequence[tuple[str, RelationPath]] = ()) -> str:
    if not shots:
        return corpus_prompt(question)
    lines = [ICL_HEADER]
    for i, (q, z) in enumerate(shots, start=1):
        lines.append(f"<Question {i}> {q}: {serialize_path(z)}")
    lines.append(f"<Question> {question}:")
    return "\n".join(lines)


@dataclass
class GeneratedPaths:
    paths: list[tuple[RelationPath, float]]
    raw: str
    diagnostics: list[str] = field(default_factory=list)


def llm_generate_paths(
    question: str,
    backend: Backend,
    schema: SemiStructuredGraph | Iterable[str] | None = None,
    shots: Sequence[tuple[str, RelationPath]] = (),
    model: str = "default",
    max_tokens: int = 128,
) -> GeneratedPaths:
    """Ask a chat backend for relation paths; unusable output yields no paths."""
    raw = backend.complete(ChatRequest.user(in_context_prompt(question, shots), model=model, max_tokens=max_tokens))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TrailingContentWarning)
        found, diagnostics = extract_paths(raw)
    if isinstance(schema, SemiStructuredGraph):
        known: set[str] | None = set(schema.path_vocabulary)
    else:
        known = set(schema) if schema is not None else None
    kept: list[RelationPath] = []
    for p in found:
        unknown = [h for h in p if h != TEXT and known is not None and h not in known]
        if unknown:
            diagnostics.append(f"unknown relation(s) {unknown} in generated path")
        elif p not in kept:
            kept.append(p)
    share = 1.0 / len(kept) if kept else 0.0
    return GeneratedPaths([(p, share) for p in kept], raw, diagnostics)


class LLMPathModel(PathModel):
    """In-context path generation through a chat backend (scores only, no likelihoods)."""

    def __init__(self, backend: Backend, schema=None, shots: Sequence[tuple[str, RelationPath]] = (), model: str = "default"):
        self.backend, self.schema, self.shots, self.model = backend, schema, list(shots), model
        self.last: GeneratedPaths | None = None

    def log_prob(self, path, question):
        raise NotImplementedError("chat backends expose no path likelihoods")

    def generate(self, question, n):
        self.last = llm_generate_paths(question, self.backend, self.schema, self.shots, self.model)
        return self.last.paths[:n]


def make_plan(question: str, seeds: Iterable[str], model: PathModel, n_paths: int = DEFAULT_N_PATHS) -> Plan:
    generated = model.generate(question, n_paths)[:n_paths]
    ranked = sorted(enumerate(generated), key=lambda it: (-it[1][1], it[0]))
    seen: dict[RelationPath, float] = {}
    for _, (p, s) in ranked:
        seen.setdefault(p, min(1.0, max(0.0, s)))
    return Plan(tuple(seeds), tuple(seen.items()))


# --------------------------------------------------------------------------- plan cache


def write_plans(entries: Iterable[tuple[str, Plan]], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid, plan in entries:
            rec = {
                "question_id": qid,
                "seeds": list(plan.seeds),
                "paths": [list(p) for p, _ in plan.paths],
                "scores": [s for _, s in plan.paths],
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_plans(path: str | os.PathLike) -> dict[str, Plan]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                paths = tuple((RelationPath(p), float(s)) for p, s in zip(rec["paths"], rec["scores"]))
                out[rec["question_id"]] = Plan(tuple(rec["seeds"]), paths)
    return out
