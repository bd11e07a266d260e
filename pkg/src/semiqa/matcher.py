"""Topic-node matching: exact-name keyword match with embedding-similarity fallback."""
from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from typing import Literal, Union

from .embeddings import EmbeddingIndex, EmbeddingProvider, embed_text, index_for
from .graph import SemiStructuredGraph

DEFAULT_K = 5


@dataclass(frozen=True)
class Question:
    id: str
    text: str

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError("question text must be non-empty")


QuestionLike = Union[Question, str]


def as_question(q: QuestionLike) -> Question:
    return q if isinstance(q, Question) else Question(id="", text=q)


@dataclass(frozen=True)
class MatchResult:
    nodes: tuple[tuple[str, float], ...]
    method: Literal["keyword", "embedding"]

    @property
    def ids(self) -> list[str]:
        return [n for n, _ in self.nodes]

    def __bool__(self) -> bool:
        return bool(self.nodes)

    def __len__(self) -> int:
        return len(self.nodes)


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith(("P", "S"))


def _strip_edges(token: str) -> str:
    i, j = 0, len(token)
    while i < j and _is_punct(token[i]):
        i += 1
    while j > i and _is_punct(token[j - 1]):
        j -= 1
    return token[i:j]


def tokens(text: str) -> tuple[str, ...]:
    """Case-folded whitespace tokens with punctuation stripped at token edges."""
    out = (_strip_edges(t) for t in text.casefold().split())
    return tuple(t for t in out if t)


def normalize(text: str) -> str:
    return " ".join(tokens(text))


class NameIndex:
    """Normalized name token-tuple -> node ids, in graph insertion order."""

    def __init__(self, g: SemiStructuredGraph):
        self.by_name: dict[tuple[str, ...], list[str]] = {}
        for node in g.nodes.values():
            key = tokens(node.name)
            if key:
                self.by_name.setdefault(key, []).append(node.id)
        self.max_len = max((len(k) for k in self.by_name), default=0)

    def lookup(self, name: str) -> list[str]:
        return list(self.by_name.get(tokens(name), ()))

    def spans(self, qtokens: tuple[str, ...]) -> list[tuple[int, int, list[str]]]:
        found = []
        for i in range(len(qtokens)):
            for j in range(i + 1, min(len(qtokens), i + self.max_len) + 1):
                ids = self.by_name.get(qtokens[i:j])
                if ids:
                    found.append((i, j, ids))
        return found


def name_index(g: SemiStructuredGraph) -> NameIndex:
    if "name-index" not in g._cache:
        g._cache["name-index"] = NameIndex(g)
    return g._cache["name-index"]


def keyword_match(q: QuestionLike, g: SemiStructuredGraph) -> MatchResult:
    """Nodes whose full normalized name appears as a token run in the question.

    Overlapping candidates are resolved longest-first; ties go to the earlier
    span. Results are ordered by position in the question.
    """
    q = as_question(q)
    spans = name_index(g).spans(tokens(q.text))
    spans.sort(key=lambda s: (-(s[1] - s[0]), s[0]))
    taken: list[tuple[int, int, list[str]]] = []
    for i, j, ids in spans:
        if all(j <= a or i >= b for a, b, _ in taken):
            taken.append((i, j, ids))
    taken.sort(key=lambda s: s[0])
    seen: dict[str, float] = {}
    for _, _, ids in taken:
        for nid in ids:
            seen.setdefault(nid, 1.0)
    return MatchResult(tuple(seen.items()), "keyword")


def similarity_match(
    q: QuestionLike,
    g: SemiStructuredGraph,
    provider: EmbeddingProvider,
    k: int = DEFAULT_K,
    index: EmbeddingIndex | None = None,
) -> MatchResult:
    """Top-k nodes by cosine between question and node-document embeddings.

    Scores are cosines clipped below at 0; ordering uses the raw cosine.
    """
    q = as_question(q)
    if k < 1:
        raise ValueError("k must be >= 1")
    if not g.nodes:
        return MatchResult((), "embedding")
    index = index if index is not None else index_for(g, provider)
    hits = index.top_k(embed_text(provider, q.text), k)
    return MatchResult(tuple((nid, max(0.0, min(1.0, s))) for nid, s in hits), "embedding")


def hybrid_match(
    q: QuestionLike,
    g: SemiStructuredGraph,
    provider: EmbeddingProvider,
    k: int = DEFAULT_K,
    index: EmbeddingIndex | None = None,
) -> MatchResult:
    hits = keyword_match(q, g)
    if hits:
        return hits
    return similarity_match(q, g, provider, k, index)
