"""Embedding providers and the exact-scan node-document index."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import httpx
import numpy as np

from .graph import Node, SemiStructuredGraph
from .llm import BackendError, RetryPolicy, call_with_retry, endpoint_url

log = logging.getLogger(__name__)

_TOKEN = re.compile(r"\w+", re.UNICODE)
TIE_DECIMALS = 12


class EmbeddingProvider(Protocol):
    dim: int

    @property
    def fingerprint(self) -> str: ...

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


class HashingEmbedder:
    """Deterministic bag-of-tokens embedder for tests and offline runs.

    Text is case-folded and split into ``\\w+`` tokens. Each token seeds a
    PCG64 generator with the first 8 bytes (little-endian) of
    ``blake2b(f"{seed}:{token}", digest_size=16)``; the token vector is
    ``dim`` standard-normal draws from that generator. A text's embedding is
    the sum of its token vectors, so the empty string maps to zeros.
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    @property
    def fingerprint(self) -> str:
        return f"hash-{self.dim}-{self.seed}"

    def token_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            digest = hashlib.blake2b(f"{self.seed}:{token}".encode(), digest_size=16).digest()
            rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
            vec = rng.standard_normal(self.dim)
            with self._lock:
                self._cache[token] = vec
        return vec

    def embed_one(self, text: str) -> np.ndarray:
        out = np.zeros(self.dim)
        for tok in _TOKEN.findall(text.casefold()):
            out += self.token_vector(tok)
        return out

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return np.stack([self.embed_one(t) for t in texts])


class RemoteEmbedder:
    """OpenAI-compatible ``/v1/embeddings`` client."""

    def __init__(
        self,
        model: str,
        dim: int,
        base_url: str | None = None,
        api_key: str | None = None,
        batch_size: int = 64,
        retry: RetryPolicy | None = None,
        transport: httpx.BaseTransport | None = None,
    ):
        self.model = model
        self.dim = dim
        self.base_url = base_url or os.environ.get("SEMIQA_API_BASE", "")
        if not self.base_url:
            raise BackendError("no embedding endpoint configured (SEMIQA_API_BASE)")
        key = api_key if api_key is not None else os.environ.get("SEMIQA_API_KEY", "")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self.batch_size = batch_size
        self.retry = retry or RetryPolicy()
        self._client = httpx.Client(headers=headers, timeout=self.retry.timeout, transport=transport)

    @property
    def fingerprint(self) -> str:
        return f"remote-{self.model}-{self.dim}"

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        url = endpoint_url(self.base_url, "embeddings")
        rows: list[list[float]] = []
        for i in range(0, len(texts), self.batch_size):
            batch = list(texts[i:i + self.batch_size])
            body = call_with_retry(self._client, url, {"input": batch, "model": self.model}, self.retry)
            data = body.get("data")
            if not isinstance(data, list) or len(data) != len(batch):
                raise BackendError(f"malformed embeddings response: {str(body)[:200]}")
            rows.extend(item["embedding"] for item in data)
        arr = np.asarray(rows, dtype=float).reshape(len(rows), -1) if rows else np.zeros((0, self.dim))
        if arr.shape[1] != self.dim:
            raise BackendError(f"provider returned dim {arr.shape[1]}, expected {self.dim}")
        return arr


def embed_text(provider: EmbeddingProvider, text: str) -> np.ndarray:
    return provider.embed([text])[0]


def node_document(node: Node) -> str:
    """Text embedded for a node: its name, then its document when present."""
    parts = [p for p in (node.name, node.text) if p]
    return "\n".join(parts)


def content_hash(provider: EmbeddingProvider, text: str) -> str:
    return hashlib.sha256(f"{provider.fingerprint}\n{text}".encode()).hexdigest()


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return mat / norms


@dataclass
class EmbeddingIndex:
    """Row-normalized node embeddings with exact cosine top-k."""

    ids: list[str]
    vectors: np.ndarray

    def __post_init__(self):
        self._unit = _unit_rows(np.asarray(self.vectors, dtype=float).reshape(len(self.ids), -1))
        # rank of each id in ascending order, for deterministic tie-breaks
        order = sorted(range(len(self.ids)), key=self.ids.__getitem__)
        self._id_rank = np.empty(len(self.ids), dtype=np.int64)
        self._id_rank[order] = np.arange(len(self.ids))

    def __len__(self) -> int:
        return len(self.ids)

    def cosine(self, query: np.ndarray) -> np.ndarray:
        q = np.asarray(query, dtype=float)
        n = np.linalg.norm(q)
        if n == 0 or not len(self.ids):
            return np.zeros(len(self.ids))
        return self._unit @ (q / n)

    def top_k(self, query: np.ndarray, k: int) -> list[tuple[str, float]]:
        """Top-k (id, cosine) pairs; equal scores are ordered by id ascending."""
        if k < 1:
            raise ValueError("k must be >= 1")
        # BLAS rounding can split identical rows by an ulp; round so they tie on id
        scores = np.round(self.cosine(query), TIE_DECIMALS)
        order = np.lexsort((self._id_rank, -scores))[:k]
        return [(self.ids[i], float(scores[i])) for i in order]


def read_cache(path: str | os.PathLike) -> dict[str, tuple[str, list[float]]]:
    out: dict[str, tuple[str, list[float]]] = {}
    p = Path(path)
    if not p.exists():
        return out
    with p.open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[rec["id"]] = (rec["hash"], rec["vector"])
    return out


def build_index(
    g: SemiStructuredGraph,
    provider: EmbeddingProvider,
    cache_path: str | os.PathLike | None = None,
    batch_size: int = 256,
) -> EmbeddingIndex:
    """Embed every node document, reusing cache entries whose content hash matches.

    When ``cache_path`` is given the sidecar is rewritten to reflect the graph.
    """
    cached = read_cache(cache_path) if cache_path else {}
    ids = list(g.nodes)
    docs = [node_document(g.nodes[i]) for i in ids]
    hashes = [content_hash(provider, d) for d in docs]
    vectors: list[np.ndarray | None] = [None] * len(ids)
    todo = []
    for i, (nid, h) in enumerate(zip(ids, hashes)):
        hit = cached.get(nid)
        if hit and hit[0] == h and len(hit[1]) == provider.dim:
            vectors[i] = np.asarray(hit[1], dtype=float)
        else:
            todo.append(i)
    if todo:
        log.info("embedding %d of %d node documents", len(todo), len(ids))
    for start in range(0, len(todo), batch_size):
        chunk = todo[start:start + batch_size]
        embedded = provider.embed([docs[i] for i in chunk])
        for i, vec in zip(chunk, embedded):
            vectors[i] = vec
    mat = np.stack(vectors) if vectors else np.zeros((0, provider.dim))
    if cache_path and (todo or len(cached) != len(ids)):
        tmp = Path(str(cache_path) + ".tmp")
        with tmp.open("w", encoding="utf-8") as fh:
            for nid, h, vec in zip(ids, hashes, mat):
                fh.write(json.dumps({"id": nid, "hash": h, "vector": [float(x) for x in vec]}) + "\n")
        os.replace(tmp, cache_path)
    return EmbeddingIndex(ids, mat)


def index_for(g: SemiStructuredGraph, provider: EmbeddingProvider) -> EmbeddingIndex:
    """Index memoized on the graph object per provider fingerprint."""
    key = ("embedding-index", provider.fingerprint)
    if key not in g._cache:
        g._cache[key] = build_index(g, provider)
    return g._cache[key]
