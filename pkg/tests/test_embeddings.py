import hashlib
import json

import httpx
import numpy as np
import pytest

from semiqa.embeddings import (
    EmbeddingIndex,
    HashingEmbedder,
    RemoteEmbedder,
    build_index,
    content_hash,
    embed_text,
    node_document,
)
from semiqa.llm import BackendError, RetryPolicy


def reference_token_vector(token, dim, seed=0):
    # independent re-derivation of the documented mock scheme
    digest = hashlib.blake2b(f"{seed}:{token}".encode(), digest_size=16).digest()
    gen = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
    return gen.standard_normal(dim)


def test_empty_text_is_zero_vector():
    e = HashingEmbedder(dim=16)
    v = embed_text(e, "")
    assert v.shape == (16,) and not v.any()


def test_deterministic_across_instances():
    a = embed_text(HashingEmbedder(32, seed=3), "Graph Search Methods")
    b = embed_text(HashingEmbedder(32, seed=3), "Graph Search Methods")
    assert np.array_equal(a, b)


def test_a_and_b_differ_in_dim8():
    e = HashingEmbedder(dim=8)
    va, vb = embed_text(e, "a"), embed_text(e, "b")
    assert np.allclose(va, reference_token_vector("a", 8))
    assert np.allclose(vb, reference_token_vector("b", 8))
    assert (va != vb).sum() >= 1


def test_bag_of_tokens_sum_and_casefold():
    e = HashingEmbedder(dim=8)
    expected = reference_token_vector("graph", 8) + reference_token_vector("search", 8)
    assert np.allclose(embed_text(e, "GRAPH, search!"), expected)


def test_seed_changes_vectors():
    assert not np.array_equal(embed_text(HashingEmbedder(8, 0), "x"), embed_text(HashingEmbedder(8, 1), "x"))


def test_node_document(g0):
    assert node_document(g0.nodes["A"]) == "Ada" or node_document(g0.nodes["A"]).startswith("Ada")


def test_cache_sidecar_reused(tmp_path, g0):
    class Counting(HashingEmbedder):
        calls = 0

        def embed(self, texts):
            Counting.calls += len(texts)
            return super().embed(texts)

    cache = tmp_path / "emb.jsonl"
    e = Counting(dim=8)
    first = build_index(g0, e, cache)
    assert Counting.calls == len(g0.nodes)
    records = [json.loads(l) for l in cache.read_text().splitlines()]
    assert {r["id"] for r in records} == set(g0.nodes)
    assert all(r["hash"] == content_hash(e, node_document(g0.nodes[r["id"]])) for r in records)
    second = build_index(g0, e, cache)
    assert Counting.calls == len(g0.nodes)
    assert np.allclose(first.vectors, second.vectors)


def test_top_k_tie_break_by_id():
    idx = EmbeddingIndex(["n3", "n1", "n2"], np.array([[1.0, 0], [1.0, 0], [0, 1.0]]))
    assert [i for i, _ in idx.top_k(np.array([1.0, 0]), 2)] == ["n1", "n3"]
    assert [i for i, _ in idx.top_k(np.array([1.0, 0]), 10)] == ["n1", "n3", "n2"]
    with pytest.raises(ValueError):
        idx.top_k(np.array([1.0, 0]), 0)


def test_remote_embedder_wire_format():
    seen = {}

    def handler(request):
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"data": [{"embedding": [1.0, 2.0]} for _ in seen["body"]["input"]]})

    e = RemoteEmbedder("m", 2, base_url="http://x/v1", api_key="", transport=httpx.MockTransport(handler))
    out = e.embed(["a", "b"])
    assert out.shape == (2, 2)
    assert seen["body"] == {"input": ["a", "b"], "model": "m"}


def test_remote_embedder_dim_mismatch():
    transport = httpx.MockTransport(lambda r: httpx.Response(200, json={"data": [{"embedding": [1.0]}]}))
    e = RemoteEmbedder("m", 2, base_url="http://x/v1", transport=transport,
                       retry=RetryPolicy(attempts=1, sleep=lambda s: None))
    with pytest.raises(BackendError):
        e.embed(["a"])
