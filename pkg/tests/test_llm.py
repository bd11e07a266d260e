import json
import re

import httpx
import pytest

from semiqa.llm import (
    BackendError,
    CassetteMiss,
    ChatRequest,
    RecordReplayBackend,
    RemoteBackend,
    RetryPolicy,
    ScriptedBackend,
    complete,
    endpoint_url,
    record_replay,
)

NO_SLEEP = RetryPolicy(sleep=lambda s: None)


def chat_ok(text="hello", usage=None):
    return httpx.Response(200, json={"choices": [{"message": {"content": text}}], "usage": usage or {"total_tokens": 7}})


def remote(handler, retry=NO_SLEEP):
    return RemoteBackend("http://llm.test", api_key="k", retry=retry, transport=httpx.MockTransport(handler))


def test_scripted_first_matching_rule():
    backend = ScriptedBackend(
        [("Topic Node: [Ada]", "Thought 1: go\nAction 1: Search[Ada]"), (re.compile(r"Ada"), "second")],
        default_response="fallback",
    )
    assert complete(backend, ChatRequest.user("Question: x\nTopic Node: [Ada]")) == "Thought 1: go\nAction 1: Search[Ada]"
    assert complete(backend, ChatRequest.user("Ada alone")) == "second"
    assert complete(backend, ChatRequest.user("nothing")) == "fallback"
    assert backend.calls == 3


def test_scripted_from_file(tmp_path):
    path = tmp_path / "script.json"
    path.write_text(json.dumps({"rules": [{"pattern": "^Q\\d", "response": "num"}, {"match": "x", "response": "ex"}], "default": "d"}))
    backend = ScriptedBackend.from_file(path)
    assert [backend.complete(ChatRequest.user(p)) for p in ("Q1", "box", "zzz")] == ["num", "ex", "d"]


def test_request_hash_fields():
    base = ChatRequest.user("hi")
    assert base.request_hash() == ChatRequest.user("hi", max_tokens=5).request_hash()
    for other in (
        ChatRequest.user("hi!"),
        ChatRequest.user("hi", system="s"),
        ChatRequest.user("hi", model="m2"),
        ChatRequest.user("hi", temperature=0.5),
    ):
        assert other.request_hash() != base.request_hash()


def test_request_validation():
    with pytest.raises(ValueError):
        ChatRequest(messages=())
    with pytest.raises(ValueError):
        ChatRequest(messages=(("robot", "x"),))


def test_endpoint_url():
    assert endpoint_url("http://h", "chat/completions") == "http://h/v1/chat/completions"
    assert endpoint_url("http://h/v1/", "embeddings") == "http://h/v1/embeddings"


def test_remote_wire_format_and_usage():
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return chat_ok("answer", {"total_tokens": 11})

    backend = remote(handler)
    req = ChatRequest(messages=(("user", "q"),), system="sys", model="gpt-4", max_tokens=9)
    assert backend.complete(req) == "answer"
    assert seen["url"] == "http://llm.test/v1/chat/completions"
    assert seen["auth"] == "Bearer k"
    assert seen["body"] == {
        "model": "gpt-4",
        "messages": [{"role": "system", "content": "sys"}, {"role": "user", "content": "q"}],
        "temperature": 0.0,
        "max_tokens": 9,
    }
    assert backend.last_usage == {"total_tokens": 11}


def test_remote_retries_transient_then_succeeds():
    statuses = iter([503, 429])
    delays = []

    def handler(request):
        code = next(statuses, 200)
        return chat_ok() if code == 200 else httpx.Response(code, text="busy")

    backend = remote(handler, RetryPolicy(sleep=delays.append))
    assert backend.complete(ChatRequest.user("x")) == "hello"
    assert delays == [1.0, 2.0]


def test_remote_4xx_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(400, text="bad request body")

    with pytest.raises(BackendError) as info:
        remote(handler).complete(ChatRequest.user("x"))
    assert len(calls) == 1
    assert info.value.status == 400 and not info.value.retryable
    assert "bad request body" in str(info.value)


def test_remote_unreachable_after_three_attempts():
    calls = []

    def handler(request):
        calls.append(1)
        raise httpx.ConnectError("connection refused", request=request)

    with pytest.raises(BackendError) as info:
        remote(handler).complete(ChatRequest.user("x"))
    assert len(calls) == 3
    assert info.value.retryable and info.value.attempts == 3


def test_remote_needs_endpoint(monkeypatch):
    monkeypatch.delenv("SEMIQA_API_BASE", raising=False)
    with pytest.raises(BackendError):
        RemoteBackend()


def test_record_then_replay(tmp_path):
    cassette = tmp_path / "tape.jsonl"
    inner = ScriptedBackend(default_response="recorded reply")
    recorder = record_replay(inner, cassette, "record")
    assert recorder.complete(ChatRequest.user("prompt")) == "recorded reply"
    assert recorder.complete(ChatRequest.user("prompt")) == "recorded reply"
    assert inner.calls == 1
    lines = [json.loads(l) for l in cassette.read_text().splitlines()]
    assert lines == [{"request_hash": ChatRequest.user("prompt").request_hash(), "response": "recorded reply"}]

    player = RecordReplayBackend(cassette)
    assert player.complete(ChatRequest.user("prompt")) == "recorded reply"
    with pytest.raises(CassetteMiss):
        player.complete(ChatRequest.user("prompt, altered"))


def test_replay_requires_cassette(tmp_path):
    with pytest.raises(FileNotFoundError):
        RecordReplayBackend(tmp_path / "missing.jsonl")
    with pytest.raises(ValueError):
        RecordReplayBackend(tmp_path / "x.jsonl", None, "record")
