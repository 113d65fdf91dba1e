"""Backends: request/result types, replay scripts, recording, HTTP client."""

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from tabreason.backends import (
    BackendUnavailable,
    CallCounter,
    GenerationRequest,
    GenerationResult,
    HttpBackend,
    HttpConfig,
    IoFailure,
    RecordingBackend,
    ReplayBackend,
    ScriptEntry,
    ScriptExhausted,
    ScriptMismatch,
    load_script,
    record_session,
    request_key,
    write_script,
)


# ---------------------------------------------------------------------------
# request / result validation


def test_request_requires_positive_token_budget():
    with pytest.raises(ValueError):
        GenerationRequest.single_user("hi", max_new_tokens=0)


def test_request_rejects_negative_temperature():
    with pytest.raises(ValueError):
        GenerationRequest.single_user("hi", temperature=-0.1)


def test_single_user_builds_one_message():
    request = GenerationRequest.single_user("answer the question", stop=["\n\n"])
    assert request.messages == ({"role": "user", "content": "answer the question"},)
    assert request.stop == ("\n\n",)


def test_request_copies_message_dicts():
    message = {"role": "user", "content": "original"}
    request = GenerationRequest(messages=(message,))
    message["content"] = "mutated"
    assert request.messages[0]["content"] == "original"


def test_result_finish_reason_is_validated():
    with pytest.raises(ValueError):
        GenerationResult(text="x", finish_reason="done")
    with pytest.raises(ValueError):
        GenerationResult(text="", finish_reason="stop")
    assert GenerationResult(text="", finish_reason="error").text == ""


def test_request_key_collapses_whitespace_but_keeps_roles():
    a = request_key([{"role": "user", "content": "hello   world"}])
    b = request_key([{"role": "user", "content": "hello world"}])
    c = request_key([{"role": "system", "content": "hello world"}])
    assert a == b
    assert a != c


def test_call_counter_is_thread_safe():
    counter = CallCounter()

    def spin():
        for _ in range(200):
            counter.record("worker")

    threads = [threading.Thread(target=spin) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert counter.total == 1600
    assert counter.per_tag == {"worker": 1600}
    assert counter.tag_total() == 1600


# ---------------------------------------------------------------------------
# replay backend


def request_for(text):
    return GenerationRequest.single_user(text)


def test_sequential_replay_plays_in_order():
    backend = ReplayBackend.from_texts(["first", "second"])
    assert backend.generate(request_for("a")).text == "first"
    assert backend.generate(request_for("b")).text == "second"
    with pytest.raises(ScriptExhausted):
        backend.generate(request_for("c"))
    assert backend.counter.total == 2


def test_keyed_replay_matches_by_prompt():
    entries = [
        ScriptEntry(response="alpha", key=request_key([{"role": "user", "content": "A"}])),
        ScriptEntry(response="beta", key=request_key([{"role": "user", "content": "B"}])),
    ]
    backend = ReplayBackend(entries)
    assert backend.keyed
    assert backend.generate(request_for("B")).text == "beta"
    assert backend.generate(request_for("A")).text == "alpha"


def test_keyed_replay_rejects_unknown_prompt():
    entries = [ScriptEntry(response="x", key=request_key([{"role": "user", "content": "A"}]))]
    backend = ReplayBackend(entries)
    with pytest.raises(ScriptMismatch):
        backend.generate(request_for("unscripted"))
    # a failed lookup is not a completed call
    assert backend.counter.total == 0


def test_keyed_replay_exhausts_per_key():
    key = request_key([{"role": "user", "content": "A"}])
    backend = ReplayBackend([ScriptEntry(response="only", key=key)])
    assert backend.generate(request_for("A")).text == "only"
    with pytest.raises(ScriptExhausted):
        backend.generate(request_for("A"))


def test_keyed_replay_is_whitespace_insensitive():
    key = request_key([{"role": "user", "content": "spaced    out"}])
    backend = ReplayBackend([ScriptEntry(response="ok", key=key)])
    assert backend.generate(request_for("spaced out")).text == "ok"


def test_mixed_keys_fall_back_to_sequential():
    entries = [ScriptEntry(response="a", key="k"), ScriptEntry(response="b")]
    backend = ReplayBackend(entries)
    assert not backend.keyed
    assert backend.generate(request_for("anything")).text == "a"


# ---------------------------------------------------------------------------
# recording and script files


def test_record_then_replay_round_trip(tmp_path):
    source = ReplayBackend.from_texts(["one", "two"])
    recorder = record_session(source)
    assert isinstance(recorder, RecordingBackend)
    recorder.generate(request_for("p1"))
    recorder.generate(request_for("p2"))
    path = tmp_path / "script.jsonl"
    recorder.write_script(str(path))

    replay = ReplayBackend.from_script(str(path))
    assert replay.keyed
    # keyed playback tolerates arbitrary call order
    assert replay.generate(request_for("p2")).text == "two"
    assert replay.generate(request_for("p1")).text == "one"


def test_recorder_refuses_to_write_nothing(tmp_path):
    recorder = RecordingBackend(ReplayBackend.from_texts(["x"]))
    with pytest.raises(ValueError):
        recorder.write_script(str(tmp_path / "empty.jsonl"))


def test_script_file_round_trip(tmp_path):
    entries = [
        ScriptEntry(response="with\nnewlines", finish_reason="stop", key="k1"),
        ScriptEntry(response="plain"),
    ]
    path = tmp_path / "s.jsonl"
    write_script(entries, str(path))
    assert load_script(str(path)) == entries


def test_load_script_missing_file():
    with pytest.raises(IoFailure):
        load_script("/nonexistent/script.jsonl")


def test_load_script_rejects_bad_lines(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"no_response_field": 1}\n', encoding="utf-8")
    with pytest.raises(ValueError):
        load_script(str(path))


def test_write_script_refuses_empty_and_bad_paths(tmp_path):
    with pytest.raises(ValueError):
        write_script([], str(tmp_path / "x.jsonl"))
    with pytest.raises(IoFailure):
        write_script([ScriptEntry(response="x")], str(tmp_path / "no/such/dir/x.jsonl"))


# ---------------------------------------------------------------------------
# HTTP backend against a local stub server


class _StubHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        body = json.loads(self.rfile.read(length) or b"{}")
        self.server.seen.append(
            {"path": self.path, "auth": self.headers.get("Authorization"), "body": body}
        )
        status, payload = self.server.responses.pop(0)
        raw = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def log_message(self, *args):
        pass


def completion(text):
    return {"choices": [{"message": {"content": text}, "finish_reason": "stop"}]}


@pytest.fixture
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    server.responses = []
    server.seen = []
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield server
    finally:
        server.shutdown()
        server.server_close()


def backend_for(server, **overrides):
    config = HttpConfig(
        base_url="http://127.0.0.1:%d/v1" % server.server_address[1],
        model="test-model",
        backoff_base=0.01,
        **overrides,
    )
    return HttpBackend(config)


def test_http_success_counts_one_call(stub_server, monkeypatch):
    monkeypatch.setenv("OPENAI_API_KEY", "sk-test-token")
    stub_server.responses.append((200, completion("hello")))
    backend = backend_for(stub_server)
    result = backend.generate(GenerationRequest.single_user("hi", max_new_tokens=77))
    assert result.text == "hello"
    assert backend.counter.total == 1

    seen = stub_server.seen[0]
    assert seen["path"] == "/v1/chat/completions"
    assert seen["auth"] == "Bearer sk-test-token"
    assert seen["body"]["model"] == "test-model"
    assert seen["body"]["max_tokens"] == 77
    assert seen["body"]["messages"] == [{"role": "user", "content": "hi"}]


def test_http_retries_5xx_then_succeeds(stub_server):
    stub_server.responses.extend(
        [(500, {}), (502, {}), (200, completion("eventually"))]
    )
    backend = backend_for(stub_server)
    result = backend.generate(GenerationRequest.single_user("hi"))
    assert result.text == "eventually"
    assert len(stub_server.seen) == 3
    # only the successful attempt is counted
    assert backend.counter.total == 1


def test_http_retries_429(stub_server):
    stub_server.responses.extend([(429, {}), (200, completion("after backoff"))])
    backend = backend_for(stub_server)
    assert backend.generate(GenerationRequest.single_user("hi")).text == "after backoff"


def test_http_gives_up_after_max_attempts(stub_server):
    stub_server.responses.extend([(500, {}), (500, {})])
    backend = backend_for(stub_server, max_attempts=2)
    with pytest.raises(BackendUnavailable):
        backend.generate(GenerationRequest.single_user("hi"))
    assert backend.counter.total == 0


def test_http_client_error_fails_immediately(stub_server):
    stub_server.responses.append((400, {"error": "bad request"}))
    backend = backend_for(stub_server)
    with pytest.raises(BackendUnavailable):
        backend.generate(GenerationRequest.single_user("hi"))
    assert len(stub_server.seen) == 1


def test_http_malformed_payload(stub_server):
    stub_server.responses.append((200, {"unexpected": "shape"}))
    backend = backend_for(stub_server)
    with pytest.raises(BackendUnavailable):
        backend.generate(GenerationRequest.single_user("hi"))


def test_http_connection_refused_is_retried_then_raised():
    config = HttpConfig(
        base_url="http://127.0.0.1:1/v1",
        model="m",
        max_attempts=2,
        backoff_base=0.01,
    )
    backend = HttpBackend(config)
    with pytest.raises(BackendUnavailable):
        backend.generate(GenerationRequest.single_user("hi"))
