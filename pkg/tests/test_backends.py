import base64
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from conftest import png_bytes
from wga.backends import (
    BackendError,
    BackendRejected,
    BackendUnavailable,
    ChatRequest,
    ChatTurn,
    GenerateImageRequest,
    HttpBackend,
    ImageDecodeError,
    MockBackend,
    MockRule,
    PreconditionError,
    RetryPolicy,
    backend_from_env,
    captured,
    chat_complete,
    generate_image,
    load_mock_rules,
)
from wga.records import ImageStore


class Stub:
    """Local HTTP server replying with a scripted list of (status, body)."""

    def __init__(self, script):
        self.script = list(script)
        self.bodies = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                n = int(self.headers["Content-Length"])
                stub.bodies.append((json.loads(self.rfile.read(n)), self.headers.get("Authorization")))
                status, body = stub.script.pop(0) if len(stub.script) > 1 else stub.script[0]
                data = json.dumps(body).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *a):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_port}/v1"
        threading.Thread(target=self.server.serve_forever, daemon=True).start()

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def stub():
    servers = []

    def make(script):
        s = Stub(script)
        servers.append(s)
        return s

    yield make
    for s in servers:
        s.close()


def chat_req(text="hi", images=()):
    return ChatRequest("sys", (ChatTurn("user", text, images),))


def test_http_retries_then_succeeds(stub):
    s = stub([(429, {}), (429, {}), (200, {"text": "ok"})])
    delays = []
    b = HttpBackend(s.url, key="k", sleep=delays.append)
    assert chat_complete(b, chat_req()) == "ok"
    assert b.attempts == [3]
    assert delays == [0.5, 1.0]
    assert s.bodies[0][1] == "Bearer k"


def test_http_unavailable_after_max_attempts(stub):
    s = stub([(500, {})])
    b = HttpBackend(s.url, sleep=lambda _: None)
    with pytest.raises(BackendUnavailable) as err:
        chat_complete(b, chat_req())
    assert err.value.attempts == 3
    assert len(s.bodies) == 3


def test_http_non_retryable_fails_fast(stub):
    s = stub([(400, {"error": "bad"})])
    b = HttpBackend(s.url, sleep=lambda _: None)
    with pytest.raises(BackendRejected) as err:
        chat_complete(b, chat_req())
    assert err.value.status == 400 and len(s.bodies) == 1


def test_http_sends_images_and_parses_openai_shape(stub):
    store = ImageStore()
    h = store.put(png_bytes())
    s = stub([(200, {"choices": [{"message": {"content": "hello"}}]})])
    b = HttpBackend(s.url, store=store)
    assert chat_complete(b, chat_req("look", (h,))) == "hello"
    payload = s.bodies[0][0]
    parts = payload["messages"][0]["content"]
    assert parts[1]["type"] == "image" and base64.b64decode(parts[1]["data"]) == store.get(h)
    assert payload["temperature"] == 0.0 and payload["seed"] == 0


def test_http_generate_stores_image(stub):
    img = png_bytes((1, 2, 3))
    s = stub([(200, {"image": base64.b64encode(img).decode()})])
    b = HttpBackend(s.url)
    h = generate_image(b, GenerateImageRequest("a fox", (), 64, 64, 7))
    assert b.store.get(h) == img
    assert b.provenance[0].seed == 7


def test_http_generate_rejects_garbage(stub):
    s = stub([(200, {"image": base64.b64encode(b"not an image").decode()})])
    with pytest.raises(ImageDecodeError):
        generate_image(HttpBackend(s.url), GenerateImageRequest("a fox"))


def test_backoff_non_decreasing():
    p = RetryPolicy(max_attempts=10)
    delays = [p.backoff(i) for i in range(1, 10)]
    assert delays == sorted(delays) and max(delays) == p.max_backoff
    with pytest.raises(ValueError):
        RetryPolicy(max_attempts=11)


def test_preconditions():
    with pytest.raises(PreconditionError):
        GenerateImageRequest("  ")
    with pytest.raises(PreconditionError):
        GenerateImageRequest("x", ("a", "b", "c"))
    with pytest.raises(PreconditionError):
        ChatRequest("s", ())


def test_env_config(monkeypatch):
    monkeypatch.delenv("WGA_BACKEND_URL", raising=False)
    monkeypatch.delenv("WGA_BACKEND_URL_JUDGE", raising=False)
    with pytest.raises(BackendError):
        backend_from_env("judge")
    monkeypatch.setenv("WGA_BACKEND_URL", "http://a")
    monkeypatch.setenv("WGA_BACKEND_URL_JUDGE", "http://j")
    monkeypatch.setenv("WGA_BACKEND_KEY_JUDGE", "jk")
    b = backend_from_env("judge")
    assert (b.url, b.key) == ("http://j", "jk")
    assert backend_from_env("chat").url == "http://a"


def test_mock_first_match_and_times():
    b = MockBackend([MockRule(("hello",), "one", times=1), MockRule(("hello",), "two")])
    assert [chat_complete(b, chat_req("hello")) for _ in range(3)] == ["one", "two", "two"]
    with pytest.raises(BackendRejected):
        chat_complete(b, chat_req("nothing"))
    assert len(captured(b, ChatRequest)) == 4


def test_mock_scripted_outage():
    b = MockBackend([MockRule(("x",), None, status=503)])
    with pytest.raises(BackendUnavailable):
        chat_complete(b, chat_req("x"))


def test_mock_image_deterministic():
    a, b = MockBackend(), MockBackend()
    req = GenerateImageRequest("a fox", (), 64, 64, 3)
    assert generate_image(a, req) == generate_image(b, req)
    assert generate_image(a, req) != generate_image(a, GenerateImageRequest("a fox", (), 64, 64, 4))


def test_load_mock_rules(tmp_path):
    p = tmp_path / "r.jsonl"
    p.write_text('// comment\n{"match": "a", "response": "b"}\n\n{"match": ["c", "d"], "times": 2}\n')
    rules = load_mock_rules(p)
    assert [r.match for r in rules] == [("a",), ("c", "d")]
    assert rules[1].times == 2
    p.write_text("{oops\n")
    with pytest.raises(ValueError, match="r.jsonl:1"):
        load_mock_rules(p)
