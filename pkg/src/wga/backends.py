"""Access to the external model roles: chat sampler, judge, image generator.

Two implementations share one surface: :class:`HttpBackend` speaks a small
JSON-over-POST protocol, :class:`MockBackend` replays scripted rules.  Nothing
here interprets tags or verdicts; callers get raw text or raw image bytes.
"""
from __future__ import annotations

import base64
import hashlib
import io
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

import requests
from PIL import Image

from .records import ImageStore

log = logging.getLogger(__name__)

ROLES = ("chat", "judge", "imagegen")


class BackendError(RuntimeError):
    pass


class BackendUnavailable(BackendError):
    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class BackendRejected(BackendError):
    def __init__(self, status: int, body: str):
        super().__init__(f"backend rejected request with status {status}: {body[:200]}")
        self.status = status
        self.body = body[:200]


class ImageDecodeError(BackendError):
    pass


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class ChatTurn:
    role: str
    text: str
    images: tuple[str, ...] = ()


@dataclass(frozen=True)
class ChatRequest:
    system: str
    turns: tuple[ChatTurn, ...]
    max_tokens: int = 2048
    temperature: float = 0.0
    seed: int | None = 0

    def __post_init__(self):
        object.__setattr__(self, "turns", tuple(self.turns))
        if not self.turns:
            raise PreconditionError("a chat request needs at least one turn")
        if self.temperature < 0:
            raise PreconditionError("temperature must be non-negative")

    def render(self) -> str:
        """Flat text view used for mock matching and call digests."""
        parts = [self.system]
        for t in self.turns:
            parts.append(f"[{t.role}] {t.text}")
            parts.extend(f"[image {h}]" for h in t.images)
        return "\n".join(parts)


@dataclass(frozen=True)
class GenerateImageRequest:
    caption: str
    reference_images: tuple[str, ...] = ()
    width: int = 1024
    height: int = 1024
    seed: int | None = 0

    def __post_init__(self):
        object.__setattr__(self, "reference_images", tuple(self.reference_images))
        if not self.caption or not self.caption.strip():
            raise PreconditionError("caption must be non-empty")
        if len(self.reference_images) > 2:
            raise PreconditionError(f"at most 2 reference images allowed, got {len(self.reference_images)}")

    def render(self) -> str:
        refs = ",".join(self.reference_images)
        return f"{self.caption}\n[refs {refs}]\n[{self.width}x{self.height} seed={self.seed}]"


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_backoff: float = 0.5
    max_backoff: float = 8.0
    retryable_statuses: frozenset[int] = frozenset({408, 429, 500, 502, 503, 504})

    def __post_init__(self):
        if not 1 <= self.max_attempts <= 10:
            raise ValueError("max_attempts must be within 1..10")

    def backoff(self, attempt: int) -> float:
        """Delay before retry number ``attempt`` (1-based); non-decreasing."""
        return min(self.max_backoff, self.base_backoff * 2 ** (attempt - 1))


@dataclass(frozen=True)
class Provenance:
    handle: str
    seed: int | None
    caption_sha256: str


class Backend:
    """Common state: image store, concurrency bound, call captures."""

    def __init__(self, store: ImageStore | None = None, concurrency: int = 4):
        self.store = store if store is not None else ImageStore()
        self._sem = threading.BoundedSemaphore(max(1, concurrency))
        self._lock = threading.Lock()
        self.requests: list[Any] = []
        self.provenance: list[Provenance] = []

    def _capture(self, request) -> None:
        with self._lock:
            self.requests.append(request)

    def chat(self, request: ChatRequest) -> str:
        raise NotImplementedError

    def generate(self, request: GenerateImageRequest) -> bytes:
        raise NotImplementedError


def chat_complete(backend: Backend, request: ChatRequest) -> str:
    with backend._sem:
        backend._capture(request)
        return backend.chat(request)


def _check_image(data: bytes) -> None:
    try:
        with Image.open(io.BytesIO(data)) as im:
            im.verify()
    except Exception as exc:
        raise ImageDecodeError(f"payload is not a decodable image: {exc}") from None


def generate_image(backend: Backend, request: GenerateImageRequest) -> str:
    """Generate an image and return its content-addressed handle."""
    if len(request.reference_images) > 2:
        raise PreconditionError("at most 2 reference images allowed")
    with backend._sem:
        backend._capture(request)
        data = backend.generate(request)
    _check_image(data)
    handle = backend.store.put(data)
    caption_sha = hashlib.sha256(request.caption.encode("utf-8")).hexdigest()
    with backend._lock:
        backend.provenance.append(Provenance(handle, request.seed, caption_sha))
    return handle


# ---------------------------------------------------------------------------
# HTTP


class HttpBackend(Backend):
    """POSTs JSON to ``url``.

    Chat payload: ``{"system", "messages": [{"role", "content": [parts]}],
    "max_tokens", "temperature", "seed"}`` where a part is
    ``{"type": "text", "text"}`` or ``{"type": "image", "data": <base64>}``;
    the reply is ``{"text": ...}``.  Image payload: ``{"caption",
    "reference_images": [<base64>], "width", "height", "seed"}``; the reply is
    ``{"image": <base64>}``.
    """

    def __init__(
        self,
        url: str,
        key: str | None = None,
        policy: RetryPolicy = RetryPolicy(),
        timeout: float = 120.0,
        store: ImageStore | None = None,
        concurrency: int = 4,
        sleep: Callable[[float], None] = time.sleep,
        session: requests.Session | None = None,
    ):
        super().__init__(store, concurrency)
        self.url = url
        self.key = key
        self.policy = policy
        self.timeout = timeout
        self.sleep = sleep
        self.session = session or requests.Session()
        self.attempts: list[int] = []  # attempts used per call
        self.delays: list[float] = []

    def _b64(self, handle: str) -> str:
        return base64.b64encode(self.store.get(handle)).decode("ascii")

    def _post(self, payload: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.key:
            headers["Authorization"] = f"Bearer {self.key}"
        last = "no attempt made"
        for attempt in range(1, self.policy.max_attempts + 1):
            try:
                resp = self.session.post(self.url, json=payload, headers=headers, timeout=self.timeout)
            except requests.RequestException as exc:
                last = f"transport error: {exc}"
            else:
                if 200 <= resp.status_code < 300:
                    with self._lock:
                        self.attempts.append(attempt)
                    try:
                        return resp.json()
                    except ValueError:
                        raise BackendRejected(resp.status_code, "response body is not JSON") from None
                if resp.status_code not in self.policy.retryable_statuses:
                    with self._lock:
                        self.attempts.append(attempt)
                    raise BackendRejected(resp.status_code, resp.text)
                last = f"status {resp.status_code}"
            if attempt < self.policy.max_attempts:
                delay = self.policy.backoff(attempt)
                with self._lock:
                    self.delays.append(delay)
                self.sleep(delay)
        with self._lock:
            self.attempts.append(self.policy.max_attempts)
        raise BackendUnavailable(f"{self.url} unavailable after {self.policy.max_attempts} attempts ({last})",
                                 self.policy.max_attempts)

    def chat(self, request: ChatRequest) -> str:
        messages = []
        for t in request.turns:
            content = [{"type": "text", "text": t.text}]
            content += [{"type": "image", "data": self._b64(h)} for h in t.images]
            messages.append({"role": t.role, "content": content})
        payload = {
            "system": request.system,
            "messages": messages,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "seed": request.seed,
        }
        body = self._post(payload)
        if isinstance(body.get("text"), str):
            return body["text"]
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise BackendRejected(200, f"reply has no text: {json.dumps(body)[:200]}") from None

    def generate(self, request: GenerateImageRequest) -> bytes:
        payload = {
            "caption": request.caption,
            "reference_images": [self._b64(h) for h in request.reference_images],
            "width": request.width,
            "height": request.height,
            "seed": request.seed,
        }
        body = self._post(payload)
        try:
            return base64.b64decode(body["image"], validate=True)
        except (KeyError, TypeError, ValueError):
            raise ImageDecodeError("reply has no base64 'image' field") from None


def backend_from_env(role: str, store: ImageStore | None = None, **kw) -> HttpBackend:
    """Build a live backend from ``WGA_BACKEND_URL_<ROLE>`` (falling back to
    ``WGA_BACKEND_URL``) and the matching ``WGA_BACKEND_KEY`` variables."""
    suffix = role.upper()
    url = os.environ.get(f"WGA_BACKEND_URL_{suffix}") or os.environ.get("WGA_BACKEND_URL")
    if not url:
        raise BackendError(f"no endpoint configured for role {role!r} (set WGA_BACKEND_URL_{suffix})")
    key = os.environ.get(f"WGA_BACKEND_KEY_{suffix}") or os.environ.get("WGA_BACKEND_KEY")
    return HttpBackend(url, key, store=store, **kw)


# ---------------------------------------------------------------------------
# scripted mocks


@dataclass
class MockRule:
    """``match`` is a substring (or list of substrings, all required) of the
    rendered request.  ``times`` limits how often the rule fires; ``status``
    simulates a failure instead of replying."""

    match: tuple[str, ...]
    response: str | None = None
    image_b64: str | None = None
    times: int | None = None
    status: int | None = None
    regex: bool = False
    used: int = field(default=0, compare=False)

    def matches(self, text: str) -> bool:
        if self.times is not None and self.used >= self.times:
            return False
        if self.regex:
            return all(re.search(m, text) for m in self.match)
        return all(m in text for m in self.match)

    @classmethod
    def from_dict(cls, d: dict) -> "MockRule":
        m = d.get("match", "")
        match = (m,) if isinstance(m, str) else tuple(m)
        return cls(match, d.get("response"), d.get("image_b64"), d.get("times"), d.get("status"), d.get("regex", False))


def load_mock_rules(path: str | os.PathLike) -> list[MockRule]:
    rules = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.lstrip().startswith("//"):
                continue
            try:
                rules.append(MockRule.from_dict(json.loads(line)))
            except (json.JSONDecodeError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad mock rule: {exc}") from None
    return rules


def synth_png(seed_text: str, size: int = 2) -> bytes:
    """A tiny PNG whose pixels derive from ``seed_text``; deterministic."""
    digest = hashlib.sha256(seed_text.encode("utf-8")).digest()
    im = Image.new("RGB", (size, size))
    px = [tuple(digest[(3 * i + k) % len(digest)] for k in range(3)) for i in range(size * size)]
    im.putdata(px)
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return buf.getvalue()


class MockBackend(Backend):
    """Replays scripted replies; the first matching rule wins.

    Image requests without a scripted image get :func:`synth_png` of the
    caption, references and seed, so equal requests give equal bytes.
    """

    def __init__(self, rules: Iterable[MockRule | dict] = (), store: ImageStore | None = None,
                 concurrency: int = 4, name: str = "mock"):
        super().__init__(store, concurrency)
        self.rules = [r if isinstance(r, MockRule) else MockRule.from_dict(r) for r in rules]
        self.name = name

    @classmethod
    def from_file(cls, path: str | os.PathLike, store: ImageStore | None = None, **kw) -> "MockBackend":
        return cls(load_mock_rules(path), store, name=Path(path).stem, **kw)

    @classmethod
    def fixed(cls, response: str, store: ImageStore | None = None) -> "MockBackend":
        return cls([MockRule(("",), response)], store)

    def _fire(self, text: str) -> MockRule | None:
        with self._lock:
            for rule in self.rules:
                if rule.matches(text):
                    rule.used += 1
                    return rule
        return None

    def _raise_status(self, rule: MockRule) -> None:
        if rule.status is not None and not 200 <= rule.status < 300:
            if rule.status in RetryPolicy().retryable_statuses:
                raise BackendUnavailable(f"{self.name}: scripted outage (status {rule.status})", 1)
            raise BackendRejected(rule.status, rule.response or "scripted rejection")

    def chat(self, request: ChatRequest) -> str:
        rule = self._fire(request.render())
        if rule is None:
            raise BackendRejected(404, f"{self.name}: no mock rule matched")
        self._raise_status(rule)
        if rule.response is None:
            raise BackendRejected(500, f"{self.name}: rule has no response")
        return rule.response

    def generate(self, request: GenerateImageRequest) -> bytes:
        rule = self._fire(request.render())
        if rule is not None:
            self._raise_status(rule)
            if rule.image_b64 is not None:
                return base64.b64decode(rule.image_b64)
        return synth_png(request.render())


def captured(backend: Backend, kind: type) -> list:
    return [r for r in backend.requests if isinstance(r, kind)]

