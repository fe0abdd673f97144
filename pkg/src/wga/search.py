"""The two agent tools, ``text_search`` and ``search_image``, over pluggable
providers, plus per-page summarisation."""
from __future__ import annotations

import io
import json
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from html.parser import HTMLParser
from pathlib import Path
from typing import Protocol
from urllib.parse import urlparse

import requests
from PIL import Image

from .backends import Backend, BackendError, ChatRequest, ChatTurn, chat_complete
from .protocol import ProtocolError, ToolCall, parse_summary_response
from .records import ImageCandidate, ImageStore, TextHit
from .templates import render_summary_prompt

log = logging.getLogger(__name__)


class ToolError(RuntimeError):
    """A provider failed; the agent records this in its trace and moves on."""


class FetchError(RuntimeError):
    pass


class SearchProvider(Protocol):
    def text(self, q: str, hl: str, top_k: int) -> list[dict]: ...

    def images(self, q: str, hl: str, num: int, location: str) -> list[dict]: ...

    def fetch(self, url: str) -> bytes: ...

    def page_text(self, hit: TextHit) -> str: ...


def normalize_query(q: str) -> str:
    return " ".join(q.casefold().split())


def _valid_url(url: str) -> bool:
    p = urlparse(url)
    return bool(p.scheme) and (bool(p.netloc) or p.scheme in ("file", "fixture"))


class _TextExtractor(HTMLParser):
    def __init__(self):
        super().__init__()
        self.parts: list[str] = []
        self._skip = 0

    def handle_starttag(self, tag, attrs):
        if tag in ("script", "style", "noscript"):
            self._skip += 1

    def handle_endtag(self, tag):
        if tag in ("script", "style", "noscript") and self._skip:
            self._skip -= 1

    def handle_data(self, data):
        if not self._skip and data.strip():
            self.parts.append(data.strip())


def html_to_text(html: str) -> str:
    p = _TextExtractor()
    p.feed(html)
    return "\n".join(p.parts)


class FixtureProvider:
    """Offline provider backed by a directory of JSON fixtures.

    Each file holds ``{"query", "kind": "text"|"image", "results": [...]}``
    and is looked up by normalised query.  A fixture with ``"error"`` instead
    of results simulates a provider failure.  Image urls of the form
    ``fixture://name.png`` resolve to ``<dir>/../images/name.png``.
    """

    def __init__(self, root: str | os.PathLike, image_dir: str | os.PathLike | None = None):
        self.root = Path(root)
        self.image_dir = Path(image_dir) if image_dir else self.root.parent / "images"
        self._index: dict[tuple[str, str], dict] = {}
        self._pages: dict[str, str] = {}
        for path in sorted(self.root.glob("*.json")):
            with open(path, encoding="utf-8") as fh:
                fx = json.load(fh)
            self._index[(fx.get("kind", "text"), normalize_query(fx["query"]))] = fx
            for r in fx.get("results", ()):
                if "content" in r:
                    self._pages[r["url"]] = r["content"]

    def _lookup(self, kind: str, q: str) -> list[dict]:
        fx = self._index.get((kind, normalize_query(q)))
        if fx is None:
            return []
        if "error" in fx:
            raise ToolError(f"provider error for {q!r}: {fx['error']}")
        return list(fx.get("results", ()))

    def text(self, q, hl, top_k):
        return self._lookup("text", q)

    def images(self, q, hl, num, location):
        return self._lookup("image", q)

    def fetch(self, url: str) -> bytes:
        p = urlparse(url)
        if p.scheme == "fixture":
            path = self.image_dir / (p.netloc + p.path)
        elif p.scheme == "file":
            path = Path(p.path)
        else:
            raise FetchError(f"fixture provider cannot fetch {url}")
        try:
            return path.read_bytes()
        except OSError as exc:
            raise FetchError(str(exc)) from None

    def page_text(self, hit: TextHit) -> str:
        return self._pages.get(hit.url, hit.snippet)


class LiveProvider:
    """Generic JSON search API at ``WGA_SEARCH_URL``.

    ``GET <url>/text?q&hl&top_k`` returns ``{"results": [{title, url,
    snippet}]}``; ``GET <url>/image?q&hl&num&location`` returns ``{"images":
    [{url, width, height}]}``.
    """

    def __init__(self, url: str, key: str | None = None, timeout: float = 20.0,
                 session: requests.Session | None = None):
        self.url = url.rstrip("/")
        self.key = key
        self.timeout = timeout
        self.session = session or requests.Session()

    @classmethod
    def from_env(cls) -> "LiveProvider":
        url = os.environ.get("WGA_SEARCH_URL")
        if not url:
            raise ToolError("WGA_SEARCH_URL is not set")
        return cls(url, os.environ.get("WGA_SEARCH_KEY"))

    def _get(self, path: str, params: dict) -> dict:
        headers = {"Authorization": f"Bearer {self.key}"} if self.key else {}
        try:
            resp = self.session.get(f"{self.url}/{path}", params=params, headers=headers, timeout=self.timeout)
            resp.raise_for_status()
            return resp.json()
        except (requests.RequestException, ValueError) as exc:
            raise ToolError(f"search provider failed: {exc}") from None

    def text(self, q, hl, top_k):
        return self._get("text", {"q": q, "hl": hl, "top_k": top_k}).get("results", [])

    def images(self, q, hl, num, location):
        return self._get("image", {"q": q, "hl": hl, "num": num, "location": location}).get("images", [])

    def fetch(self, url: str) -> bytes:
        try:
            resp = self.session.get(url, timeout=self.timeout)
            resp.raise_for_status()
        except requests.RequestException as exc:
            raise FetchError(str(exc)) from None
        return resp.content

    def page_text(self, hit: TextHit) -> str:
        try:
            raw = self.fetch(hit.url)
        except FetchError:
            return hit.snippet
        return html_to_text(raw.decode("utf-8", errors="replace"))


def text_search(provider: SearchProvider, call: ToolCall) -> list[TextHit]:
    """Run a ``text_search`` call; at most ``top_k`` hits in provider order."""
    if call.name != "text_search":
        raise ValueError(f"expected a text_search call, got {call.name}")
    try:
        rows = provider.text(call.q, call.hl, call.top_k)
    except ToolError:
        raise
    except Exception as exc:  # provider bugs must not abort a trajectory
        raise ToolError(f"provider failed: {exc}") from None
    hits = []
    for r in rows[: call.top_k]:
        url = r.get("url", "")
        if not _valid_url(url):
            log.warning("dropping text hit with malformed url %r", url)
            continue
        hits.append(TextHit(r.get("title", ""), url, r.get("snippet", "")))
    return hits


def _image_size(data: bytes) -> tuple[int, int] | None:
    try:
        with Image.open(io.BytesIO(data)) as im:
            return im.size
    except Exception:
        return None


def search_image(provider: SearchProvider, call: ToolCall, store: ImageStore | None = None,
                 concurrency: int = 4) -> list[ImageCandidate]:
    """Run a ``search_image`` call; candidates get ordinal ids 0..n-1.

    A candidate whose bytes cannot be fetched (or decoded) is kept with
    ``data`` and ``image_ref`` absent.
    """
    if call.name != "search_image":
        raise ValueError(f"expected a search_image call, got {call.name}")
    try:
        rows = provider.images(call.q, call.hl, call.num, call.location)
    except ToolError:
        raise
    except Exception as exc:
        raise ToolError(f"provider failed: {exc}") from None
    rows = rows[: call.num]

    def fetch(row):
        try:
            data = provider.fetch(row["url"])
        except Exception as exc:
            log.info("image fetch failed for %s: %s", row.get("url"), exc)
            return None
        return data if _image_size(data) else None

    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        blobs = list(pool.map(fetch, rows))

    out = []
    for i, (row, data) in enumerate(zip(rows, blobs)):
        if data is None:
            out.append(ImageCandidate(i, row.get("url", ""), None, row.get("width"), row.get("height")))
            continue
        w, h = _image_size(data)
        ref = store.put(data) if store is not None else None
        out.append(ImageCandidate(i, row.get("url", ""), ref, w, h, data=data))
    return out


def summarize_page(backend: Backend, query: str, title: str, content: str, seed: int | None = 0) -> str | None:
    """Ask the chat backend for a short query-focused summary of a page.

    Only the first 2000 characters of ``content`` are shown to the model.
    Returns ``None`` when the backend fails or replies without ``<response>``.
    """
    prompt = render_summary_prompt(query, title, content)
    request = ChatRequest(system="", turns=(ChatTurn("user", prompt),), seed=seed)
    try:
        return parse_summary_response(chat_complete(backend, request))
    except (BackendError, ProtocolError) as exc:
        log.info("summary unavailable for %r: %s", title, exc)
        return None


_SLUG_RE = re.compile(r"[^\w]+", re.UNICODE)


def fixture_filename(kind: str, query: str) -> str:
    return f"{kind}_{_SLUG_RE.sub('_', normalize_query(query)).strip('_')}.json"
