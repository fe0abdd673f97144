import io
import json
from pathlib import Path

import pytest
from PIL import Image

from wga.backends import MockBackend, MockRule
from wga.pipeline import PipelineConfig
from wga.records import ImageStore, TextHit, UserPrompt

MOCK_DIR = Path(__file__).resolve().parents[1] / "src" / "wga" / "data" / "mock"

THINK = "planning step of a world-grounded"
TEXT = "Issue exactly one text_search"
VISUAL = "Issue exactly one search_image"
SUMMARY = "provide a concise summary that is relevant"
RECAP = "professional visual language reasoning assistant"
EVAL = "image evaluation assistant"
JUDGE = "expert Image Quality Assessor"


def png_bytes(color=(10, 20, 30), size=(8, 6)) -> bytes:
    buf = io.BytesIO()
    Image.new("RGB", size, color).save(buf, format="PNG")
    return buf.getvalue()


class DictProvider:
    """In-memory search provider for tests."""

    def __init__(self, text=None, images=None, blobs=None, fail=False):
        self.text_rows = text or []
        self.image_rows = images or []
        self.blobs = blobs or {}
        self.fail = fail
        self.calls = []

    def text(self, q, hl, top_k):
        self.calls.append(("text", q, hl, top_k))
        if self.fail:
            raise TimeoutError("provider timed out")
        return list(self.text_rows)

    def images(self, q, hl, num, location):
        self.calls.append(("image", q, hl, num, location))
        if self.fail:
            raise TimeoutError("provider timed out")
        return list(self.image_rows)

    def fetch(self, url):
        if url not in self.blobs:
            raise OSError(f"404 {url}")
        return self.blobs[url]

    def page_text(self, hit: TextHit):
        return hit.snippet


def tool_reply(name, q):
    return "<think>t</think><tool_call>" + json.dumps({"name": name, "arguments": {"q": q}}) + "</tool_call>"


def verdict(score, text_heavy=False, watermark=False):
    return json.dumps({"score": score, "reason": "r", "is_text_heavy": text_heavy, "has_watermark": watermark})


def eval_reply(rel):
    return json.dumps({"clarity": 7, "content_quality": 7, "aesthetics": 7, "text_relevance_ip": rel,
                       "rationale": "a; b"})


def scripted(prompt: UserPrompt, *, units=("identity details",), text_q="text query", image_q="image query",
             hits=2, scores=(7, 9, 8), recap_body="A scene showing the subject from image_1 and image_2.",
             recap_think="plan", eval_seq=(8,), judge_outage=False, store=None, **cfg) -> PipelineConfig:
    """A pipeline wired to scripted mocks for one prompt.

    ``eval_seq`` lists the relevance score of successive verification judge
    calls; the last value repeats.
    """
    store = store if store is not None else ImageStore()
    key = prompt.text
    bullet = "\n".join(f"- {u}" for u in units)
    chat = [
        MockRule((THINK, key), f"<think>r</think><response>{bullet}</response>"),
        MockRule((VISUAL, key), tool_reply("search_image", image_q)),
        MockRule((TEXT, key), tool_reply("text_search", text_q)),
        MockRule((SUMMARY,), "<think>s</think><response>summary text</response>"),
        MockRule((RECAP,), f"<think>{recap_think}</think><recaption>{recap_body}</recaption>"),
    ]
    blobs, image_rows, judge = {}, [], []
    for i, _ in enumerate(eval_seq[:-1]):
        judge.append(MockRule((EVAL,), eval_reply(eval_seq[i]), times=1))
    judge.append(MockRule((EVAL,), eval_reply(eval_seq[-1])))
    for i, s in enumerate(scores):
        data = png_bytes((i * 40 % 256, 100, 200), (8 + i, 6))
        url = f"https://img.example/{i}.png"
        blobs[url] = data
        image_rows.append({"url": url})
        h = store.put(data)
        if judge_outage:
            judge.append(MockRule((JUDGE, f"[image {h}]"), None, status=503))
        else:
            judge.append(MockRule((JUDGE, f"[image {h}]"), verdict(s)))
    text_rows = [{"title": f"T{i}", "url": f"https://w.example/{i}", "snippet": f"snippet {i}"} for i in range(hits)]
    provider = DictProvider(text_rows, image_rows, blobs)
    return PipelineConfig(
        chat=MockBackend(chat, store, name="chat"),
        judge=MockBackend(judge, store, name="judge"),
        imagegen=MockBackend([], store, name="imagegen"),
        search=provider,
        store=store,
        **cfg,
    )


@pytest.fixture
def prompt():
    return UserPrompt("p1", "Bolt the Otter waving a torch on a pier", "en", "Mascot", "Bolt the Otter", "Canada")


@pytest.fixture
def mock_dir():
    return MOCK_DIR


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
