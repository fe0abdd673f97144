import pytest

from conftest import DictProvider, png_bytes
from wga.backends import MockBackend, MockRule
from wga.protocol import ToolCall
from wga.records import ImageStore, TextHit
from wga.search import FixtureProvider, ToolError, html_to_text, search_image, summarize_page, text_search


def test_text_search_top_k_and_order():
    rows = [{"title": f"t{i}", "url": f"https://x/{i}", "snippet": "s"} for i in range(8)]
    p = DictProvider(text=rows)
    hits = text_search(p, ToolCall("text_search", {"q": "fox"}))
    assert [h.title for h in hits] == ["t0", "t1", "t2", "t3", "t4"]
    assert p.calls[0] == ("text", "fox", "en", 5)


def test_text_search_drops_malformed_urls():
    rows = [{"title": "a", "url": "not a url"}, {"title": "b", "url": "https://ok"}]
    assert [h.title for h in text_search(DictProvider(text=rows), ToolCall("text_search", {"q": "x"}))] == ["b"]


def test_provider_failure_becomes_tool_error():
    with pytest.raises(ToolError):
        text_search(DictProvider(fail=True), ToolCall("text_search", {"q": "x"}))
    with pytest.raises(ToolError):
        search_image(DictProvider(fail=True), ToolCall("search_image", {"q": "x"}))


def test_search_image_ids_and_unfetchable():
    blobs = {"https://i/0": png_bytes(size=(5, 4)), "https://i/2": b"garbage"}
    rows = [{"url": "https://i/0"}, {"url": "https://i/1"}, {"url": "https://i/2"}]
    store = ImageStore()
    out = search_image(DictProvider(images=rows, blobs=blobs), ToolCall("search_image", {"q": "x", "num": 3}), store)
    assert [c.id for c in out] == [0, 1, 2]
    assert out[0].fetched and (out[0].width, out[0].height) == (5, 4) and out[0].image_ref in store
    assert not out[1].fetched and not out[2].fetched


def test_search_image_num_limit():
    rows = [{"url": f"https://i/{i}"} for i in range(12)]
    p = DictProvider(images=rows)
    assert len(search_image(p, ToolCall("search_image", {"q": "x"}))) == 8
    assert p.calls[0] == ("image", "x", "en", 8, "United States")


def test_wrong_tool_rejected():
    with pytest.raises(ValueError):
        text_search(DictProvider(), ToolCall("search_image", {"q": "x"}))


def test_fixture_provider(mock_dir):
    p = FixtureProvider(mock_dir / "search")
    hits = text_search(p, ToolCall("text_search", {"q": "  bolt the OTTER lakeside games mascot "}))
    assert hits and hits[0].title.startswith("Bolt the Otter")
    assert "blue scarf" in p.page_text(hits[0])
    imgs = search_image(p, ToolCall("search_image", {"q": "Bolt the Otter mascot"}))
    assert [c.fetched for c in imgs] == [True, True, True, True, False]
    assert text_search(p, ToolCall("text_search", {"q": "unknown thing"})) == []


def test_fixture_error_entry(tmp_path):
    (tmp_path / "e.json").write_text('{"query": "boom", "kind": "text", "error": "quota"}')
    with pytest.raises(ToolError, match="quota"):
        text_search(FixtureProvider(tmp_path), ToolCall("text_search", {"q": "boom"}))


def test_summarize_page():
    b = MockBackend([MockRule(("Webpage Title: T",), "<think>x</think><response>short</response>")])
    assert summarize_page(b, "q", "T", "long page " * 500) == "short"
    # only the first 2000 characters of the page reach the model
    assert b.requests[0].turns[0].text.count("long page") == 2000 // len("long page ")
    assert summarize_page(MockBackend([MockRule(("",), "no tags")]), "q", "T", "c") is None
    assert summarize_page(MockBackend(), "q", "T", "c") is None


def test_html_to_text():
    assert html_to_text("<html><script>x()</script><p>Hello</p><p>World</p></html>") == "Hello\nWorld"


def test_page_text_fallback_is_snippet():
    assert DictProvider().page_text(TextHit("t", "https://x", "snip")) == "snip"
