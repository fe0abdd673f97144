import json

import pytest
from hypothesis import given, strategies as st

from wga.protocol import (
    DuplicateTagError,
    InvalidArgumentError,
    MissingArgumentError,
    MissingBlockError,
    MissingKeyError,
    ScoreRangeError,
    ToolCall,
    ToolCallDecodeError,
    UnsupportedToolError,
    UnterminatedTagError,
    VerdictParseError,
    detect_language,
    extract_json_object,
    extract_tagged_blocks,
    image_reference_violations,
    language_violations,
    parse_eval_scores,
    parse_judge_verdict,
    parse_prompt_generation,
    parse_recaption_output,
    parse_tool_call,
    parse_tool_calls,
    references_used,
    render_tool_call,
)

EVAL_EXAMPLE = """{
  "clarity": 7,
  "content_quality": 8,
  "aesthetics": 7,
  "text_relevance_ip": 8,
  "rationale": "Evidence 1; Evidence 2"
}"""


def test_blocks_in_document_order_with_spans():
    text = "<think>a</think>\n<tool_call>{}</tool_call>"
    blocks = extract_tagged_blocks(text)
    assert [b.tag for b in blocks] == ["think", "tool_call"]
    for b in blocks:
        assert text[b.span[0]:b.span[1]] == b.content


def test_blocks_filtered_by_expected():
    text = "<think>x</think><recaption>y</recaption>"
    assert [b.tag for b in extract_tagged_blocks(text, {"recaption"})] == ["recaption"]


def test_nested_open_tag_is_content():
    blocks = extract_tagged_blocks("<think>I will use <response> later</think><response>ok</response>")
    assert blocks[0].content == "I will use <response> later"
    assert blocks[1].content == "ok"


def test_unterminated_raises_with_offset():
    with pytest.raises(UnterminatedTagError) as err:
        extract_tagged_blocks("hi <recaption>never closed", {"recaption"})
    assert err.value.offset == 3


def test_duplicate_singleton_rejected():
    with pytest.raises(DuplicateTagError):
        extract_tagged_blocks("<recaption>a</recaption><recaption>b</recaption>")


def test_multiple_tool_calls_allowed():
    text = ('<tool_call>{"name": "text_search", "arguments": {"q": "a"}}</tool_call>'
            '<tool_call>{"name": "search_image", "arguments": {"q": "b"}}</tool_call>')
    assert [c.name for c in parse_tool_calls(text)] == ["text_search", "search_image"]


@given(st.text(alphabet=st.characters(blacklist_characters="<>"), max_size=40),
       st.text(alphabet=st.characters(blacklist_characters="<>"), max_size=40))
def test_block_content_roundtrip(a, b):
    text = f"pre<think>{a}</think>mid<response>{b}</response>"
    blocks = extract_tagged_blocks(text)
    assert [x.content for x in blocks] == [a, b]


def test_recaption_output_split():
    think, body = parse_recaption_output("<think> why </think>\n<recaption> A cat from image_1. </recaption>")
    assert (think, body) == ("why", "A cat from image_1.")


def test_recaption_output_missing_block():
    with pytest.raises(MissingBlockError):
        parse_recaption_output("<think>only</think>")


def test_prompt_generation_blocks():
    g = parse_prompt_generation("<Image_Prompt>a fox</Image_Prompt><Tag_Name>Fox</Tag_Name><Language>en</Language>")
    assert (g.image_prompt, g.tag_name, g.language) == ("a fox", "Fox", "en")


def test_tool_call_defaults():
    c = parse_tool_call('{"name": "search_image", "arguments": {"q": "x"}}')
    assert (c.num, c.hl, c.location) == (8, "en", "United States")
    t = parse_tool_call('{"name": "text_search", "arguments": {"q": "x"}}')
    assert (t.top_k, t.hl) == (5, "en")


def test_tool_call_errors():
    with pytest.raises(UnsupportedToolError):
        parse_tool_call('{"name": "web_browse", "arguments": {"q": "x"}}')
    with pytest.raises(MissingArgumentError):
        parse_tool_call('{"name": "text_search", "arguments": {"hl": "en"}}')
    with pytest.raises(ToolCallDecodeError):
        parse_tool_call('{"name": "text_search", "arguments": ')
    with pytest.raises(InvalidArgumentError):
        parse_tool_call('{"name": "text_search", "arguments": {"q": "x", "top_k": 0}}')
    with pytest.raises(InvalidArgumentError):
        parse_tool_call('{"name": "text_search", "arguments": {"q": "x", "mode": "fast"}}')


def test_double_encoded_arguments():
    c = parse_tool_call(json.dumps({"name": "text_search", "arguments": json.dumps({"q": "x", "top_k": 3})}))
    assert c.top_k == 3


@given(st.text(min_size=1, max_size=30).filter(lambda s: s.strip()),
       st.sampled_from(["en", "zh"]), st.integers(1, 20))
def test_tool_call_render_roundtrip(q, hl, k):
    call = ToolCall("text_search", {"q": q, "hl": hl, "top_k": k})
    (back,) = parse_tool_calls(render_tool_call(call))
    assert back == call


def test_eval_scores_example():
    assert parse_eval_scores(EVAL_EXAMPLE).as_tuple() == (7, 8, 7, 8, "Evidence 1; Evidence 2")


def test_eval_scores_fenced_and_prose():
    text = "Here you go:\n```json\n" + EVAL_EXAMPLE + "\n```"
    assert parse_eval_scores(text).text_relevance_ip == 8
    with pytest.raises(VerdictParseError):
        parse_eval_scores(text, strict=True)


def test_eval_scores_fifth_key_ignored():
    obj = json.loads(EVAL_EXAMPLE)
    obj["overall"] = 9
    assert parse_eval_scores(json.dumps(obj)).clarity == 7


def test_eval_scores_errors():
    obj = json.loads(EVAL_EXAMPLE)
    with pytest.raises(ScoreRangeError):
        parse_eval_scores(json.dumps(dict(obj, clarity=11)))
    with pytest.raises(VerdictParseError):
        parse_eval_scores(json.dumps(dict(obj, clarity=7.5)))
    del obj["aesthetics"]
    with pytest.raises(MissingKeyError):
        parse_eval_scores(json.dumps(obj))
    with pytest.raises(VerdictParseError):
        parse_eval_scores("no json here")


def test_judge_verdict():
    v = parse_judge_verdict('{"score": 0, "reason": "wrong IP", "is_text_heavy": false, "has_watermark": true}')
    assert v.score == 0 and v.has_watermark and not v.is_text_heavy


def test_first_object_wins():
    assert extract_json_object('x {"a": 1} {"b": 2}') == {"a": 1}


@pytest.mark.parametrize("body,bad", [
    ("The otter from image_1 and scarf from image_2.", False),
    ("Use the first image for the face.", True),
    ("Copy the reference image colours.", True),
    ("See image_3 for details.", True),
    ("参考第一张图的颜色", True),
])
def test_image_reference_rules(body, bad):
    assert bool(image_reference_violations(body)) == bad


def test_references_used():
    assert references_used("image_1 then image_2 then image_1") == {"image_1", "image_2"}
    assert references_used("no refs") == frozenset()


def test_language_rules():
    assert language_violations("A bridge at sunset from image_1.", "en") == []
    assert language_violations("A bridge 桥 at sunset.", "en") == ["桥"]
    assert language_violations("夕阳下的石桥，来自 image_1。", "zh") == []
    assert language_violations("夕阳下的石桥 with lanterns along the railings", "zh")
    assert detect_language("石桥") == "zh" and detect_language("bridge") == "en"
