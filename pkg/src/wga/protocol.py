"""Parsing and rendering of the agent's structured text formats.

Covers the flat tag vocabulary used by the prompts (``<think>``,
``<tool_call>``, ``<recaption>``, ``<response>``, ``<Image_Prompt>``,
``<Tag_Name>``, ``<Language>``), tool-call JSON payloads, and the JSON
verdicts returned by judge models.  Every parser is pure and either returns a
value or raises a subclass of :class:`ProtocolError`.

Offsets reported in spans and errors are ``str`` indices (code points).
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

TAGS = ("think", "tool_call", "recaption", "response", "Image_Prompt", "Tag_Name", "Language")
SINGLETON_TAGS = frozenset(t for t in TAGS if t != "tool_call")

_OPEN_RE = re.compile(r"<(" + "|".join(TAGS) + r")>")


class ProtocolError(ValueError):
    """Base class for every classified parse failure."""


class UnterminatedTagError(ProtocolError):
    def __init__(self, tag: str, offset: int):
        super().__init__(f"unterminated <{tag}> opened at offset {offset}")
        self.tag = tag
        self.offset = offset


class DuplicateTagError(ProtocolError):
    def __init__(self, tag: str, offset: int):
        super().__init__(f"duplicate <{tag}> block at offset {offset}; tag may appear once")
        self.tag = tag
        self.offset = offset


class MissingBlockError(ProtocolError):
    def __init__(self, tag: str):
        super().__init__(f"missing mandatory <{tag}> block")
        self.tag = tag


class ToolCallDecodeError(ProtocolError):
    pass


class UnsupportedToolError(ProtocolError):
    def __init__(self, name: Any):
        super().__init__(f"unsupported tool {name!r}")
        self.name = name


class MissingArgumentError(ProtocolError):
    def __init__(self, argument: str):
        super().__init__(f"missing required argument {argument!r}")
        self.argument = argument


class InvalidArgumentError(ProtocolError):
    pass


class VerdictParseError(ProtocolError):
    pass


class ScoreRangeError(ProtocolError):
    def __init__(self, key: str, value: Any):
        super().__init__(f"{key}={value!r} outside the 0..10 scale")
        self.key = key
        self.value = value


class MissingKeyError(ProtocolError):
    def __init__(self, key: str):
        super().__init__(f"missing required key {key!r}")
        self.key = key


# ---------------------------------------------------------------------------
# tagged blocks


@dataclass(frozen=True)
class TaggedBlock:
    tag: str
    content: str
    span: tuple[int, int]


def extract_tagged_blocks(text: str, expected: Iterable[str] | None = None) -> list[TaggedBlock]:
    """Return the blocks of ``text`` whose tag is in ``expected``, in document order.

    Blocks never nest: once a tag opens, everything up to its matching close
    tag is content.  Vocabulary tags outside ``expected`` are skipped over
    (their content is not scanned) but not returned; ``expected=None`` returns
    every vocabulary tag.  An unterminated expected tag raises
    :class:`UnterminatedTagError`; a repeated singleton raises
    :class:`DuplicateTagError`.
    """
    wanted = set(TAGS) if expected is None else set(expected)
    blocks: list[TaggedBlock] = []
    seen: set[str] = set()
    pos = 0
    while True:
        m = _OPEN_RE.search(text, pos)
        if m is None:
            break
        tag = m.group(1)
        close = f"</{tag}>"
        end = text.find(close, m.end())
        if end < 0:
            if tag in wanted:
                raise UnterminatedTagError(tag, m.start())
            pos = m.end()
            continue
        if tag in wanted:
            if tag in SINGLETON_TAGS and tag in seen:
                raise DuplicateTagError(tag, m.start())
            seen.add(tag)
            blocks.append(TaggedBlock(tag, text[m.end():end], (m.end(), end)))
        pos = end + len(close)
    return blocks


def _require(blocks: list[TaggedBlock], tag: str) -> TaggedBlock:
    for b in blocks:
        if b.tag == tag:
            return b
    raise MissingBlockError(tag)


def parse_recaption_output(text: str) -> tuple[str, str]:
    """Split a recaption-model reply into ``(think, recaption_body)``."""
    blocks = extract_tagged_blocks(text, {"think", "recaption"})
    think = _require(blocks, "think").content.strip()
    body = _require(blocks, "recaption").content.strip()
    if not body:
        raise MissingBlockError("recaption")
    return think, body


def parse_summary_response(text: str) -> str:
    blocks = extract_tagged_blocks(text, {"think", "response"})
    return _require(blocks, "response").content.strip()


@dataclass(frozen=True)
class GeneratedPrompt:
    image_prompt: str
    tag_name: str
    language: str


def parse_prompt_generation(text: str) -> GeneratedPrompt:
    blocks = extract_tagged_blocks(text, {"Image_Prompt", "Tag_Name", "Language"})
    lang = _require(blocks, "Language").content.strip()
    if lang not in ("zh", "en"):
        raise InvalidArgumentError(f"<Language> must be 'zh' or 'en', got {lang!r}")
    return GeneratedPrompt(
        _require(blocks, "Image_Prompt").content.strip(),
        _require(blocks, "Tag_Name").content.strip(),
        lang,
    )


# ---------------------------------------------------------------------------
# tool calls

TOOL_SCHEMAS: dict[str, dict[str, Any]] = {
    "text_search": {"q": None, "hl": "en", "top_k": 5},
    "search_image": {"q": None, "location": "United States", "hl": "en", "num": 8},
}
_INT_ARGS = ("top_k", "num")


@dataclass(frozen=True)
class ToolCall:
    """A tool invocation.  ``arguments`` holds only the explicitly given keys;
    schema defaults are resolved by the accessors."""

    name: str
    arguments: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "arguments", dict(self.arguments))
        _validate_call(self.name, self.arguments)

    def __hash__(self):
        return hash((self.name, tuple(sorted(self.arguments.items()))))

    def get(self, key: str) -> Any:
        if key in self.arguments:
            return self.arguments[key]
        return TOOL_SCHEMAS[self.name].get(key)

    @property
    def q(self) -> str:
        return self.arguments["q"]

    @property
    def hl(self) -> str:
        return self.get("hl")

    @property
    def top_k(self) -> int | None:
        return self.get("top_k")

    @property
    def num(self) -> int | None:
        return self.get("num")

    @property
    def location(self) -> str | None:
        return self.get("location")

    def effective_arguments(self) -> dict[str, Any]:
        out = {k: v for k, v in TOOL_SCHEMAS[self.name].items() if v is not None}
        out.update(self.arguments)
        return out


def _validate_call(name: Any, args: Mapping[str, Any]) -> None:
    if name not in TOOL_SCHEMAS:
        raise UnsupportedToolError(name)
    schema = TOOL_SCHEMAS[name]
    for key, value in args.items():
        if key not in schema:
            raise InvalidArgumentError(f"{name} has no argument {key!r}")
        if key in _INT_ARGS:
            if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
                raise InvalidArgumentError(f"{key} must be a positive integer, got {value!r}")
        elif not isinstance(value, str):
            raise InvalidArgumentError(f"{key} must be a string, got {value!r}")
    q = args.get("q")
    if not q or not str(q).strip():
        raise MissingArgumentError("q")


def parse_tool_call(block_content: str) -> ToolCall:
    """Decode the interior of a ``<tool_call>`` block."""
    try:
        payload = json.loads(block_content)
    except json.JSONDecodeError as exc:
        raise ToolCallDecodeError(f"tool call is not JSON: {exc}") from None
    if not isinstance(payload, dict):
        raise ToolCallDecodeError("tool call must be a JSON object")
    name = payload.get("name")
    if name not in TOOL_SCHEMAS:
        raise UnsupportedToolError(name)
    args = payload.get("arguments", {})
    if isinstance(args, str):
        # some providers double-encode arguments
        try:
            args = json.loads(args)
        except json.JSONDecodeError as exc:
            raise ToolCallDecodeError(f"arguments string is not JSON: {exc}") from None
    if not isinstance(args, dict):
        raise ToolCallDecodeError("arguments must be a JSON object")
    if "q" not in args:
        raise MissingArgumentError("q")
    return ToolCall(name, args)


def parse_tool_calls(text: str) -> list[ToolCall]:
    return [parse_tool_call(b.content) for b in extract_tagged_blocks(text, {"tool_call"})]


def render_tool_call(call: ToolCall) -> str:
    body = json.dumps({"name": call.name, "arguments": dict(call.arguments)}, ensure_ascii=False)
    return f"<tool_call>{body}</tool_call>"


# ---------------------------------------------------------------------------
# judge JSON

_FENCE_RE = re.compile(r"```[A-Za-z0-9_-]*")


def extract_json_object(text: str, strict: bool = False) -> dict:
    """Return the first JSON object in ``text``.

    Lenient mode drops markdown fences and skips surrounding prose; strict mode
    requires the whole string to be one object.
    """
    if strict:
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise VerdictParseError(f"not a JSON document: {exc}") from None
        if not isinstance(obj, dict):
            raise VerdictParseError("JSON document is not an object")
        return obj
    cleaned = _FENCE_RE.sub("", text)
    decoder = json.JSONDecoder()
    pos = cleaned.find("{")
    while pos >= 0:
        try:
            obj, _ = decoder.raw_decode(cleaned, pos)
        except json.JSONDecodeError:
            pos = cleaned.find("{", pos + 1)
            continue
        if isinstance(obj, dict):
            return obj
        pos = cleaned.find("{", pos + 1)
    raise VerdictParseError("no decodable JSON object found")


def _score(obj: Mapping[str, Any], key: str) -> int:
    if key not in obj:
        raise MissingKeyError(key)
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise VerdictParseError(f"{key} must be an integer, got {value!r}")
    if isinstance(value, float):
        if not value.is_integer():
            raise VerdictParseError(f"{key} must be an integer, got {value!r}")
        value = int(value)
    if not 0 <= value <= 10:
        raise ScoreRangeError(key, value)
    return value


@dataclass(frozen=True)
class JudgeVerdict:
    score: int
    reason: str = ""
    is_text_heavy: bool = False
    has_watermark: bool = False

    def __post_init__(self):
        if isinstance(self.score, bool) or not isinstance(self.score, int) or not 0 <= self.score <= 10:
            raise ScoreRangeError("score", self.score)


def parse_judge_verdict(text: str, strict: bool = False) -> JudgeVerdict:
    obj = extract_json_object(text, strict)
    try:
        score = _score(obj, "score")
    except MissingKeyError:
        raise VerdictParseError("verdict has no 'score'") from None
    return JudgeVerdict(
        score=score,
        reason=str(obj.get("reason", "")),
        is_text_heavy=bool(obj.get("is_text_heavy", False)),
        has_watermark=bool(obj.get("has_watermark", False)),
    )


EVAL_SCORE_KEYS = ("clarity", "content_quality", "aesthetics", "text_relevance_ip")


@dataclass(frozen=True)
class EvalScores:
    clarity: int
    content_quality: int
    aesthetics: int
    text_relevance_ip: int
    rationale: str

    def __post_init__(self):
        for key in EVAL_SCORE_KEYS:
            v = getattr(self, key)
            if isinstance(v, bool) or not isinstance(v, int) or not 0 <= v <= 10:
                raise ScoreRangeError(key, v)
        if not self.rationale:
            raise MissingKeyError("rationale")

    def as_tuple(self) -> tuple:
        return (self.clarity, self.content_quality, self.aesthetics, self.text_relevance_ip, self.rationale)


def parse_eval_scores(text: str, strict: bool = False) -> EvalScores:
    """Parse an evaluation reply.  The four score keys and ``rationale`` are
    required; any other key is ignored."""
    obj = extract_json_object(text, strict)
    scores = [_score(obj, k) for k in EVAL_SCORE_KEYS]
    if "rationale" not in obj:
        raise MissingKeyError("rationale")
    rationale = obj["rationale"]
    if not isinstance(rationale, str) or not rationale.strip():
        raise VerdictParseError("rationale must be a non-empty string")
    return EvalScores(*scores, rationale)


# ---------------------------------------------------------------------------
# recaption text rules

_VAGUE_PATTERNS = [
    r"\bthe (?:first|second|third|left|right|top|bottom|above|below|other) (?:image|picture|photo|reference)s?\b",
    r"\breference (?:image|picture|photo)s?\b",
    r"\b(?:first|second) (?:reference )?(?:image|picture|photo)\b",
    r"\b(?:this|that|these|those) (?:image|picture|photo)s?\b",
    r"第[一二三1-3]张(?:图|图片|参考图|照片)?",
    r"参考(?:图片|图像|图)",
    r"上(?:面|方)的?图",
]
_VAGUE_RE = re.compile("|".join(_VAGUE_PATTERNS), re.IGNORECASE)
_IMAGE_TOKEN_RE = re.compile(r"image[\s_-]*\d+", re.IGNORECASE)
_ALLOWED_TOKENS = ("image_1", "image_2")
_CJK_RE = re.compile(r"[㐀-䶿一-鿿豈-﫿]")
_LATIN_RUN_RE = re.compile(r"[A-Za-z]+(?:[\s,;:'\"-]+[A-Za-z]+){2,}")


def image_reference_violations(body: str) -> list[str]:
    """Phrases in ``body`` that refer to evidence images other than by the
    literal tokens ``image_1``/``image_2``."""
    bad = [m.group(0) for m in _VAGUE_RE.finditer(body)]
    for m in _IMAGE_TOKEN_RE.finditer(body):
        if m.group(0) not in _ALLOWED_TOKENS:
            bad.append(m.group(0))
    return bad


def references_used(body: str) -> frozenset[str]:
    return frozenset(t for t in _ALLOWED_TOKENS if re.search(rf"(?<![A-Za-z0-9_]){t}(?![A-Za-z0-9_])", body))


def language_violations(body: str, language: str) -> list[str]:
    """Fragments of ``body`` written in the wrong language."""
    stripped = _IMAGE_TOKEN_RE.sub(" ", body)
    if language == "en":
        runs = re.findall(r"[㐀-䶿一-鿿豈-﫿　-〿＀-￯]+", stripped)
        return [r for r in runs if _CJK_RE.search(r)]
    if language == "zh":
        if not _CJK_RE.search(stripped):
            return [body[:40]]
        # isolated Latin names are tolerated; English sentences are not
        return [m.group(0) for m in _LATIN_RUN_RE.finditer(stripped)]
    raise ValueError(f"unknown language {language!r}")


def detect_language(text: str) -> str:
    return "zh" if _CJK_RE.search(text) else "en"


DIMENSION_KEYS = ("identity_consistency", "subject_salience", "image_clarity", "watermark_cleanliness")


def parse_dimension_scores(text: str, strict: bool = False) -> dict[str, float]:
    """Read the four per-dimension scores (0..10, reals allowed) from a judge reply."""
    obj = extract_json_object(text, strict)
    out = {}
    for key in DIMENSION_KEYS:
        if key not in obj:
            raise MissingKeyError(key)
        v = obj[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise VerdictParseError(f"{key} must be a number, got {v!r}")
        if not 0 <= v <= 10:
            raise ScoreRangeError(key, v)
        out[key] = float(v)
    return out
