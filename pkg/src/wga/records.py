"""Trajectory and SFT record types, their validation, and JSONL persistence."""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator

from .protocol import (
    JudgeVerdict,
    image_reference_violations,
    language_violations,
)

LANGUAGES = ("zh", "en")
MAX_TRIALS = 5
REFERENCE_TOKENS = frozenset({"image_1", "image_2"})
CHINESE_REGIONS = frozenset(
    {"china", "mainland china", "prc", "hong kong", "taiwan", "macau", "macao", "中国", "中国大陆", "香港", "台湾", "澳门"}
)


def is_chinese_region(country: str | None) -> bool:
    return bool(country) and country.strip().lower() in CHINESE_REGIONS


@dataclass(frozen=True)
class UserPrompt:
    id: str
    text: str
    language: str = "en"
    category: str | None = None
    ip_name: str | None = None
    country: str | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "language": self.language,
            "category": self.category,
            "ip_name": self.ip_name,
            "country": self.country,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UserPrompt":
        return cls(
            id=str(d["id"]),
            text=d["text"],
            language=d.get("language", "en"),
            category=d.get("category"),
            ip_name=d.get("ip_name"),
            country=d.get("country"),
        )


@dataclass(frozen=True)
class GapAssessment:
    needs_research: bool
    missing_units: tuple[str, ...] = ()
    raw_reasoning: str = ""

    def to_dict(self) -> dict:
        return {
            "needs_research": self.needs_research,
            "missing_units": list(self.missing_units),
            "raw_reasoning": self.raw_reasoning,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GapAssessment":
        return cls(d["needs_research"], tuple(d.get("missing_units", ())), d.get("raw_reasoning", ""))


@dataclass(frozen=True)
class TextHit:
    title: str
    url: str
    snippet: str = ""
    summary: str | None = None

    def to_dict(self) -> dict:
        return {"title": self.title, "url": self.url, "snippet": self.snippet, "summary": self.summary}

    @classmethod
    def from_dict(cls, d: dict) -> "TextHit":
        return cls(d["title"], d["url"], d.get("snippet", ""), d.get("summary"))


@dataclass(frozen=True)
class TextualTrace:
    query: str = ""
    evidence: tuple[TextHit, ...] = ()
    error: str | None = None

    def to_dict(self) -> dict:
        return {"query": self.query, "evidence": [h.to_dict() for h in self.evidence], "error": self.error}

    @classmethod
    def from_dict(cls, d: dict) -> "TextualTrace":
        return cls(d.get("query", ""), tuple(TextHit.from_dict(h) for h in d.get("evidence", ())), d.get("error"))


@dataclass(frozen=True)
class ImageCandidate:
    """One retrieved image.  ``id`` is the ordinal in provider order.

    ``data`` holds fetched bytes in memory only; persisted records carry the
    content hash in ``image_ref``.
    """

    id: int
    url: str
    image_ref: str | None = None
    width: int | None = None
    height: int | None = None
    data: bytes | None = field(default=None, compare=False, repr=False)

    @property
    def fetched(self) -> bool:
        return self.data is not None or self.image_ref is not None

    def to_dict(self) -> dict:
        return {"id": self.id, "url": self.url, "image_ref": self.image_ref, "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "ImageCandidate":
        return cls(d["id"], d["url"], d.get("image_ref"), d.get("width"), d.get("height"))


DIMENSIONS = ("identity_consistency", "subject_salience", "image_clarity", "watermark_cleanliness")


@dataclass(frozen=True)
class DimensionScores:
    identity_consistency: float
    subject_salience: float
    image_clarity: float
    watermark_cleanliness: float

    def __post_init__(self):
        for name in DIMENSIONS:
            v = getattr(self, name)
            if not 0.0 <= v <= 10.0:
                raise ValueError(f"{name}={v} outside [0, 10]")

    def values(self) -> tuple[float, float, float, float]:
        return tuple(getattr(self, n) for n in DIMENSIONS)

    def to_dict(self) -> dict:
        return {n: getattr(self, n) for n in DIMENSIONS}

    @classmethod
    def from_dict(cls, d: dict) -> "DimensionScores":
        return cls(*(d[n] for n in DIMENSIONS))


def _verdict_to_dict(v: JudgeVerdict) -> dict:
    return {"score": v.score, "reason": v.reason, "is_text_heavy": v.is_text_heavy, "has_watermark": v.has_watermark}


@dataclass(frozen=True)
class ScoredCandidate:
    candidate: ImageCandidate
    aggregate: float
    dims: DimensionScores | None = None
    single_score: JudgeVerdict | None = None
    rejected: bool = False
    reject_reason: str | None = None

    @property
    def id(self) -> int:
        return self.candidate.id

    def to_dict(self) -> dict:
        return {
            "candidate": self.candidate.to_dict(),
            "dims": self.dims.to_dict() if self.dims else None,
            "single_score": _verdict_to_dict(self.single_score) if self.single_score else None,
            "aggregate": self.aggregate,
            "rejected": self.rejected,
            "reject_reason": self.reject_reason,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScoredCandidate":
        return cls(
            candidate=ImageCandidate.from_dict(d["candidate"]),
            aggregate=d["aggregate"],
            dims=DimensionScores.from_dict(d["dims"]) if d.get("dims") else None,
            single_score=JudgeVerdict(**d["single_score"]) if d.get("single_score") else None,
            rejected=d.get("rejected", False),
            reject_reason=d.get("reject_reason"),
        )


@dataclass(frozen=True)
class VisualTrace:
    query: str = ""
    candidates: tuple[ScoredCandidate, ...] = ()
    selected: tuple[int, ...] = ()
    low_evidence: bool = False
    error: str | None = None

    def selected_candidates(self) -> list[ScoredCandidate]:
        by_id = {c.id: c for c in self.candidates}
        return [by_id[i] for i in self.selected]

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "candidates": [c.to_dict() for c in self.candidates],
            "selected": list(self.selected),
            "low_evidence": self.low_evidence,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VisualTrace":
        return cls(
            d.get("query", ""),
            tuple(ScoredCandidate.from_dict(c) for c in d.get("candidates", ())),
            tuple(d.get("selected", ())),
            d.get("low_evidence", False),
            d.get("error"),
        )


@dataclass(frozen=True)
class Recaption:
    think: str
    body: str
    references_used: frozenset[str] = frozenset()
    language: str = "en"

    def to_dict(self) -> dict:
        return {
            "think": self.think,
            "body": self.body,
            "references_used": sorted(self.references_used),
            "language": self.language,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Recaption":
        return cls(d["think"], d["body"], frozenset(d.get("references_used", ())), d.get("language", "en"))


RECORD_KEYS = ("prompt", "textual", "visual", "recaption", "image_ref", "verified", "trials_used")


@dataclass(frozen=True)
class SftRecord:
    prompt: UserPrompt
    textual: TextualTrace
    visual: VisualTrace
    recaption: Recaption
    image_ref: str | None = None
    verified: bool = False
    trials_used: int = 1

    def to_dict(self) -> dict:
        return {
            "prompt": self.prompt.to_dict(),
            "textual": self.textual.to_dict(),
            "visual": self.visual.to_dict(),
            "recaption": self.recaption.to_dict(),
            "image_ref": self.image_ref,
            "verified": self.verified,
            "trials_used": self.trials_used,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SftRecord":
        keys = set(d)
        if keys != set(RECORD_KEYS):
            raise ValueError(f"record keys {sorted(keys)} != {list(RECORD_KEYS)}")
        return cls(
            prompt=UserPrompt.from_dict(d["prompt"]),
            textual=TextualTrace.from_dict(d["textual"]),
            visual=VisualTrace.from_dict(d["visual"]),
            recaption=Recaption.from_dict(d["recaption"]),
            image_ref=d["image_ref"],
            verified=d["verified"],
            trials_used=d["trials_used"],
        )


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    field: str
    rule: str

    def __str__(self):
        return f"{self.field}: {self.rule}"


def prompt_violations(prompt: UserPrompt) -> list[Violation]:
    out = []
    if not prompt.text or not prompt.text.strip():
        out.append(Violation("prompt.text", "prompt text must be non-empty"))
    if prompt.language not in LANGUAGES:
        out.append(Violation("prompt.language", f"language must be one of {LANGUAGES}"))
    elif prompt.country:
        want = "zh" if is_chinese_region(prompt.country) else "en"
        if prompt.language != want:
            out.append(Violation("prompt.language", f"IP from {prompt.country!r} requires language {want!r}"))
    return out


def validate_record(record: SftRecord) -> list[Violation]:
    """Check every record invariant; violations come back in a fixed order."""
    from .ranker import select_top2

    out = prompt_violations(record.prompt)

    t = record.textual
    if t.evidence and not t.query.strip():
        out.append(Violation("textual.query", "evidence present but query is empty"))

    v = record.visual
    ids = [c.id for c in v.candidates]
    if len(set(ids)) != len(ids):
        out.append(Violation("visual.candidates", "candidate ids must be unique"))
    if len(v.selected) > 2:
        out.append(Violation("visual.selected", "at most two images may be selected"))
    missing = [i for i in v.selected if i not in ids]
    if missing:
        out.append(Violation("visual.selected", f"selected ids {missing} not among candidates"))
    elif list(v.selected) != select_top2(list(v.candidates)):
        out.append(Violation("visual.selected", "selection is not the top-2 by aggregate (ties to lower id)"))

    r = record.recaption
    if not r.body.strip():
        out.append(Violation("recaption.body", "recaption body must be non-empty"))
    bad_refs = image_reference_violations(r.body)
    if bad_refs:
        out.append(Violation("recaption.body", f"evidence images must be named image_1/image_2; found {bad_refs}"))
    if not r.references_used <= REFERENCE_TOKENS:
        out.append(Violation("recaption.references_used", "only image_1 and image_2 may be referenced"))
    if r.language != record.prompt.language:
        out.append(Violation("recaption.language", "recaption language must equal the prompt language"))
    elif r.language in LANGUAGES and r.body.strip():
        mixed = language_violations(r.body, r.language)
        if mixed:
            out.append(Violation("recaption.body", f"body mixes languages: {mixed[:3]}"))

    if record.verified and not record.image_ref:
        out.append(Violation("image_ref", "verified record must carry an image_ref"))
    if not 1 <= record.trials_used <= MAX_TRIALS:
        out.append(Violation("trials_used", f"trials_used must be within 1..{MAX_TRIALS} (five-trial cap)"))
    return out


# ---------------------------------------------------------------------------
# JSONL persistence


class RecordParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def dumps_record(record: SftRecord) -> str:
    return json.dumps(record.to_dict(), ensure_ascii=False, separators=(", ", ": "))


def write_records(records: Iterable[SftRecord], sink: IO[str]) -> int:
    n = 0
    for rec in records:
        sink.write(dumps_record(rec))
        sink.write("\n")
        n += 1
    return n


def iter_records(source: IO[str]) -> Iterator[SftRecord]:
    """Yield records from a JSONL stream; errors carry the 1-based line number."""
    for lineno, line in enumerate(source, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RecordParseError(lineno, f"malformed JSON ({exc.msg} at column {exc.colno})") from None
        if not isinstance(obj, dict):
            raise RecordParseError(lineno, "expected a JSON object")
        try:
            yield SftRecord.from_dict(obj)
        except (KeyError, TypeError, ValueError) as exc:
            raise RecordParseError(lineno, f"invalid record: {exc}") from None


def read_records(source: IO[str]) -> list[SftRecord]:
    return list(iter_records(source))


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# content-addressed image storage


def content_hash(data: bytes) -> str:
    return "sha256:" + hashlib.sha256(data).hexdigest()


class ImageStore:
    """Sidecar directory of images keyed by content hash.

    With ``root=None`` images are kept in memory, which is what tests and
    dry runs want.
    """

    def __init__(self, root: str | os.PathLike | None = None):
        self.root = Path(root) if root is not None else None
        self._mem: dict[str, bytes] = {}

    def _path(self, handle: str) -> Path:
        digest = handle.split(":", 1)[1]
        return self.root / digest[:2] / digest

    def put(self, data: bytes) -> str:
        handle = content_hash(data)
        if self.root is None:
            self._mem[handle] = data
            return handle
        p = self._path(handle)
        if not p.exists():
            p.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=p.parent)
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, p)
        return handle

    def get(self, handle: str) -> bytes:
        if self.root is None:
            try:
                return self._mem[handle]
            except KeyError:
                raise KeyError(f"unknown image handle {handle}") from None
        p = self._path(handle)
        if not p.exists():
            raise KeyError(f"unknown image handle {handle}")
        return p.read_bytes()

    def __contains__(self, handle: str) -> bool:
        if self.root is None:
            return handle in self._mem
        return self._path(handle).exists()

