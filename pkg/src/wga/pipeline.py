"""Think -> Research (text, then images) -> Recaption -> Generate, plus the
generate-and-judge verification loop used when building training data."""
from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

from . import templates as T
from .backends import (
    Backend,
    BackendError,
    BackendUnavailable,
    ChatRequest,
    ChatTurn,
    GenerateImageRequest,
    PreconditionError,
    chat_complete,
    generate_image,
)
from .protocol import (
    EvalScores,
    JudgeVerdict,
    ProtocolError,
    ToolCall,
    extract_tagged_blocks,
    image_reference_violations,
    language_violations,
    parse_dimension_scores,
    parse_eval_scores,
    parse_judge_verdict,
    parse_recaption_output,
    parse_tool_calls,
    references_used,
    render_tool_call,
)
from .ranker import RankerConfig, make_scored, select_top2, unfetched
from .records import (
    DimensionScores,
    GapAssessment,
    ImageStore,
    Recaption,
    ScoredCandidate,
    SftRecord,
    TextualTrace,
    UserPrompt,
    VisualTrace,
)
from .search import SearchProvider, ToolError, search_image, summarize_page, text_search

log = logging.getLogger(__name__)

STAGES = ("Think", "Research-Text", "Research-Visual", "Recaption", "Generate")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str, raw: str | None = None, unavailable: bool = False):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.raw = raw
        self.unavailable = unavailable  # caused by an unreachable backend


class RecaptionValidationError(StageError):
    def __init__(self, offending: Sequence[str], raw: str | None = None, kind: str = "image-reference"):
        super().__init__("Recaption", f"{kind} rule violated by {list(offending)}", raw)
        self.offending = list(offending)
        self.kind = kind


class LanguageConsistencyError(RecaptionValidationError):
    def __init__(self, offending: Sequence[str], raw: str | None = None):
        super().__init__(offending, raw, kind="language-consistency")


@dataclass
class PipelineConfig:
    chat: Backend
    judge: Backend
    imagegen: Backend
    search: SearchProvider
    store: ImageStore = field(default_factory=ImageStore)
    ranker: RankerConfig = RankerConfig()
    max_verify_trials: int = 5
    verify_bar: int = 6
    skip_research_when_gap_empty: bool = True
    summarize: bool = True
    strict_json: bool = False
    seed: int = 0
    temperature: float = 0.0
    max_tokens: int = 2048
    width: int = 1024
    height: int = 1024
    judge_concurrency: int = 4
    clock: Callable[[int], float | int] | None = None  # None: logical step counter

    def __post_init__(self):
        if self.max_verify_trials < 1:
            raise ValueError("max_verify_trials must be >= 1")


@dataclass(frozen=True)
class StageEntry:
    stage: str
    timestamp: float | int
    digest: str

    def to_dict(self) -> dict:
        return {"stage": self.stage, "timestamp": self.timestamp, "digest": self.digest}


@dataclass
class Trajectory:
    prompt: UserPrompt
    gap: GapAssessment | None = None
    textual: TextualTrace | None = None
    visual: VisualTrace | None = None
    recaption: Recaption | None = None
    image_ref: str | None = None
    stage_log: list[StageEntry] = field(default_factory=list)
    failed_stage: str | None = None
    error: str | None = None
    backend_unavailable: bool = False

    @property
    def failed(self) -> bool:
        return self.failed_stage is not None

    @property
    def stages(self) -> list[str]:
        return [e.stage for e in self.stage_log]

    def to_dict(self) -> dict:
        return {
            "prompt": self.prompt.to_dict(),
            "gap": self.gap.to_dict() if self.gap else None,
            "textual": self.textual.to_dict() if self.textual else None,
            "visual": self.visual.to_dict() if self.visual else None,
            "recaption": self.recaption.to_dict() if self.recaption else None,
            "image_ref": self.image_ref,
            "stage_log": [e.to_dict() for e in self.stage_log],
            "failed_stage": self.failed_stage,
            "error": self.error,
        }


class _Calls:
    """Per-stage record of backend traffic, hashed into the stage digest."""

    def __init__(self):
        self.items: list[str] = []

    def add(self, request: str, response: str) -> None:
        self.items.append(request + "\x1f" + response)

    def digest(self) -> str:
        return hashlib.sha256("\x1e".join(self.items).encode("utf-8")).hexdigest()


def _chat(backend: Backend, config: PipelineConfig, system: str, turns, calls: _Calls | None, seed_offset: int = 0) -> str:
    req = ChatRequest(system, tuple(turns), config.max_tokens, config.temperature, config.seed + seed_offset)
    raw = chat_complete(backend, req)
    if calls is not None:
        calls.add(req.render(), raw)
    return raw


# ---------------------------------------------------------------------------
# Think

_BULLET_RE = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+(.*\S)\s*$")


def _parse_units(response: str) -> tuple[str, ...]:
    units = []
    for line in response.splitlines():
        m = _BULLET_RE.match(line)
        if m:
            units.append(m.group(1))
        elif line.strip() and line.strip().lower() not in ("none", "(none)", "无"):
            units.append(line.strip())
    return tuple(units)


def detect_gap(prompt: UserPrompt, config: PipelineConfig, _calls: _Calls | None = None) -> GapAssessment:
    raw = _chat(config.chat, config, T.THINK_PROMPT, [ChatTurn("user", T.THINK_USER.format(prompt=prompt.text))], _calls)
    try:
        blocks = {b.tag: b.content for b in extract_tagged_blocks(raw, {"think", "response"})}
    except ProtocolError as exc:
        raise StageError("Think", str(exc), raw) from None
    if "response" not in blocks:
        raise StageError("Think", "reply has no <response> block", raw)
    units = _parse_units(blocks["response"])
    return GapAssessment(bool(units), units, blocks.get("think", "").strip())


# ---------------------------------------------------------------------------
# Research

def _system_prompt(prompt: UserPrompt) -> str:
    system = T.render_system_prompt(prompt.text, prompt.ip_name or prompt.text, prompt.country or "unknown")
    return system + "\n" + T.render_tools_definition()


def _text_turns(prompt: UserPrompt, gap: GapAssessment) -> list[ChatTurn]:
    missing = "\n".join(f"- {u}" for u in gap.missing_units) or "- (none identified)"
    return [ChatTurn("user", T.TEXT_RESEARCH_USER.format(prompt=prompt.text, missing=missing))]


def _one_call(raw: str, tool: str, stage: str):
    try:
        calls = parse_tool_calls(raw)
    except ProtocolError as exc:
        raise StageError(stage, f"bad tool call: {exc}", raw) from None
    for c in calls:
        if c.name == tool:
            return c
    raise StageError(stage, f"reply contains no {tool} call", raw)


def _acquire_text(prompt, gap, config, calls) -> TextualTrace:
    raw = _chat(config.chat, config, _system_prompt(prompt), _text_turns(prompt, gap), calls)
    call = _one_call(raw, "text_search", "Research-Text")
    try:
        hits = text_search(config.search, call)
    except ToolError as exc:
        return TextualTrace(call.q, (), str(exc))
    if config.summarize:
        summarized = []
        for h in hits:
            content = config.search.page_text(h)
            req_text = T.render_summary_prompt(call.q, h.title, content)
            summary = summarize_page(config.chat, call.q, h.title, content, seed=config.seed)
            calls.add(req_text, summary or "")
            summarized.append(replace(h, summary=summary))
        hits = summarized
    return TextualTrace(call.q, tuple(hits))


def acquire_text_evidence(prompt: UserPrompt, gap: GapAssessment, config: PipelineConfig,
                          _calls: _Calls | None = None) -> TextualTrace:
    if not gap.needs_research:
        raise PreconditionError("text research requested but the gap assessment is empty")
    return _acquire_text(prompt, gap, config, _calls or _Calls())


def _judge_one(candidate, prompt: UserPrompt, config: PipelineConfig, calls: _Calls) -> ScoredCandidate:
    if candidate.image_ref is None:
        return unfetched(candidate)
    question = T.render_judge_question(prompt.ip_name or prompt.text)
    dimensional = config.ranker.mode == "dimensional"
    if dimensional:
        question += ("\nAlso include the keys \"identity_consistency\", \"subject_salience\", "
                     "\"image_clarity\" and \"watermark_cleanliness\", each a number from 0 to 10.")
    req = ChatRequest(T.JUDGE_PROMPT, (ChatTurn("user", question, (candidate.image_ref,)),),
                      config.max_tokens, config.temperature, config.seed)
    raw = chat_complete(config.judge, req)
    calls.add(req.render(), raw)
    rc = config.ranker
    try:
        if dimensional:
            dims = DimensionScores(**parse_dimension_scores(raw, config.strict_json))
            return make_scored(candidate, rc.mode, dims=dims, weights=rc.weights, threshold=rc.threshold)
        verdict = parse_judge_verdict(raw, config.strict_json)
        return make_scored(candidate, rc.mode, verdict=verdict, weights=rc.weights, threshold=rc.threshold)
    except (ProtocolError, ValueError) as exc:
        log.info("unusable verdict for candidate %s: %s", candidate.id, exc)
        return ScoredCandidate(candidate, 0.0, single_score=JudgeVerdict(0, f"unparseable verdict: {exc}"),
                               rejected=True, reject_reason="unparseable verdict")


def acquire_visual_evidence(prompt: UserPrompt, gap: GapAssessment, textual: TextualTrace,
                            config: PipelineConfig, _calls: _Calls | None = None) -> VisualTrace:
    calls = _calls or _Calls()
    turns = _text_turns(prompt, gap)
    if textual.query:
        turns.append(ChatTurn("assistant", render_tool_call(_text_call(textual))))
    turns.append(ChatTurn("user", T.VISUAL_RESEARCH_USER.format(
        query=textual.query, evidence=T.format_evidence(textual.evidence))))
    raw = _chat(config.chat, config, _system_prompt(prompt), turns, calls)
    call = _one_call(raw, "search_image", "Research-Visual")
    try:
        found = search_image(config.search, call, config.store)
    except ToolError as exc:
        return VisualTrace(call.q, (), (), True, str(exc))

    try:
        with ThreadPoolExecutor(max_workers=max(1, config.judge_concurrency)) as pool:
            local = [_Calls() for _ in found]
            scored = list(pool.map(lambda a: _judge_one(a[0], prompt, config, a[1]), zip(found, local)))
    except BackendError as exc:
        raise StageError("Research-Visual", f"judge failed: {exc}",
                         unavailable=isinstance(exc, BackendUnavailable)) from None
    for lc in local:
        calls.items.extend(lc.items)
    selected = select_top2(scored)
    return VisualTrace(call.q, tuple(scored), tuple(selected), low_evidence=not selected)


def _text_call(textual: TextualTrace) -> ToolCall:
    return ToolCall("text_search", {"q": textual.query})


# ---------------------------------------------------------------------------
# Recaption / Generate

def _reference_handles(visual: VisualTrace | None) -> tuple[str, ...]:
    if visual is None:
        return ()
    return tuple(c.candidate.image_ref for c in visual.selected_candidates() if c.candidate.image_ref)


def compose_recaption(prompt: UserPrompt, gap: GapAssessment | None, textual: TextualTrace | None,
                      visual: VisualTrace | None, config: PipelineConfig, _calls: _Calls | None = None,
                      seed_offset: int = 0) -> Recaption:
    refs = _reference_handles(visual)
    labels = ", ".join(f"image_{i}" for i in range(1, len(refs) + 1)) or "none"
    if textual is not None and textual.evidence:
        background = T.format_evidence(textual.evidence)
    else:
        background = T.DIRECT_RECAPTION_NOTE
    user = T.RECAPTION_USER.format(prompt=prompt.text, background=background, references=labels)
    raw = _chat(config.chat, config, T.RECAPTION_PROMPT, [ChatTurn("user", user, refs)], _calls, seed_offset)
    try:
        think, body = parse_recaption_output(raw)
    except ProtocolError as exc:
        raise StageError("Recaption", str(exc), raw) from None
    bad = image_reference_violations(body)
    if bad:
        raise RecaptionValidationError(bad, raw)
    mixed = language_violations(body, prompt.language)
    if mixed:
        raise LanguageConsistencyError(mixed, raw)
    return Recaption(think, body, references_used(body), prompt.language)


def synthesize_image(recaption: Recaption, visual: VisualTrace | None, config: PipelineConfig,
                     seed_offset: int = 0, _calls: _Calls | None = None) -> str:
    """Generate from the recaption body and the selected anchors only."""
    req = GenerateImageRequest(recaption.body, _reference_handles(visual), config.width, config.height,
                               config.seed + seed_offset)
    handle = generate_image(config.imagegen, req)
    if _calls is not None:
        _calls.add(req.render(), handle)
    return handle


# ---------------------------------------------------------------------------
# full run


def run_trajectory(prompt: UserPrompt, config: PipelineConfig) -> Trajectory:
    traj = Trajectory(prompt)
    step = 0

    def log_stage(stage, calls):
        nonlocal step
        ts = config.clock(step) if config.clock else step
        traj.stage_log.append(StageEntry(stage, ts, calls.digest()))
        step += 1

    stage = "Think"
    try:
        calls = _Calls()
        traj.gap = detect_gap(prompt, config, calls)
        log_stage(stage, calls)

        if traj.gap.needs_research or not config.skip_research_when_gap_empty:
            stage = "Research-Text"
            calls = _Calls()
            traj.textual = _acquire_text(prompt, traj.gap, config, calls)
            log_stage(stage, calls)

            stage = "Research-Visual"
            calls = _Calls()
            traj.visual = acquire_visual_evidence(prompt, traj.gap, traj.textual, config, calls)
            log_stage(stage, calls)

        stage = "Recaption"
        calls = _Calls()
        traj.recaption = compose_recaption(prompt, traj.gap, traj.textual, traj.visual, config, calls)
        log_stage(stage, calls)

        stage = "Generate"
        calls = _Calls()
        traj.image_ref = synthesize_image(traj.recaption, traj.visual, config, 0, calls)
        log_stage(stage, calls)
    except StageError as exc:
        traj.failed_stage, traj.error = exc.stage, str(exc)
        traj.backend_unavailable = exc.unavailable
    except (BackendError, ProtocolError, PreconditionError, ToolError) as exc:
        traj.failed_stage, traj.error = stage, f"{stage}: {exc}"
        traj.backend_unavailable = isinstance(exc, BackendUnavailable)
    return traj


# ---------------------------------------------------------------------------
# verification by reject sampling


@dataclass(frozen=True)
class VerifyAttempt:
    trial: int
    image_ref: str | None
    scores: EvalScores | None
    passed: bool
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "trial": self.trial,
            "image_ref": self.image_ref,
            "scores": list(self.scores.as_tuple()) if self.scores else None,
            "passed": self.passed,
            "error": self.error,
        }


@dataclass(frozen=True)
class Discarded:
    prompt_id: str
    trials_used: int
    reason: str
    attempts: tuple[VerifyAttempt, ...] = ()

    def to_dict(self) -> dict:
        return {
            "prompt_id": self.prompt_id,
            "trials_used": self.trials_used,
            "reason": self.reason,
            "attempts": [a.to_dict() for a in self.attempts],
        }


def _judge_against_truth(image_ref: str, prompt: UserPrompt, truth: Sequence[str], config: PipelineConfig) -> EvalScores:
    gts = tuple(truth) if len(truth) >= 2 else (truth[0], truth[0])
    req = ChatRequest(T.EVALUATION_PROMPT,
                      (ChatTurn("user", T.EVALUATION_USER.format(prompt=prompt.text), gts[:2] + (image_ref,)),),
                      config.max_tokens, config.temperature, config.seed)
    return parse_eval_scores(chat_complete(config.judge, req), config.strict_json)


def verify_and_resample(trajectory: Trajectory, config: PipelineConfig,
                        ground_truth: Sequence[str]) -> SftRecord | Discarded:
    """Judge the generated image against ground truth; on failure re-run
    recaption and generation, up to ``max_verify_trials`` generations total."""
    if not ground_truth:
        raise PreconditionError("verification needs at least one ground-truth image")
    if trajectory.failed or trajectory.recaption is None:
        raise PreconditionError("verification needs a completed trajectory")
    prompt = trajectory.prompt
    recaption, image_ref = trajectory.recaption, trajectory.image_ref
    attempts: list[VerifyAttempt] = []
    for trial in range(1, config.max_verify_trials + 1):
        try:
            if trial > 1 or image_ref is None:
                recaption = compose_recaption(prompt, trajectory.gap, trajectory.textual, trajectory.visual,
                                              config, seed_offset=trial - 1)
                image_ref = synthesize_image(recaption, trajectory.visual, config, seed_offset=trial - 1)
            scores = _judge_against_truth(image_ref, prompt, ground_truth, config)
        except (RecaptionValidationError, ProtocolError) as exc:
            attempts.append(VerifyAttempt(trial, image_ref, None, False, str(exc)))
            continue
        except StageError as exc:
            raise StageError("Verify", str(exc), unavailable=exc.unavailable) from None
        except BackendError as exc:
            raise StageError("Verify", str(exc), unavailable=isinstance(exc, BackendUnavailable)) from None
        passed = scores.text_relevance_ip >= config.verify_bar
        attempts.append(VerifyAttempt(trial, image_ref, scores, passed))
        if passed:
            return SftRecord(prompt, trajectory.textual or TextualTrace(), trajectory.visual or VisualTrace(),
                             recaption, image_ref, True, trial)
    return Discarded(prompt.id, len(attempts), f"no pass within {config.max_verify_trials} trials", tuple(attempts))


@dataclass
class BuildResult:
    prompt: UserPrompt
    trajectory: Trajectory
    outcome: SftRecord | Discarded | None = None
    error: str | None = None
    backend_unavailable: bool = False


def build_one(prompt: UserPrompt, ground_truth: Sequence[str], config: PipelineConfig) -> BuildResult:
    traj = run_trajectory(prompt, config)
    if traj.failed:
        return BuildResult(prompt, traj, None, traj.error, traj.backend_unavailable)
    try:
        return BuildResult(prompt, traj, verify_and_resample(traj, config, ground_truth))
    except StageError as exc:
        return BuildResult(prompt, traj, None, str(exc), exc.unavailable)
    except PreconditionError as exc:
        return BuildResult(prompt, traj, None, str(exc))


def run_many(fn, items: Sequence, parallelism: int = 1) -> list:
    """Apply ``fn`` to items with bounded parallelism; results keep input order."""
    if parallelism <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(fn, items))


def wall_clock(_step: int) -> float:
    return round(time.time(), 6)


def trajectory_line(traj: Trajectory) -> str:
    return json.dumps(traj.to_dict(), ensure_ascii=False)
