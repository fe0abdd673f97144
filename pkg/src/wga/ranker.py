"""Scoring of retrieved reference images and top-2 anchor selection."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .protocol import JudgeVerdict
from .records import DimensionScores, ImageCandidate, ScoredCandidate

MODES = ("single", "dimensional")
DEFAULT_THRESHOLD = 6.0


class RankerContractError(ValueError):
    pass


@dataclass(frozen=True)
class Weights:
    """Per-dimension weights; must be non-negative and sum to one."""

    identity_consistency: float = 0.25
    subject_salience: float = 0.25
    image_clarity: float = 0.25
    watermark_cleanliness: float = 0.25

    def __post_init__(self):
        vals = self.values()
        if any(v < 0 or not math.isfinite(v) for v in vals):
            raise ValueError(f"weights must be finite and non-negative: {vals}")
        if abs(sum(vals) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1 (got {sum(vals)!r})")

    def values(self) -> tuple[float, float, float, float]:
        return (self.identity_consistency, self.subject_salience, self.image_clarity, self.watermark_cleanliness)

    @classmethod
    def from_values(cls, values: Sequence[float], normalize: bool = False) -> "Weights":
        values = [float(v) for v in values]
        if len(values) != 4:
            raise ValueError("exactly four weights are required")
        if normalize:
            total = sum(values)
            if total <= 0:
                raise ValueError("weights must have a positive sum")
            values = [v / total for v in values]
        return cls(*values)


@dataclass(frozen=True)
class RankerConfig:
    mode: str = "single"
    weights: Weights = Weights()
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"ranker.mode must be one of {MODES}")

    @classmethod
    def from_dict(cls, d: dict) -> "RankerConfig":
        return cls(
            mode=d.get("mode", "single"),
            weights=Weights.from_values(d["lambda"]) if "lambda" in d else Weights(),
            threshold=float(d.get("threshold", DEFAULT_THRESHOLD)),
        )


def score_candidate(
    mode: str,
    verdict: JudgeVerdict | None = None,
    dims: DimensionScores | None = None,
    weights: Weights = Weights(),
    threshold: float = DEFAULT_THRESHOLD,
) -> tuple[float, bool, str | None]:
    """Return ``(aggregate, rejected, reason)`` for one candidate."""
    if (verdict is None) == (dims is None):
        raise RankerContractError("exactly one of verdict / dims must be given")
    if mode == "single":
        if verdict is None:
            raise RankerContractError("single mode needs a judge verdict")
        aggregate = float(verdict.score)
        wrong_ip = verdict.score == 0
    elif mode == "dimensional":
        if dims is None:
            raise RankerContractError("dimensional mode needs dimension scores")
        aggregate = sum(w * s for w, s in zip(weights.values(), dims.values()))
        wrong_ip = dims.identity_consistency == 0
    else:
        raise RankerContractError(f"unknown mode {mode!r}")

    if wrong_ip:
        return aggregate, True, "wrong IP"
    if aggregate < threshold:
        reason = f"score {aggregate:g} below threshold {threshold:g}"
        if verdict is not None:
            flags = [n for n, f in (("text-heavy", verdict.is_text_heavy), ("watermark", verdict.has_watermark)) if f]
            if flags:
                reason += " (" + ", ".join(flags) + ")"
        return aggregate, True, reason
    return aggregate, False, None


def make_scored(
    candidate: ImageCandidate,
    mode: str,
    verdict: JudgeVerdict | None = None,
    dims: DimensionScores | None = None,
    weights: Weights = Weights(),
    threshold: float = DEFAULT_THRESHOLD,
) -> ScoredCandidate:
    aggregate, rejected, reason = score_candidate(mode, verdict, dims, weights, threshold)
    return ScoredCandidate(
        candidate=candidate,
        aggregate=aggregate,
        dims=dims,
        single_score=verdict,
        rejected=rejected,
        reject_reason=reason,
    )


def unfetched(candidate: ImageCandidate) -> ScoredCandidate:
    """A candidate whose bytes never arrived; it cannot be judged."""
    return ScoredCandidate(candidate, 0.0, single_score=JudgeVerdict(0, "image not fetched"), rejected=True,
                           reject_reason="image not fetched")


def select_top2(candidates: Sequence[ScoredCandidate]) -> list[int]:
    """Ids of the two best non-rejected candidates (ties go to the lower id)."""
    survivors = [c for c in candidates if not c.rejected]
    survivors.sort(key=lambda c: (-c.aggregate, c.id))
    return [c.id for c in survivors[:2]]
