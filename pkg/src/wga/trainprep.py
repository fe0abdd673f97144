"""Training preparation: token-cost accounting, sequence packing, supervision
layout, and the reference loss math a downstream trainer is checked against.

Losses here are plain numpy; nothing is differentiated.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Hashable, Iterable, Sequence

import numpy as np

from . import kernels
from .protocol import ToolCall, render_tool_call
from .records import SftRecord
from .templates import format_evidence

HARD_LIMIT = 41520


class SegmentKind(IntEnum):
    DialogText = kernels.DIALOG
    RefImage = kernels.REF
    RecaptionText = kernels.RECAP
    GenLatent = kernels.GEN


TEXT_KINDS = (SegmentKind.DialogText, SegmentKind.RecaptionText)


@dataclass(frozen=True)
class TrainConfig:
    max_tokens_per_sample: int = 40240
    expected_tokens_per_batch: int = 40240
    max_packed_tokens: int = HARD_LIMIT
    ce_weight: float = 1.0
    mse_weight: float = 1.0
    special_token_weight: float = 3.0
    vit_patch_size: int = 14
    vit_transform: tuple[int, int] = (378, 980)
    vae_transform: tuple[int, int] = (512, 1024)
    vae_downsample: int = 8
    latent_patch_size: int = 2
    gen_width: int = 1024
    gen_height: int = 1024

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        kw = dict(d)
        for k in ("vit_transform", "vae_transform"):
            if k in kw:
                kw[k] = tuple(kw[k])
        return cls(**kw)


class PackingError(ValueError):
    pass


class OversizeItemError(PackingError):
    def __init__(self, sample_id, cost: int, limit: int):
        super().__init__(f"sample {sample_id!r} costs {cost} tokens, over the limit of {limit}")
        self.sample_id = sample_id
        self.cost = cost
        self.limit = limit


@dataclass(frozen=True)
class Segment:
    kind: SegmentKind
    token_count: int
    sample_id: Hashable
    supervised: bool = False
    special_token_positions: frozenset[int] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "kind", SegmentKind(self.kind))
        object.__setattr__(self, "special_token_positions", frozenset(self.special_token_positions))
        if self.token_count <= 0:
            raise ValueError(f"segment token_count must be positive, got {self.token_count}")
        for p in self.special_token_positions:
            if not 0 <= p < self.token_count:
                raise ValueError(f"special position {p} outside segment of {self.token_count} tokens")


@dataclass(frozen=True)
class PackedSequence:
    """Segments laid end to end.  Each sample's segments are contiguous and in
    stage order (kinds non-decreasing)."""

    segments: tuple[Segment, ...]

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        seen = set()
        prev = None
        for seg in self.segments:
            if prev is None or seg.sample_id != prev.sample_id:
                if seg.sample_id in seen:
                    raise PackingError(f"segments of sample {seg.sample_id!r} are not contiguous")
                seen.add(seg.sample_id)
            elif seg.kind < prev.kind:
                raise PackingError(f"sample {seg.sample_id!r} segments out of stage order")
            prev = seg

    @property
    def total_tokens(self) -> int:
        return sum(s.token_count for s in self.segments)

    @property
    def sample_ids(self) -> list:
        out = []
        for s in self.segments:
            if not out or out[-1] != s.sample_id:
                out.append(s.sample_id)
        return out


def check_pack(pack: PackedSequence, limit: int = HARD_LIMIT) -> None:
    if pack.total_tokens > limit:
        raise PackingError(f"pack holds {pack.total_tokens} tokens, over the limit of {limit}")


# ---------------------------------------------------------------------------
# token accounting

_TOKEN_RE = re.compile(r"</?(?:think|tool_call|recaption|response)>|\w+|[^\w\s]", re.UNICODE)
_SPECIAL_RE = re.compile(r"</?(?:think|tool_call|recaption|response)>")


class SimpleTokenizer:
    """Deterministic stand-in for the model tokenizer, used only for budget
    estimates.  Protocol tags are single special tokens; everything else splits
    into word runs and single punctuation marks."""

    def tokenize(self, text: str) -> list[str]:
        return _TOKEN_RE.findall(text)

    def count(self, text: str) -> tuple[int, frozenset[int]]:
        toks = self.tokenize(text)
        special = frozenset(i for i, t in enumerate(toks) if _SPECIAL_RE.fullmatch(t))
        return len(toks), special


def _resize(width: int, height: int, lo: int, hi: int) -> tuple[int, int]:
    scale = min(1.0, hi / max(width, height))
    if min(width, height) * scale < lo:
        scale = lo / min(width, height)
    w = min(max(round(width * scale), lo), hi)
    h = min(max(round(height * scale), lo), hi)
    return w, h


def vit_tokens(width: int | None, height: int | None, config: TrainConfig = TrainConfig()) -> int:
    lo, hi = config.vit_transform
    w, h = _resize(width or hi, height or hi, lo, hi)
    p = config.vit_patch_size
    return math.ceil(w / p) * math.ceil(h / p)


def vae_tokens(width: int, height: int, config: TrainConfig = TrainConfig()) -> int:
    lo, hi = config.vae_transform
    w, h = _resize(width, height, lo, hi)
    stride = config.vae_downsample * config.latent_patch_size
    return math.ceil(w / stride) * math.ceil(h / stride)


def _text_segment(tok: SimpleTokenizer, text: str, sample_id, kind, supervised) -> Segment | None:
    n, special = tok.count(text)
    if n == 0:
        return None
    return Segment(kind, n, sample_id, supervised, special)


def sample_segments(record: SftRecord, config: TrainConfig = TrainConfig(),
                    tokenizer: SimpleTokenizer | None = None) -> list[Segment]:
    """Lay one verified trajectory out as segments in stage order.

    Tool calls and the recaption are supervised; the user prompt, tool
    results and reference images are context only.
    """
    tok = tokenizer or SimpleTokenizer()
    sid = record.prompt.id
    D, R = SegmentKind.DialogText, SegmentKind.RefImage
    parts: list[Segment | None] = [_text_segment(tok, record.prompt.text, sid, D, False)]
    if record.textual.query:
        call = render_tool_call(ToolCall("text_search", {"q": record.textual.query}))
        parts.append(_text_segment(tok, call, sid, D, True))
        parts.append(_text_segment(tok, format_evidence(record.textual.evidence), sid, D, False))
    if record.visual.query:
        call = render_tool_call(ToolCall("search_image", {"q": record.visual.query}))
        parts.append(_text_segment(tok, call, sid, D, True))
    for sc in record.visual.selected_candidates():
        parts.append(Segment(R, vit_tokens(sc.candidate.width, sc.candidate.height, config), sid))
    recap = f"<think>{record.recaption.think}</think><recaption>{record.recaption.body}</recaption>"
    parts.append(_text_segment(tok, recap, sid, SegmentKind.RecaptionText, True))
    if record.image_ref:
        parts.append(Segment(SegmentKind.GenLatent, vae_tokens(config.gen_width, config.gen_height, config), sid))
    return [p for p in parts if p is not None]


# ---------------------------------------------------------------------------
# packing


def pack_sequences(items: Sequence[tuple[Hashable, int]], limit: int = HARD_LIMIT) -> list[list[tuple[Hashable, int]]]:
    """First-fit-decreasing bin packing of ``(sample_id, cost)`` items.

    Ties in cost keep input order.  Packs come out in creation order, items
    within a pack in placement order.
    """
    for sid, cost in items:
        if cost <= 0:
            raise PackingError(f"sample {sid!r} has non-positive cost {cost}")
        if cost > limit:
            raise OversizeItemError(sid, cost, limit)
    order = sorted(range(len(items)), key=lambda k: -items[k][1])
    costs = np.array([items[k][1] for k in order], dtype=np.int64)
    bins, n_bins = kernels.ffd_assign(costs, limit)
    packs: list[list[tuple[Hashable, int]]] = [[] for _ in range(n_bins)]
    for k, b in zip(order, bins.tolist()):
        packs[b].append(items[k])
    return packs


def assemble_packs(samples: Sequence[Sequence[Segment]], config: TrainConfig = TrainConfig()) -> list[PackedSequence]:
    """Pack whole samples; a sample over ``max_tokens_per_sample`` is an
    :class:`OversizeItemError`."""
    by_id: dict = {}
    items = []
    for segs in samples:
        sid = segs[0].sample_id
        cost = sum(s.token_count for s in segs)
        if cost > config.max_tokens_per_sample:
            raise OversizeItemError(sid, cost, config.max_tokens_per_sample)
        by_id[sid] = segs
        items.append((sid, cost))
    out = []
    for plan in pack_sequences(items, config.max_packed_tokens):
        out.append(PackedSequence(tuple(s for sid, _ in plan for s in by_id[sid])))
    return out


# ---------------------------------------------------------------------------
# supervision


@dataclass(frozen=True)
class SupervisionLayout:
    ce_positions: np.ndarray
    mse_positions: np.ndarray
    token_weights: np.ndarray = field(repr=False)

    def weight(self, i: int) -> float:
        return float(self.token_weights[i])


def supervision_layout(pack: PackedSequence, special_weight: float = 3.0) -> SupervisionLayout:
    ce: list[np.ndarray] = []
    mse: list[np.ndarray] = []
    weights = np.ones(pack.total_tokens, dtype=np.float64)
    off = 0
    for seg in pack.segments:
        span = np.arange(off, off + seg.token_count, dtype=np.int64)
        if seg.kind == SegmentKind.GenLatent:
            mse.append(span)
        elif seg.kind in TEXT_KINDS and seg.supervised:
            ce.append(span)
            for p in seg.special_token_positions:
                weights[off + p] = special_weight
        off += seg.token_count
    empty = np.empty(0, dtype=np.int64)
    return SupervisionLayout(
        np.concatenate(ce) if ce else empty,
        np.concatenate(mse) if mse else empty,
        weights,
    )


# ---------------------------------------------------------------------------
# loss math


class LossContractError(ValueError):
    pass


def flow_interpolate_and_target(clean, noise, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Rectified-flow point and velocity: ``z_t = (1-t)*clean + t*noise``,
    ``u* = noise - clean``."""
    clean = np.asarray(clean, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if clean.shape != noise.shape:
        raise LossContractError(f"shape mismatch: {clean.shape} vs {noise.shape}")
    if not 0.0 <= t <= 1.0:
        raise LossContractError(f"t={t} outside [0, 1]")
    return (1.0 - t) * clean + t * noise, noise - clean


def flow_matching_loss(predicted, u_star) -> float:
    predicted = np.asarray(predicted, dtype=np.float64)
    u_star = np.asarray(u_star, dtype=np.float64)
    if predicted.shape != u_star.shape:
        raise LossContractError(f"shape mismatch: {predicted.shape} vs {u_star.shape}")
    return float(np.mean((predicted - u_star) ** 2))


def weighted_nll(token_probs: Iterable[float], weights: Iterable[float]) -> float:
    """Weighted mean negative log-likelihood, normalised by total weight."""
    probs = list(token_probs)
    ws = list(weights)
    if len(probs) != len(ws):
        raise LossContractError(f"{len(probs)} probabilities but {len(ws)} weights")
    if not probs:
        raise LossContractError("no tokens")
    for p in probs:
        if not 0.0 < p <= 1.0:
            raise LossContractError(f"probability {p} outside (0, 1]")
    for w in ws:
        if w <= 0:
            raise LossContractError(f"weight {w} is not positive")
    return math.fsum(w * -math.log(p) for p, w in zip(probs, ws)) / math.fsum(ws)


def sft_loss(text_loss: float, image_loss: float, ce_weight: float = 1.0, mse_weight: float = 1.0) -> float:
    return ce_weight * text_loss + mse_weight * image_loss


# ---------------------------------------------------------------------------
# pack files


def pack_to_dict(pack: PackedSequence, index: int = 0) -> dict:
    return {
        "pack": index,
        "total_tokens": pack.total_tokens,
        "samples": pack.sample_ids,
        "segments": [
            {
                "kind": s.kind.name,
                "tokens": s.token_count,
                "sample_id": s.sample_id,
                "supervised": s.supervised,
                "special": sorted(s.special_token_positions),
            }
            for s in pack.segments
        ],
    }


def pack_from_dict(d: dict) -> PackedSequence:
    segs = tuple(
        Segment(SegmentKind[s["kind"]], s["tokens"], s["sample_id"], s.get("supervised", False),
                frozenset(s.get("special", ())))
        for s in d["segments"]
    )
    pack = PackedSequence(segs)
    if "total_tokens" in d and d["total_tokens"] != pack.total_tokens:
        raise PackingError(f"pack {d.get('pack')} declares {d['total_tokens']} tokens but holds {pack.total_tokens}")
    return pack
