"""Hybrid attention masks over packed interleaved sequences.

Rules, all within one sample (nothing crosses a sample boundary):

* text tokens (dialog and recaption) are causal over the sample's history;
* reference-image tokens see their whole block plus the history before it;
* generation latents see their whole block plus the reference-image and
  recaption tokens that precede it, and nothing else.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .trainprep import PackedSequence

RULE_NAMES = {
    kernels.V_DIAGONAL: "diagonal",
    kernels.V_CROSS_SAMPLE: "cross-sample",
    kernels.V_FUTURE: "future",
    kernels.V_GEN_RESTRICTED: "gen-restricted",
    kernels.V_MISSING: "missing",
}


def token_arrays(pack: PackedSequence) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-token ``(sample_ordinal, kind, segment_start, segment_end)``."""
    n = pack.total_tokens
    sample = np.empty(n, dtype=np.int32)
    kind = np.empty(n, dtype=np.int8)
    seg_start = np.empty(n, dtype=np.int32)
    seg_end = np.empty(n, dtype=np.int32)
    off = 0
    ordinal = -1
    prev = object()
    for seg in pack.segments:
        if seg.sample_id != prev:
            ordinal += 1
            prev = seg.sample_id
        e = off + seg.token_count
        sample[off:e] = ordinal
        kind[off:e] = int(seg.kind)
        seg_start[off:e] = off
        seg_end[off:e] = e
        off = e
    return sample, kind, seg_start, seg_end


@dataclass(frozen=True)
class MaskMatrix:
    """``bits[i, j]`` is true when token ``i`` may attend to token ``j``."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.ascontiguousarray(self.bits, dtype=bool)
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise ValueError(f"mask must be square, got shape {b.shape}")
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @property
    def n(self) -> int:
        return self.bits.shape[0]

    def row(self, i: int) -> set[int]:
        return set(np.flatnonzero(self.bits[i]).tolist())

    def __eq__(self, other):
        return isinstance(other, MaskMatrix) and np.array_equal(self.bits, other.bits)

    __hash__ = None


@dataclass(frozen=True)
class MaskViolation:
    i: int
    j: int
    rule: str


def build_hybrid_mask(pack: PackedSequence, impl=None) -> MaskMatrix:
    k = impl or kernels
    bits = k.fill_hybrid_mask(*token_arrays(pack))
    return MaskMatrix(bits.astype(bool))


def validate_mask(mask: MaskMatrix, pack: PackedSequence, strict: bool = False,
                  max_report: int | None = None, impl=None) -> list[MaskViolation]:
    """Every ``(i, j)`` breaking a rule, row-major.

    By default only prohibitions are checked (a bit set where attention is
    forbidden, or a missing diagonal).  ``strict`` also reports permitted bits
    that are unset.
    """
    arrays = token_arrays(pack)
    if mask.n != len(arrays[0]):
        raise ValueError(f"mask is {mask.n}x{mask.n} but the pack has {len(arrays[0])} tokens")
    k = impl or kernels
    limit = mask.n * mask.n if max_report is None else max_report
    _, found = k.find_violations(mask.bits.view(np.uint8), *arrays, bool(strict), limit)
    return [MaskViolation(i, j, RULE_NAMES[c]) for i, j, c in found]


# ---------------------------------------------------------------------------
# run-length text dump

_HEADER = "# hybrid-mask n="


def dump_mask(mask: MaskMatrix) -> str:
    """One line per row: ``<row> <start>:<end> ...`` with half-open runs of
    permitted columns."""
    lines = [f"{_HEADER}{mask.n}"]
    for i in range(mask.n):
        r = np.r_[False, mask.bits[i], False].astype(np.int8)
        edges = np.flatnonzero(np.diff(r))
        runs = " ".join(f"{s}:{e}" for s, e in zip(edges[::2].tolist(), edges[1::2].tolist()))
        lines.append(f"{i} {runs}".rstrip())
    return "\n".join(lines) + "\n"


def parse_mask(text: str) -> MaskMatrix:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(_HEADER):
        raise ValueError("missing mask header")
    n = int(lines[0][len(_HEADER):])
    bits = np.zeros((n, n), dtype=bool)
    rows = [ln for ln in lines[1:] if ln.strip()]
    if len(rows) != n:
        raise ValueError(f"expected {n} rows, found {len(rows)}")
    for lineno, ln in enumerate(rows, start=2):
        head, *runs = ln.split()
        i = int(head)
        for run in runs:
            s, e = run.split(":")
            s, e = int(s), int(e)
            if not 0 <= s < e <= n:
                raise ValueError(f"line {lineno}: bad run {run!r}")
            bits[i, s:e] = True
    return MaskMatrix(bits)
