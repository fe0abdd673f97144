"""Pure-Python/numpy implementations of the hot kernels.

Same signatures as the compiled ``_kernels`` module; used when the extension
is not built or ``WGA_PURE_PYTHON=1`` is set.
"""
from __future__ import annotations

import numpy as np

DIALOG, REF, RECAP, GEN = 0, 1, 2, 3

V_DIAGONAL, V_CROSS_SAMPLE, V_FUTURE, V_GEN_RESTRICTED, V_MISSING = 1, 2, 3, 4, 5


def ffd_assign(costs, limit):
    """First-fit over ``costs`` (already in decreasing order).

    Returns ``(bin_of_item, n_bins)``.
    """
    costs = np.asarray(costs, dtype=np.int64)
    remaining: list[int] = []
    out = np.empty(len(costs), dtype=np.int64)
    for k, c in enumerate(costs.tolist()):
        for b, room in enumerate(remaining):
            if c <= room:
                remaining[b] = room - c
                out[k] = b
                break
        else:
            remaining.append(limit - c)
            out[k] = len(remaining) - 1
    return out, len(remaining)


def _segments(seg_start):
    starts = np.flatnonzero(np.r_[True, seg_start[1:] != seg_start[:-1]])
    ends = np.r_[starts[1:], len(seg_start)]
    return starts, ends


def fill_hybrid_mask(sample, kind, seg_start, seg_end):
    n = len(sample)
    out = np.zeros((n, n), dtype=np.uint8)
    if n == 0:
        return out
    starts, ends = _segments(np.asarray(seg_start))
    sample = np.asarray(sample)
    kind = np.asarray(kind)
    tri = None
    sample_first = {}
    for s, e in zip(starts, ends):
        sid = sample[s]
        s0 = sample_first.setdefault(sid, s)
        k = kind[s]
        if k == REF:
            out[s:e, s0:e] = 1
        elif k == GEN:
            out[s:e, s:e] = 1
            for ps, pe in zip(starts, ends):
                if ps >= s:
                    break
                if ps >= s0 and kind[ps] in (REF, RECAP):
                    out[s:e, ps:pe] = 1
        else:
            out[s:e, s0:s] = 1
            m = e - s
            if tri is None or tri.shape[0] < m:
                tri = np.tril(np.ones((m, m), dtype=np.uint8))
            out[s:e, s:e] = tri[:m, :m]
    return out


def find_violations(mask, sample, kind, seg_start, seg_end, strict, max_report):
    """Classify every forbidden set bit (and, if ``strict``, every missing
    permitted bit).  Returns ``(count, [(i, j, code), ...])``."""
    mask = np.asarray(mask).astype(bool)
    sample = np.asarray(sample)
    kind = np.asarray(kind)
    seg_start = np.asarray(seg_start)
    seg_end = np.asarray(seg_end)
    n = len(sample)
    cols = np.arange(n)
    count = 0
    found: list[tuple[int, int, int]] = []
    chunk = max(1, min(n, 4_000_000 // max(n, 1)))
    for r0 in range(0, n, chunk):
        rows = np.arange(r0, min(n, r0 + chunk))
        sub = mask[rows]
        i = rows[:, None]
        j = cols[None, :]
        same = sample[rows][:, None] == sample[None, :]
        ki = kind[rows][:, None]
        kj = kind[None, :]
        ss = seg_start[rows][:, None]
        se = seg_end[rows][:, None]
        text_ok = j <= i
        ref_ok = j < se
        gen_ok = ((j >= ss) & (j < se)) | ((j < ss) & ((kj == REF) | (kj == RECAP)))
        ok = np.where(ki == GEN, gen_ok, np.where(ki == REF, ref_ok, text_ok))
        code = np.zeros(sub.shape, dtype=np.int8)
        code[sub & ~same] = V_CROSS_SAMPLE
        fwd = sub & same & ~ok
        code[fwd & (ki == GEN)] = V_GEN_RESTRICTED
        code[fwd & (ki != GEN)] = V_FUTURE
        diag = np.zeros(sub.shape, dtype=bool)
        diag[np.arange(len(rows)), rows] = True
        code[diag & ~sub] = V_DIAGONAL
        if strict:
            code[same & ok & ~sub & ~diag] = V_MISSING
        ii, jj = np.nonzero(code)
        count += len(ii)
        room = max_report - len(found)
        if room > 0:
            for a, b in zip(ii[:room].tolist(), jj[:room].tolist()):
                found.append((r0 + a, b, int(code[a, b])))
    return count, found
