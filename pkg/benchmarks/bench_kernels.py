"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--sizes 2048 8192] [--repeat 5]

Mask sizes are total packed tokens; each pack interleaves several samples
laid out in stage order.  Results must be identical; timings are best of
``--repeat`` runs.
"""
from __future__ import annotations

import argparse
import random
import timeit

import numpy as np

from wga import kernels
from wga.masks import token_arrays
from wga.trainprep import PackedSequence, Segment, SegmentKind


def make_pack(total: int, seed: int = 0) -> PackedSequence:
    rng = random.Random(seed)
    segs, used, sid = [], 0, 0
    while used < total:
        for kind in SegmentKind:
            n = min(rng.randint(16, max(16, total // 12)), total - used)
            if n <= 0:
                break
            segs.append(Segment(kind, n, sid))
            used += n
        sid += 1
    return PackedSequence(segs)


def best(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[1024, 4096, 8192])
    ap.add_argument("--items", type=int, default=20000, help="item count for the packing benchmark")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    py = kernels.get_impl("python")
    try:
        cy = kernels.get_impl("cython")
    except ImportError:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first")
        return

    print(f"{'kernel':<18}{'size':>8}{'python s':>12}{'cython s':>12}{'speedup':>10}")
    for n in args.sizes:
        arrays = token_arrays(make_pack(n))
        mp = py.fill_hybrid_mask(*arrays)
        mc = cy.fill_hybrid_mask(*arrays)
        assert np.array_equal(mp, mc)
        tp = best(lambda: py.fill_hybrid_mask(*arrays), args.repeat)
        tc = best(lambda: cy.fill_hybrid_mask(*arrays), args.repeat)
        print(f"{'fill_hybrid_mask':<18}{n:>8}{tp:>12.4f}{tc:>12.4f}{tp / tc:>9.1f}x")

        noisy = mp.copy()
        noisy[np.random.default_rng(0).random(noisy.shape) < 0.001] ^= 1
        assert py.find_violations(noisy, *arrays, True, 1000) == cy.find_violations(noisy, *arrays, True, 1000)
        tp = best(lambda: py.find_violations(noisy, *arrays, True, 1000), args.repeat)
        tc = best(lambda: cy.find_violations(noisy, *arrays, True, 1000), args.repeat)
        print(f"{'find_violations':<18}{n:>8}{tp:>12.4f}{tc:>12.4f}{tp / tc:>9.1f}x")

    costs = np.sort(np.random.default_rng(1).integers(1, 20000, args.items))[::-1].astype(np.int64)
    rp, rc = py.ffd_assign(costs, 41520), cy.ffd_assign(costs, 41520)
    assert rp[1] == rc[1] and np.array_equal(rp[0], rc[0])
    tp = best(lambda: py.ffd_assign(costs, 41520), args.repeat)
    tc = best(lambda: cy.ffd_assign(costs, 41520), args.repeat)
    print(f"{'ffd_assign':<18}{args.items:>8}{tp:>12.4f}{tc:>12.4f}{tp / tc:>9.1f}x")


if __name__ == "__main__":
    main()
