# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: first-fit packing and hybrid attention masks.

Mirrors ``_kernels_py`` exactly; the test-suite checks both against each other.
"""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport int8_t, int32_t, int64_t, uint8_t
from libc.string cimport memcpy, memset

cnp.import_array()

cdef enum:
    DIALOG = 0
    REF = 1
    RECAP = 2
    GEN = 3

V_DIAGONAL, V_CROSS_SAMPLE, V_FUTURE, V_GEN_RESTRICTED, V_MISSING = 1, 2, 3, 4, 5


def ffd_assign(costs, long long limit):
    cdef int64_t[::1] c = np.ascontiguousarray(costs, dtype=np.int64)
    cdef Py_ssize_t n = c.shape[0], k, b, nbins = 0
    cdef int64_t[::1] room = np.empty(max(n, 1), dtype=np.int64)
    out_arr = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] out = out_arr
    for k in range(n):
        for b in range(nbins):
            if c[k] <= room[b]:
                room[b] -= c[k]
                out[k] = b
                break
        else:
            room[nbins] = limit - c[k]
            out[k] = nbins
            nbins += 1
    return out_arr, nbins


cdef inline bint _permitted(Py_ssize_t i, Py_ssize_t j, const int8_t[::1] kind,
                            const int32_t[::1] ss, const int32_t[::1] se) nogil:
    cdef int8_t ki = kind[i]
    if ki == GEN:
        if ss[i] <= j < se[i]:
            return True
        return j < ss[i] and (kind[j] == REF or kind[j] == RECAP)
    if ki == REF:
        return j < se[i]
    return j <= i


def fill_hybrid_mask(sample, kind, seg_start, seg_end):
    cdef const int32_t[::1] smp = np.ascontiguousarray(sample, dtype=np.int32)
    cdef const int8_t[::1] knd = np.ascontiguousarray(kind, dtype=np.int8)
    cdef const int32_t[::1] ss = np.ascontiguousarray(seg_start, dtype=np.int32)
    cdef const int32_t[::1] se = np.ascontiguousarray(seg_end, dtype=np.int32)
    cdef Py_ssize_t n = smp.shape[0], i, j, lo
    out_arr = np.zeros((n, n), dtype=np.uint8)
    if n == 0:
        return out_arr
    cdef uint8_t[:, ::1] out = out_arr
    cdef uint8_t* base = &out[0, 0]
    with nogil:
        lo = 0
        for i in range(n):
            if i > 0 and smp[i] != smp[i - 1]:
                lo = i
            # REF and GEN rows are identical within a segment: copy the first one
            if (knd[i] == REF or knd[i] == GEN) and i > ss[i]:
                memcpy(base + i * n, base + (i - 1) * n, n)
            elif knd[i] == REF:
                memset(base + i * n + lo, 1, se[i] - lo)
            elif knd[i] == GEN:
                memset(base + i * n + ss[i], 1, se[i] - ss[i])
                for j in range(lo, ss[i]):
                    if knd[j] == REF or knd[j] == RECAP:
                        out[i, j] = 1
            else:
                memset(base + i * n + lo, 1, i + 1 - lo)
    return out_arr


def find_violations(mask, sample, kind, seg_start, seg_end, bint strict, Py_ssize_t max_report):
    cdef const uint8_t[:, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef const int32_t[::1] smp = np.ascontiguousarray(sample, dtype=np.int32)
    cdef const int8_t[::1] knd = np.ascontiguousarray(kind, dtype=np.int8)
    cdef const int32_t[::1] ss = np.ascontiguousarray(seg_start, dtype=np.int32)
    cdef const int32_t[::1] se = np.ascontiguousarray(seg_end, dtype=np.int32)
    cdef Py_ssize_t n = smp.shape[0], i, j, count = 0
    cdef int code
    cdef bint bit, ok
    found = []
    for i in range(n):
        for j in range(n):
            bit = m[i, j] != 0
            code = 0
            if i == j:
                if not bit:
                    code = V_DIAGONAL
            elif smp[i] != smp[j]:
                if bit:
                    code = V_CROSS_SAMPLE
            else:
                ok = _permitted(i, j, knd, ss, se)
                if bit and not ok:
                    code = V_GEN_RESTRICTED if knd[i] == GEN else V_FUTURE
                elif strict and ok and not bit:
                    code = V_MISSING
            if code:
                count += 1
                if len(found) < max_report:
                    found.append((i, j, code))
    return count, found
