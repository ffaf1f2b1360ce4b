# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled GF(2^w) fold kernel."""
import numpy as np

from libc.stdint cimport int64_t, uint8_t, uint16_t, uint32_t

ctypedef fused word_t:
    uint8_t
    uint16_t
    uint32_t


def vecmat(const uint32_t[::1] share, const word_t[::1] flat, Py_ssize_t block,
           const uint32_t[::1] exp, const int64_t[::1] log):
    """XOR-accumulate ``share[j] * flat[j*block:(j+1)*block]`` over j.

    The last block may be ragged (shorter than ``block``); missing words
    count as zero.
    """
    cdef Py_ssize_t r = share.shape[0]
    cdef Py_ssize_t n = flat.shape[0]
    cdef Py_ssize_t j, k, start, stop
    cdef uint32_t a, v
    cdef int64_t la
    acc_arr = np.zeros(block, dtype=np.uint32)
    cdef uint32_t[::1] acc = acc_arr
    with nogil:
        for j in range(r):
            a = share[j]
            if a == 0:
                continue
            start = j * block
            if start >= n:
                break
            stop = start + block
            if stop > n:
                stop = n
            la = log[a]
            for k in range(stop - start):
                v = flat[start + k]
                if v != 0:
                    acc[k] ^= exp[la + log[v]]
    return acc_arr
