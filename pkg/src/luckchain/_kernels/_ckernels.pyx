# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Monte Carlo kernel for minority-fork persistence."""
from libc.stdint cimport uint64_t
from libc.stdlib cimport malloc, free

cdef uint64_t GAMMA = 0x9E3779B97F4A7C15ULL
cdef double TWO_M53 = 1.0 / 9007199254740992.0


cdef inline uint64_t mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


def persistence_counts(uint64_t key, long first_trial, long n_trials, int big, int small, hs):
    """Count trials whose relative luck after h blocks is <= 0, for each h in ``hs``."""
    cdef long n_h = len(hs)
    cdef long *checkpoints = <long *> malloc(n_h * sizeof(long))
    cdef long *counts = <long *> malloc(n_h * sizeof(long))
    cdef long i, t, k, c, h_max = 0
    cdef uint64_t trial_key, draw
    cdef double rel, best_big, best_small, u
    cdef int width = big + small
    try:
        for c in range(n_h):
            checkpoints[c] = hs[c]
            counts[c] = 0
            if checkpoints[c] > h_max:
                h_max = checkpoints[c]
        with nogil:
            for i in range(n_trials):
                trial_key = mix64(key + <uint64_t>(first_trial + i + 1) * GAMMA)
                rel = 0.0
                draw = 0
                for t in range(1, h_max + 1):
                    best_big = -1.0
                    best_small = -1.0
                    for k in range(width):
                        draw += 1
                        u = <double>(mix64(trial_key + draw * GAMMA) >> 11) * TWO_M53
                        if k < big:
                            if u > best_big:
                                best_big = u
                        elif u > best_small:
                            best_small = u
                    rel += best_big - best_small
                    for c in range(n_h):
                        if checkpoints[c] == t and rel <= 0.0:
                            counts[c] += 1
        return [counts[c] for c in range(n_h)]
    finally:
        free(checkpoints)
        free(counts)
