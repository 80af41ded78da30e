"""Numpy implementation of the kernels; bit-identical to the compiled one."""
import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO_M53 = 2.0 ** -53


def mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def persistence_counts(key, first_trial, n_trials, big, small, hs):
    """Count trials whose relative luck after h blocks is <= 0, for each h in ``hs``."""
    width = big + small
    h_max = max(hs)
    counts = [0] * len(hs)
    with np.errstate(over="ignore"):
        index = np.arange(first_trial + 1, first_trial + n_trials + 1, dtype=np.uint64)
        trial_keys = mix64(np.uint64(key) + index * GAMMA)[:, None]
        offsets = np.arange(1, width + 1, dtype=np.uint64)
        rel = np.zeros(n_trials)
        for t in range(1, h_max + 1):
            draws = offsets + np.uint64((t - 1) * width)
            u = (mix64(trial_keys + draws * GAMMA) >> np.uint64(11)).astype(np.float64) * _TWO_M53
            rel += u[:, :big].max(axis=1) - u[:, big:].max(axis=1)
            for c, h in enumerate(hs):
                if h == t:
                    counts[c] += int(np.count_nonzero(rel <= 0.0))
    return counts
