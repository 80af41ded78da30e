"""Persistence and proportional-control statistics.

The Monte Carlo side estimates Pr(L(h) <= 0), where L(h) is the majority's
per-block maximum luck minus the minority's, summed over h blocks after a
fork. The analytic side bounds the same probability by rho**h, with rho the
minimum over s > 0 of E[exp(-s X_M)] * E[exp(s X_m)] for X_n the maximum of
n uniforms.
"""
import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from scipy import integrate, optimize

from . import _kernels
from .encoding import u64
from .errors import ConfigurationError

BLOCK_TRIALS = 8192


@dataclass(frozen=True)
class PersistenceQuery:
    M: int
    m: int
    h: int
    trials: int
    seed: int = 0

    def __post_init__(self):
        if not self.M > self.m >= 1:
            raise ConfigurationError(f"need M > m >= 1, got M={self.M}, m={self.m}")
        if self.h < 1:
            raise ConfigurationError("h must be at least 1")
        if self.trials < 1:
            raise ConfigurationError("trials must be at least 1")


@dataclass(frozen=True)
class PersistenceResult:
    M: int
    m: int
    h: int
    trials: int
    p_hat: float
    ci_halfwidth: float
    chernoff_rho: float
    chernoff_bound: float
    s_star: float

    def row(self):
        return {
            "M": self.M,
            "m": self.m,
            "h": self.h,
            "trials": self.trials,
            "p_hat": self.p_hat,
            "ci": self.ci_halfwidth,
            "rho": self.chernoff_rho,
            "bound": self.chernoff_bound,
            "s_star": self.s_star,
        }


def stream_key(seed, M, m):
    """Per-(seed, M, m) RNG key; trials are indexed within this stream."""
    digest = hashlib.blake2b(u64(seed & (2**64 - 1)) + u64(M) + u64(m), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def _block_job(args):
    key, first, n, M, m, hs = args
    return _kernels.persistence_counts(key, first, n, M, m, hs)


def minority_win_counts(M, m, hs, trials, seed=0, workers=1):
    """Counts of L(h) <= 0 per h, over ``trials`` independent forks.

    Trials are split into fixed blocks that are seeded by position, so the
    counts do not depend on ``workers``.
    """
    hs = tuple(sorted(set(int(h) for h in hs)))
    key = stream_key(seed, M, m)
    jobs = [
        (key, first, min(BLOCK_TRIALS, trials - first), M, m, hs)
        for first in range(0, trials, BLOCK_TRIALS)
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_block_job, jobs))
    else:
        parts = [_block_job(job) for job in jobs]
    totals = [sum(col) for col in zip(*parts)]
    return dict(zip(hs, totals))


def three_sigma(p, trials):
    return 3.0 * math.sqrt(p * (1.0 - p) / trials)


def mc_persistence(q, workers=1):
    return persistence_table(q.M, q.m, [q.h], q.trials, q.seed, workers)[0]


def persistence_table(M, m, hs, trials, seed=0, workers=1):
    """One :class:`PersistenceResult` per h, sharing the same simulated forks."""
    hs = sorted(set(hs))
    for h in hs:
        PersistenceQuery(M, m, h, trials, seed)
    if not hs:
        raise ConfigurationError("at least one h is required")
    counts = minority_win_counts(M, m, hs, trials, seed, workers)
    rho, s_star = chernoff_rho(M, m)
    out = []
    for h in hs:
        p = counts[h] / trials
        out.append(PersistenceResult(M, m, h, trials, p, three_sigma(p, trials), rho, rho**h, s_star))
    return out


# -- moment generating function of the maximum of n uniforms -------------------


def mgf_max_uniform(n, s):
    """E[exp(s X)] for X the maximum of n independent Uniform(0, 1), by quadrature."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if s == 0:
        return 1.0
    # Factor out the peak of the integrand so the quadrature works on O(1) values.
    peak = max(s, 0.0)

    def integrand(x):
        return n * x ** (n - 1) * math.exp(s * x - peak)

    value, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=0.0, epsrel=1e-12, limit=200)
    return value * math.exp(peak)


def mgf_max_uniform_series(n, s, rtol=1e-17):
    """Same quantity as :func:`mgf_max_uniform` from a positive-term series.

    For s >= 0:  n * sum_k s^k / (k! (n + k)).
    For s < 0, substitute y = 1 - x:  e^s * sum_k |s|^k n! / (n + k)!.
    Both series have only positive terms, so there is no cancellation.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if s >= 0:
        term = 1.0  # s^k / k!
        total = term * n / n
        k = 0
        while True:
            k += 1
            term *= s / k
            contrib = term * n / (n + k)
            total += contrib
            if contrib <= rtol * total and k > s:
                return total
    a = -s
    term = 1.0  # a^k n! / (n + k)!
    total = term
    k = 0
    while True:
        k += 1
        term *= a / (n + k)
        total += term
        if term <= rtol * total and k > a:
            return math.exp(s) * total


def _log_g(M, m, s):
    return math.log(mgf_max_uniform(M, -s)) + math.log(mgf_max_uniform(m, s))


def chernoff_rho(M, m, tol=1e-9):
    """Minimise g(s) = E[exp(-s X_M)] E[exp(s X_m)] over s > 0.

    log g is convex (a sum of cumulant generating functions), so a bracket is
    grown until g turns upward and the minimum is then located by a bounded
    scalar search. Returns ``(rho, s_star)``.
    """
    if not M > m >= 1:
        raise ConfigurationError(f"need M > m >= 1, got M={M}, m={m}")
    hi = 1.0
    while _log_g(M, m, hi) < _log_g(M, m, hi / 2):
        hi *= 2
    res = optimize.minimize_scalar(lambda s: _log_g(M, m, s), bounds=(0.0, hi), method="bounded",
                                   options={"xatol": tol})
    return math.exp(res.fun), float(res.x)


def chernoff_bound(M, m, h):
    rho, _ = chernoff_rho(M, m)
    return rho**h


def single_round_minority_win(M, m):
    """Exact Pr(max of m uniforms > max of M uniforms)."""
    return m / (M + m)


# -- proportional control ------------------------------------------------------


@dataclass(frozen=True)
class Share:
    share: float
    expected: float
    z: float
    wins: int
    blocks: int


def proportional_share(trace, group):
    """Fraction of canonical-chain blocks mined by ``group``, with binomial z-score."""
    group = set(group)
    winners = [r.winner for r in trace.rounds]
    n = len(winners)
    if n == 0:
        raise ValueError("trace has no rounds")
    wins = sum(1 for w in winners if w in group)
    expected = len(group & set(range(trace.participants))) / trace.participants
    share = wins / n
    sd = math.sqrt(expected * (1 - expected) / n)
    z = 0.0 if sd == 0 else (share - expected) / sd
    return Share(share, expected, z, wins, n)
