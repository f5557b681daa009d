"""Small-sample statistics used by the comparison harness.

Everything here is deterministic: the bootstrap runs on an explicit seeded
stream and the sign-flip test enumerates the full 2^n orbit rather than
sampling it.  Implementations are intentionally plain so tests can check
them against brute-force oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ValidationError
from .rng import Stream, derive, hash_tag

SIGNFLIP_MAX_N = 20


def mean(xs) -> float:
    if not xs:
        raise ValidationError("mean of empty sequence")
    total = 0.0
    for v in xs:
        total += v
    return total / len(xs)


def sample_std(xs) -> float:
    """Unbiased (n-1) standard deviation; 0.0 for n < 2."""
    n = len(xs)
    if n < 2:
        return 0.0
    m = mean(xs)
    acc = 0.0
    for v in xs:
        d = v - m
        acc += d * d
    return math.sqrt(acc / (n - 1))


def quantile(sorted_xs, q: float) -> float:
    """Linear-interpolation quantile of an already sorted sequence."""
    n = len(sorted_xs)
    if n == 0:
        raise ValidationError("quantile of empty sequence")
    if n == 1:
        return sorted_xs[0]
    pos = q * (n - 1)
    lo = int(math.floor(pos))
    if lo >= n - 1:
        return sorted_xs[n - 1]
    frac = pos - lo
    return sorted_xs[lo] * (1.0 - frac) + sorted_xs[lo + 1] * frac


def bootstrap_mean_samples(xs, n_boot: int, seed: int) -> list:
    """Resampled means, in draw order, from a seeded stream."""
    n = len(xs)
    if n == 0:
        raise ValidationError("bootstrap of empty sequence")
    stream = Stream(derive(seed, hash_tag("bootstrap")))
    out = []
    for _ in range(n_boot):
        acc = 0.0
        for _ in range(n):
            acc += xs[stream.next_below(n)]
        out.append(acc / n)
    return out

def bootstrap_ci(xs, n_boot: int = 10_000, seed: int = 0,
                 alpha: float = 0.05) -> tuple:
    """Percentile bootstrap CI for the mean: (lo, hi)."""
    if n_boot < 1000:
        raise ValidationError("bootstrap needs at least 1000 resamples")
    samples = sorted(bootstrap_mean_samples(xs, n_boot, seed))
    return (quantile(samples, alpha / 2.0), quantile(samples, 1.0 - alpha / 2.0))


def bootstrap_lcb(xs, n_boot: int, seed: int, alpha: float = 0.05) -> float:
    """Lower confidence bound for the mean (the alpha/2 percentile)."""
    samples = sorted(bootstrap_mean_samples(xs, n_boot, seed))
    return quantile(samples, alpha / 2.0)


def signflip_test(diffs) -> tuple:
    """Exact two-sided paired sign-flip test on |mean|.

    Enumerates all 2^n sign assignments; the p-value is the fraction with
    |mean| >= |observed mean| (ties count, and the identity assignment makes
    p >= 2^-n).  Returns (mean_diff, p).
    """
    n = len(diffs)
    if n == 0:
        raise ValidationError("sign-flip test of empty sequence")
    if n > SIGNFLIP_MAX_N:
        raise ValidationError(
            "sign-flip enumeration capped at n=%d (got %d)" % (SIGNFLIP_MAX_N, n)
        )
    obs = mean(diffs)
    target = obs if obs >= 0.0 else -obs
    count = 0
    total = 1 << n
    vals = list(diffs)
    for mask in range(total):
        acc = 0.0
        for i in range(n):
            v = vals[i]
            acc += -v if (mask >> i) & 1 else v
        m = acc / n
        if (m if m >= 0.0 else -m) >= target:
            count += 1
    return obs, count / total


def cohens_dz(diffs) -> float:
    """Paired effect size mean/std; 0.0 when the spread is zero."""
    sd = sample_std(diffs)
    if sd == 0.0:
        return 0.0
    return mean(diffs) / sd


@dataclass(frozen=True)
class Aggregate:
    n: int
    mean: float
    std: float
    ci_lo: float
    ci_hi: float


def aggregate(xs, n_boot: int = 10_000, seed: int = 0) -> Aggregate:
    return Aggregate(
        len(xs), mean(xs), sample_std(xs), *bootstrap_ci(xs, n_boot, seed)
    )


@dataclass(frozen=True)
class PairedResult:
    mean_diff: float
    p_value: float
    d_z: float


def paired_compare(a, b) -> PairedResult:
    """Paired comparison a - b over aligned sequences (same seeds, same order)."""
    if len(a) != len(b):
        raise ValidationError("paired comparison needs aligned sequences")
    diffs = [x - y for x, y in zip(a, b)]
    m, p = signflip_test(diffs)
    return PairedResult(m, p, cohens_dz(diffs))


def _rank_average(xs) -> list:
    """Ranks 1..n with ties sharing the average rank."""
    order = sorted(range(len(xs)), key=lambda i: (xs[i], i))
    ranks = [0.0] * len(xs)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and xs[order[j + 1]] == xs[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def spearman_rho(xs, ys) -> float:
    """Rank correlation with average ranks for ties.

    Degenerate inputs (constant sequence) return 0.0 rather than NaN.
    """
    if len(xs) != len(ys):
        raise ValidationError("spearman needs aligned sequences")
    n = len(xs)
    if n < 2:
        return 0.0
    rx = _rank_average(xs)
    ry = _rank_average(ys)
    mx = mean(rx)
    my = mean(ry)
    num = 0.0
    dx2 = 0.0
    dy2 = 0.0
    for i in range(n):
        dx = rx[i] - mx
        dy = ry[i] - my
        num += dx * dy
        dx2 += dx * dx
        dy2 += dy * dy
    den = math.sqrt(dx2) * math.sqrt(dy2)
    if den == 0.0:
        return 0.0
    return num / den
