"""Deterministic random streams and the small statistics toolbox.

Every random draw in this package is a pure function of a 64-bit key and an
index word: ``draw = mix64(key ^ (index * PHI + SALT))`` with a splitmix64
finalizer.  Keys are derived by absorbing integer or string words one at a
time with the same primitive.  This gives random access into conceptually
infinite fields, and makes every result independent of query order, worker
count and platform.

Real-valued conversion is fixed as ``uint64 output * 2**-64``, scaled to the
target interval by the caller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as _scipy_stats

_MASK64 = (1 << 64) - 1
PHI64 = 0x9E3779B97F4A7C15
SALT64 = 0x632BE59BD9B4E019
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

_U64 = np.uint64
_V_PHI = _U64(PHI64)
_V_SALT = _U64(SALT64)
_V_M1 = _U64(_M1)
_V_M2 = _U64(_M2)

TO_UNIT = 2.0 ** -64


def mix64(x: int) -> int:
    """Splitmix64 finalizer on a Python int (mod 2**64)."""
    x &= _MASK64
    x ^= x >> 30
    x = (x * _M1) & _MASK64
    x ^= x >> 27
    x = (x * _M2) & _MASK64
    x ^= x >> 31
    return x


def mix64_array(x: np.ndarray) -> np.ndarray:
    """Vectorized splitmix64 finalizer; consumes and returns uint64 arrays."""
    x = x.astype(np.uint64, copy=True)
    x ^= x >> _U64(30)
    x *= _V_M1
    x ^= x >> _U64(27)
    x *= _V_M2
    x ^= x >> _U64(31)
    return x


def chain(key: int, word: int) -> int:
    """Absorb one 64-bit word into a key."""
    return mix64(key ^ ((word * PHI64 + SALT64) & _MASK64))


def chain_array(key, word) -> np.ndarray:
    """``chain`` where ``key`` or ``word`` (or both) are uint64 arrays."""
    if isinstance(word, np.ndarray):
        word = word.astype(np.uint64, copy=False)
        w = word * _V_PHI + _V_SALT
    else:
        w = _U64((word * PHI64 + SALT64) & _MASK64)
    if isinstance(key, np.ndarray):
        key = key.astype(np.uint64, copy=False)
    else:
        key = _U64(key & _MASK64)
    return mix64_array(np.bitwise_xor(key, w))


def string_word(s: str) -> int:
    """FNV-1a hash of a label, used to absorb strings into keys."""
    h = 0xCBF29CE484222325
    for b in s.encode("utf-8"):
        h ^= b
        h = (h * 0x100000001B3) & _MASK64
    return h


def pack_index(coords, bits: int = 16):
    """Pack small integer coordinates into one index word.

    Injective for ``|c| < 2**(bits-1)`` per coordinate and at most
    ``64 // bits`` coordinates; negative values are folded two's-complement.
    Accepts a tuple of ints (returns int) or a sequence of equal-length
    integer arrays (returns a uint64 array).
    """
    n = len(coords)
    if n * bits > 64:
        raise ValueError(f"cannot pack {n} coordinates at {bits} bits each")
    lim = 1 << (bits - 1)
    mask = (1 << bits) - 1
    if n and isinstance(coords[0], np.ndarray):
        out = np.zeros(coords[0].shape, dtype=np.uint64)
        for i, c in enumerate(coords):
            if np.abs(c).max(initial=0) >= lim:
                raise ValueError(f"coordinate magnitude >= {lim} cannot be packed")
            part = c.astype(np.int64) & np.int64(mask)
            out |= part.astype(np.uint64) << _U64(bits * (n - 1 - i))
        return out
    out = 0
    for i, c in enumerate(coords):
        if abs(int(c)) >= lim:
            raise ValueError(f"coordinate magnitude >= {lim} cannot be packed")
        out |= (int(c) & mask) << (bits * (n - 1 - i))
    return out


def bernoulli_threshold(p: float) -> int:
    """Open threshold for ``raw < threshold``; exact at p=0 and p=1."""
    if p <= 0.0:
        return 0
    if p >= 1.0:
        return 1 << 64
    return int(p * 2.0 ** 64)


@dataclass(frozen=True)
class RandomStream:
    """Keyed, counter-based source of deterministic uniform draws.

    Distinct namespaces and derivation words give streams that are
    statistically independent; identical (seed, namespace, words, index)
    always reproduce the same output.
    """

    key: int

    @classmethod
    def from_seed(cls, seed: int, namespace: str = "") -> "RandomStream":
        key = mix64(seed & _MASK64)
        if namespace:
            key = chain(key, string_word(namespace))
        return cls(key)

    def derive(self, *words) -> "RandomStream":
        """Child stream; words may be ints or strings."""
        key = self.key
        for w in words:
            key = chain(key, string_word(w) if isinstance(w, str) else int(w))
        return RandomStream(key)

    def raw(self, idx):
        """uint64 draw(s) at the given index word(s)."""
        if isinstance(idx, np.ndarray):
            return chain_array(self.key, idx)
        return chain(self.key, int(idx))

    def uniform(self, idx):
        """Uniform draw(s) in [0, 1): raw output times 2**-64."""
        r = self.raw(idx)
        if isinstance(r, np.ndarray):
            return r.astype(np.float64) * TO_UNIT
        return float(r) * TO_UNIT

    def bernoulli(self, p: float, idx):
        """Bernoulli(p) draw(s); exact (all-False / all-True) at p=0 / p=1."""
        thr = bernoulli_threshold(p)
        r = self.raw(idx)
        if isinstance(r, np.ndarray):
            if thr == 0:
                return np.zeros(r.shape, dtype=bool)
            if thr >= 1 << 64:
                return np.ones(r.shape, dtype=bool)
            return r < _U64(thr)
        return r < thr


def checked_sum(values) -> float:
    """Compensated (exactly rounded) sum for estimator aggregation."""
    return math.fsum(np.asarray(values, dtype=np.float64).ravel())


@dataclass(frozen=True)
class TestReport:
    """Outcome of a single statistical test; ``passed`` iff p_value >= alpha."""

    name: str
    statistic: float
    p_value: float
    alpha: float
    n: int

    @property
    def passed(self) -> bool:
        return self.p_value >= self.alpha


def wilson_interval(successes: int, trials: int, confidence: float = 0.95):
    """Wilson score interval for a binomial proportion.

    Behaves sensibly near 0 and 1, which is where the phase transition
    estimates live.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not 0 <= successes <= trials:
        raise ValueError("successes must lie in [0, trials]")
    z = float(_scipy_stats.norm.ppf(0.5 + confidence / 2.0))
    phat = successes / trials
    denom = 1.0 + z * z / trials
    center = (phat + z * z / (2.0 * trials)) / denom
    margin = (z / denom) * math.sqrt(
        phat * (1.0 - phat) / trials + z * z / (4.0 * trials * trials)
    )
    # the bounds are exactly 0 / 1 at the boundaries; avoid rounding drift
    lo = 0.0 if successes == 0 else max(0.0, min(center - margin, phat))
    hi = 1.0 if successes == trials else min(1.0, max(center + margin, phat))
    return lo, hi


def chi_square_independence(table, alpha: float = 0.01, name: str = "chi2") -> TestReport:
    """Pearson chi-square test of a joint count table against the product of
    its marginals.  Accepts k-dimensional tables (one axis per variable).

    Rejects sparse tables (any expected cell < 5) instead of reporting an
    unreliable statistic; raise the sample size in that case.
    """
    table = np.asarray(table, dtype=np.float64)
    if table.ndim < 2:
        raise ValueError("need a table with at least two axes")
    if (table < 0).any():
        raise ValueError("counts must be nonnegative")
    stat, p_value, _, expected = _scipy_stats.chi2_contingency(table, correction=False)
    if (expected < 5.0).any():
        raise ValueError(
            "expected cell count below 5; increase the number of trials"
        )
    return TestReport(name, float(stat), float(p_value), alpha, int(table.sum()))


def ks_two_sample(a, b, alpha: float = 0.01, name: str = "ks2") -> TestReport:
    """Two-sample Kolmogorov-Smirnov test with the asymptotic p-value."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("samples must be nonempty")
    res = _scipy_stats.ks_2samp(a, b, method="asymp")
    return TestReport(name, float(res.statistic), float(res.pvalue), alpha, a.size + b.size)


def bonferroni(alpha: float, m: int) -> float:
    """Per-test level for a battery of m tests at family level alpha."""
    if m < 1:
        raise ValueError("battery must contain at least one test")
    return alpha / m
