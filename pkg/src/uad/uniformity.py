"""Quantization and the K1 coincidence test for uniformity on a finite alphabet.

The null distribution of K1 (the number of symbols seen exactly once in N
uniform draws over M letters) is computed exactly with Python integers.  The
alternating sum below cancels catastrophically in floating point already at
M=200, N=50, so no intermediate is ever a float.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import comb
from numbers import Rational
from typing import Sequence

import numpy as np

EPS_OUT = 1e-12


def quantize(y, levels: int):
    """Map values in [0, 1] to symbols ``floor(levels * y)``, with 1 sent to ``levels - 1``.

    Accepts a scalar (returns ``int``) or an array (returns an int64 array).
    """
    if levels < 2:
        raise ValueError("need at least 2 quantization levels")
    arr = np.asarray(y, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("quantize expects values in [0, 1]")
    sym = np.minimum(np.floor(arr * levels).astype(np.int64), levels - 1)
    return int(sym) if sym.ndim == 0 else sym


def k1_statistic(x: Sequence) -> int:
    """Count the samples whose value occurs exactly once in ``x``."""
    if len(x) == 0:
        raise ValueError("K1 of an empty sequence is undefined")
    return sum(1 for c in Counter(np.asarray(x).tolist()).values() if c == 1)


def k1_rows(symbols: np.ndarray) -> np.ndarray:
    """Row-wise K1 for a ``(batches, N)`` integer array."""
    s = np.sort(np.asarray(symbols), axis=1)
    if s.shape[1] == 1:
        return np.ones(s.shape[0], dtype=np.int64)
    same = s[:, 1:] == s[:, :-1]
    left = np.zeros_like(s, dtype=bool)
    right = np.zeros_like(s, dtype=bool)
    left[:, 1:] = same
    right[:, :-1] = same
    return (~(left | right)).sum(axis=1)


@dataclass(frozen=True)
class CoincidencePmf:
    alphabet_M: int
    sample_N: int
    probs: tuple[Fraction, ...]

    def __getitem__(self, k: int) -> Fraction:
        return self.probs[k]

    def cdf(self, t: int) -> Fraction:
        if t < 0:
            return Fraction(0)
        return sum(self.probs[: t + 1], Fraction(0))

    def mean(self) -> Fraction:
        return sum((k * p for k, p in enumerate(self.probs)), Fraction(0))

    def as_floats(self) -> np.ndarray:
        return np.array([float(p) for p in self.probs])


@lru_cache(maxsize=64)
def coincidence_pmf(M: int, N: int) -> CoincidencePmf:
    """Exact law of K1 for N i.i.d. uniform draws on an M-letter alphabet.

    P(K1 = k) = sum_{j >= k} (-1)^(j+k) C(j,k) C(M,j) N!/(N-j)! (M-j)^(N-j) / M^N,
    where the falling factorial vanishes for j > N.
    """
    if M < 1 or N < 1:
        raise ValueError("need M >= 1 and N >= 1")
    # term_j = C(M,j) * N!/(N-j)! * (M-j)^(N-j), the number of sequences in
    # which a chosen set of j letters each appear exactly once (counted with
    # inclusion-exclusion multiplicity).
    top = min(M, N)
    terms = []
    falling = 1
    for j in range(top + 1):
        if j > 0:
            falling *= N - j + 1
        terms.append(comb(M, j) * falling * (M - j) ** (N - j))
    denom = M**N
    probs = []
    for k in range(N + 1):
        num = 0
        for j in range(k, top + 1):
            t = comb(j, k) * terms[j]
            num += -t if (j + k) % 2 else t
        probs.append(Fraction(num, denom))
    return CoincidencePmf(M, N, tuple(probs))


def expected_k1(M: int, N: int) -> float:
    if M < 1 or N < 1:
        raise ValueError("need M >= 1 and N >= 1")
    return N * (1.0 - 1.0 / M) ** (N - 1)


def _as_fraction(alpha) -> Fraction:
    if isinstance(alpha, Rational):
        return Fraction(alpha)
    # decimal reading, so 0.05 means exactly 1/20
    return Fraction(str(float(alpha)))


def threshold(M: int, N: int, fp_level) -> int:
    """Largest t with P0(K1 <= t) <= fp_level, or -1 if none exists."""
    a = _as_fraction(fp_level)
    if not (0 < a < 1):
        raise ValueError(f"fp level must lie in (0, 1), got {fp_level}")
    pmf = coincidence_pmf(M, N)
    t, cum = -1, Fraction(0)
    for k, p in enumerate(pmf.probs):
        cum += p
        if cum > a:
            break
        t = k
    return t


@dataclass(frozen=True)
class TestSpec:
    alphabet_M: int
    sample_N: int
    fp_level: float
    epsilon: float = 0.0
    threshold_T: int | None = None

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if self.alphabet_M < 2:
            raise ValueError("alphabet_M must be >= 2")
        if self.sample_N < 1:
            raise ValueError("sample_N must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        t = threshold(self.alphabet_M, self.sample_N, self.fp_level)
        if self.threshold_T is None:
            object.__setattr__(self, "threshold_T", t)
        elif self.threshold_T != t:
            raise ValueError(
                f"threshold {self.threshold_T} inconsistent with "
                f"(M={self.alphabet_M}, N={self.sample_N}, alpha={self.fp_level}); expected {t}"
            )


def coincidence_test(x: Sequence[int], spec: TestSpec) -> tuple[bool, int]:
    """Return ``(reject, K1)``; rejecting means the batch looks non-uniform."""
    x = np.asarray(x)
    if x.ndim != 1 or len(x) != spec.sample_N:
        raise ValueError(f"expected {spec.sample_N} symbols, got shape {x.shape}")
    if np.any(x < 0) or np.any(x >= spec.alphabet_M):
        raise ValueError(f"symbols must lie in [0, {spec.alphabet_M})")
    k1 = k1_statistic(x)
    return k1 <= spec.threshold_T, k1
