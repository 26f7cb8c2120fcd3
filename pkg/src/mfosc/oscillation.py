"""Counting functionals over a sign table.

Every ratio argument (alpha, u0, u1, theta) is an exact ``Fraction``; floors
are integer divisions so nothing depends on floating point near the
breakpoints m/n.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from .core import ExperimentParams, Interval, SignTable, default_L
from .errors import ContractError, InternalError, RangeError

INT64_SAFE = 1 << 62


def _as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        raise ContractError(f"exact rational required, got float {value!r}")
    return Fraction(value)


def floor_mul(n: np.ndarray, r: Fraction) -> np.ndarray:
    """floor(r * n) elementwise, exactly."""
    a, b = r.numerator, r.denominator
    if abs(a) * int(n.max(initial=0)) < INT64_SAFE:
        return (a * n) // b
    return np.array([(a * int(k)) // b for k in n], dtype=object)


@dataclass(frozen=True)
class OscillationReport:
    x: int
    changes: int
    agreements: int
    paper_lower_bound: float
    bound_satisfied: bool


def count_sign_changes(table: SignTable, x: int) -> OscillationReport:
    """Counts of n <= x-1 with f(n) = -f(n+1) and with f(n) = f(n+1)."""
    if x < 2:
        raise RangeError(f"x must be at least 2, got {x}")
    table.check_index(x, "x")
    s = table.signs[1 : x + 1]
    changes = int(np.count_nonzero(s[:-1] != s[1:]))
    bound = x / default_L(x) ** 7
    return OscillationReport(x, changes, x - 1 - changes, bound, changes > bound)


def _floors_in_range(table: SignTable, I: Interval, alpha: Fraction):
    table.check_index(I.hi, "interval end")
    n = np.arange(I.lo, I.hi + 1, dtype=np.int64)
    m = floor_mul(n, alpha)
    low = np.flatnonzero(m < 1)
    if len(low):
        raise RangeError(f"floor({alpha} * {I.lo + int(low[0])}) < 1 where f is undefined")
    high = np.flatnonzero(m > table.limit)
    if len(high):
        bad = I.lo + int(high[0])
        raise RangeError(f"floor({alpha} * {bad}) exceeds table limit {table.limit} at n={bad}")
    return n, m.astype(np.int64)


def sigma(table: SignTable, I: Interval, alpha) -> int:
    """#{n in I : f(n) = -f(floor(alpha n))}."""
    alpha = _as_fraction(alpha)
    if alpha <= 0:
        raise ContractError(f"alpha must be positive, got {alpha}")
    n, m = _floors_in_range(table, I, alpha)
    s = table.signs
    return int(np.count_nonzero(s[n] != s[m]))


def sigma_thresholds(count: int, size: int) -> dict:
    """Compare a Sigma count with |I|/3 from above and with 2|I|/3 from below."""
    return {"above_third": 3 * count > size, "below_two_thirds": 3 * count < 2 * size}


@dataclass(frozen=True)
class PigeonholeWitness:
    delta: int
    delta_prime: int
    count: int
    lower_bound: int


PAIRS = ((0, 1), (0, 2), (1, 2))


def pigeonhole_agreement_witness(table: SignTable, x: int) -> PigeonholeWitness:
    """Best pair delta < delta' in {0,1,2} for f(2j+delta) = f(2j+delta').

    j runs over 1 <= j <= x/2 - 1. Ties go to the first pair in
    (0,1), (0,2), (1,2) order.
    """
    if x < 6:
        raise ContractError(f"x must be at least 6, got {x}")
    J = math.floor(Fraction(x, 2) - 1)
    table.check_index(2 * J + 2, "2j+2")
    j = np.arange(1, J + 1, dtype=np.int64)
    s = table.signs
    best = None
    for d, dp in PAIRS:
        c = int(np.count_nonzero(s[2 * j + d] == s[2 * j + dp]))
        if best is None or c > best[2]:
            best = (d, dp, c)
    return PigeonholeWitness(*best, lower_bound=-(-J // 3))


def locate_sign_change(table: SignTable, n: int, p: int, q: int) -> int:
    """Smallest m in (pn - q, pn - 1] with f(m) = -f(m+1).

    Requires f(p) = f(q) and f(n) = -f(floor(pn/q)); then f(pn) and
    f(q floor(pn/q)) differ, and both arguments lie in (pn - q, pn].
    """
    table.check_index(p * n, "pn")
    s = table.signs
    if s[p] != s[q]:
        raise ContractError(f"f({p}) != f({q})")
    k = (p * n) // q
    if k < 1:
        raise RangeError(f"floor({p}*{n}/{q}) = {k} where f is undefined")
    if s[n] == s[k]:
        raise ContractError(f"f({n}) = f(floor({p}*{n}/{q})) = f({k}); no sign flip to locate")
    lo = max(p * n - q + 1, 1)
    window = s[lo : p * n + 1]
    hits = np.flatnonzero(window[:-1] != window[1:])
    if not len(hits):
        raise InternalError(f"no sign change in ({p * n - q}, {p * n}] for n={n}, p={p}, q={q}")
    return lo + int(hits[0])


@dataclass
class ShiftSpec:
    """Integer shift delta(n) with |delta(n)| <= B, plus (h, theta) for the floor variant."""

    delta: Callable[[int], int]
    B: int
    h: int = 1
    theta: Fraction = Fraction(1)

    def __post_init__(self):
        if self.B < 1:
            raise ContractError(f"B must be positive, got {self.B}")
        if self.h < 1:
            raise ContractError(f"h must be positive, got {self.h}")
        self.theta = _as_fraction(self.theta)
        if not 0 < self.theta <= 2:
            raise ContractError(f"theta must lie in (0, 2], got {self.theta}")


def shift_sum(table: SignTable, x: int, spec: ShiftSpec) -> int:
    """Sum over B < n <= x-B of |f(n + delta(n)) - f(n)|."""
    B = spec.B
    if B >= x:
        raise ContractError(f"B={B} must be below x={x}")
    table.check_index(x + B, "x+B")
    s = table.signs
    total = 0
    for n in range(B + 1, x - B + 1):
        d = int(spec.delta(n))
        if abs(d) > B:
            raise ContractError(f"|delta({n})| = {abs(d)} exceeds B={B}")
        if s[n + d] != s[n]:
            total += 2
    return total


def shift_lemma_bound(x: float, B: int, L: float) -> float:
    return 4 * B * x / L**7


@dataclass(frozen=True)
class FloorShiftReport:
    """Both sides of the rounding-to-multiples-of-h comparison.

    ``lhs``: sum over n <= x/2 - h of |f(floor(n theta)) - f(h floor(n theta / h))|.
    ``middle``: (2/theta) times sum over m <= x - 2h of |f(m) - f(h floor(m/h))|.
    ``bound``: 8 h x / (theta L^7).
    Terms whose rounded argument is 0 are skipped, since f(0) is undefined.
    """

    lhs: int
    middle: Fraction
    bound: float

    @property
    def first_inequality(self) -> bool:
        return self.lhs <= self.middle

    @property
    def second_inequality(self) -> bool:
        return self.middle <= self.bound


def floor_shift_sums(table: SignTable, x: int, spec: ShiftSpec, L: float | None = None) -> FloorShiftReport:
    h, theta = spec.h, spec.theta
    table.check_index(x, "x")
    s = table.signs
    n = np.arange(1, math.floor(Fraction(x, 2) - h) + 1, dtype=np.int64)
    a = floor_mul(n, theta).astype(np.int64)
    b = h * (a // h)
    keep = b >= 1
    lhs = int(np.count_nonzero(s[a[keep]] != s[b[keep]])) * 2
    m = np.arange(1, x - 2 * h + 1, dtype=np.int64)
    r = h * (m // h)
    keep = r >= 1
    inner = int(np.count_nonzero(s[m[keep]] != s[r[keep]])) * 2
    L = default_L(x) if L is None else L
    return FloorShiftReport(lhs, 2 / theta * inner, 8 * h * x / (float(theta) * L**7))


@dataclass(frozen=True)
class RatioSigma:
    count: int
    threshold: float | None = None

    @property
    def below_threshold(self):
        return None if self.threshold is None else self.count < self.threshold


def ratio_floor_sigma(table: SignTable, I: Interval, p: int, q: int, params: ExperimentParams | None = None) -> RatioSigma:
    """Sigma(I, p/q) for sign-matched primes, compared with |I|/beta2^2 if params given."""
    table.check_index(max(p, q), "prime")
    if table.signs[p] != table.signs[q]:
        raise ContractError(f"f({p}) != f({q})")
    r = Fraction(p, q)
    if not Fraction(1, 2) < r < 2:
        raise ContractError(f"{p}/{q} outside (1/2, 2)")
    count = sigma(table, I, r)
    threshold = None if params is None else I.size / params.beta2**2
    return RatioSigma(count, threshold)


def integral_sigma(table: SignTable, I: Interval, u0, u1) -> Fraction:
    """Exact integral of Sigma(I, t) over u0 <= t <= u1.

    floor(tn) = m exactly on [m/n, (m+1)/n), so each n contributes the
    overlap of those cells with [u0, u1] for every m with f(m) = -f(n).
    Scaling by n*d (d the common denominator of u0, u1) makes each overlap
    an integer.
    """
    u0, u1 = _as_fraction(u0), _as_fraction(u1)
    if not 0 < u0 < u1:
        raise ContractError(f"need 0 < u0 < u1, got u0={u0}, u1={u1}")
    d = math.lcm(u0.denominator, u1.denominator)
    a0, a1 = int(u0 * d), int(u1 * d)
    table.check_index(I.hi, "interval end")
    n = np.arange(I.lo, I.hi + 1, dtype=np.int64)
    if a1 * I.hi >= INT64_SAFE:
        raise ContractError("u1 numerator too large for exact vector evaluation")
    lo_u, hi_u = a0 * n, a1 * n
    m0, m1 = lo_u // d, hi_u // d
    if m0[0] < 1:
        raise RangeError(f"floor({u0} * {I.lo}) < 1 where f is undefined")
    if m1[-1] + 1 > table.limit:
        raise RangeError(f"floor({u1} * {I.hi}) + 1 exceeds table limit {table.limit} at n={I.hi}")
    s = table.signs
    fn = s[n]
    neg_prefix = np.concatenate(([0], np.cumsum(s < 0)))  # #{k < i : f(k) = -1}
    pos_prefix = np.concatenate(([0], np.cumsum(s > 0)))
    # count of m in [lo, hi] (inclusive) with f(m) = -f(n)
    def opposite_count(lo, hi):
        neg = neg_prefix[hi + 1] - neg_prefix[lo]
        pos = pos_prefix[hi + 1] - pos_prefix[lo]
        return np.where(fn > 0, neg, pos)

    ind0 = (s[m0] != fn).astype(np.int64)
    ind1 = (s[m1] != fn).astype(np.int64)
    same = m0 == m1
    first = (d * (m0 + 1) - lo_u) * ind0
    last = (hi_u - d * m1) * ind1
    interior = np.where(same, 0, d * opposite_count(np.minimum(m0 + 1, m1), m1 - 1))
    weight = np.where(same, (hi_u - lo_u) * ind0, first + interior + last)
    total = Fraction(0)
    for w, k in zip(weight.tolist(), n.tolist()):
        if w:
            total += Fraction(w, k)
    return total / d


def short_interval_mean(table: SignTable, z: int, phi: int) -> Fraction:
    """(1/phi) * sum of f(n) over z - phi < n < z."""
    if not 3 <= phi <= z:
        raise RangeError(f"need 3 <= phi <= z, got phi={phi}, z={z}")
    table.check_index(z, "z")
    return Fraction(int(table.signs[z - phi + 1 : z].sum(dtype=np.int64)), phi)
