"""Sign-matched prime-ratio products and the greedy chain approximation.

A :class:`RatioProduct` is p_1...p_k / q_1...q_k with every p_i/q_i in
(1/2, 2) and f(p_i) = f(q_i). The alpha chain climbs from 1/2 to 1 through
such products with (1 - a_{i-1}) / (1 - a_i) kept in (2, rho_max); the greedy
loop then divides a target by chain rungs until it lands in the halt band
[1 - 1/(4x^2), 1), and the product of the divisors approximates the target.
"""

from __future__ import annotations

import bisect
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations_with_replacement

from sympy import isprime

from .core import ExperimentParams, Interval, PrimeSignAssignment, primes_in_range
from .errors import (
    BudgetError,
    ChainError,
    ContractError,
    GapError,
    InternalError,
    NonTerminationError,
    ResourceError,
    SearchError,
)
from .oscillation import sigma

log = logging.getLogger(__name__)

HALF = Fraction(1, 2)
ENUMERATION_CAP = 2_000_000


def to_rational(value) -> Fraction:
    """Exact rational for config reals; floats get denominator <= 10**9."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(value).limit_denominator(10**9)
    return Fraction(value)


@dataclass(frozen=True, order=True)
class RatioFactor:
    p: int
    q: int
    sign: int

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ContractError(f"factor sign must be +1 or -1, got {self.sign}")
        if not HALF < Fraction(self.p, self.q) < 2:
            raise ContractError(f"{self.p}/{self.q} outside (1/2, 2)")

    @property
    def value(self) -> Fraction:
        return Fraction(self.p, self.q)


@dataclass(frozen=True)
class RatioProduct:
    """Factored rational; the reduced ``value`` is derived, never stored independently."""

    factors: tuple = ()

    @property
    def value(self) -> Fraction:
        num = den = 1
        for f in self.factors:
            num *= f.p
            den *= f.q
        return Fraction(num, den)

    @property
    def k(self) -> int:
        return len(self.factors)

    def __mul__(self, other):
        return RatioProduct(self.factors + other.factors)

    def prefix_values(self):
        out, acc = [], Fraction(1)
        for f in self.factors:
            acc *= f.value
            out.append(acc)
        return out

    def to_json(self) -> dict:
        return {
            "factors": [[f.p, f.q] for f in self.factors],
            "signs": [f.sign for f in self.factors],
        }

    @classmethod
    def from_json(cls, data, rule: PrimeSignAssignment | None = None):
        pairs = data["factors"]
        signs = data.get("signs")
        if signs is None:
            if rule is None:
                raise ContractError("product JSON without signs needs a rule")
            signs = [rule.sign(p) for p, _ in pairs]
        if len(signs) != len(pairs):
            raise ContractError("signs and factors lengths differ")
        return cls(tuple(RatioFactor(int(p), int(q), int(s)) for (p, q), s in zip(pairs, signs)))

    @classmethod
    def from_pairs(cls, pairs, rule: PrimeSignAssignment):
        return cls(tuple(RatioFactor(p, q, rule.sign(p)) for p, q in pairs))


ONE = RatioProduct()


def in_Rx(candidate: RatioProduct, params: ExperimentParams, rule: PrimeSignAssignment | None = None) -> bool:
    """Membership in the admissible ratio set R(x).

    Without ``rule`` only the factors' recorded signs are trusted.
    """
    if not HALF < candidate.value < 2:
        return False
    if not candidate.k < params.beta2:
        return False
    for f in candidate.factors:
        if f.p > params.beta1 or f.q > params.beta1:
            return False
        if not (isprime(f.p) and isprime(f.q)):
            return False
        if not HALF < f.value < 2:
            return False
        if rule is not None and not rule.sign(f.p) == rule.sign(f.q) == f.sign:
            return False
    return True


# --- window J and matched products --------------------------------------------------


def _nth_root_ceil(y: Fraction, s: int) -> int:
    """Smallest integer r >= 1 with r**s >= y."""
    r = max(1, int(float(y) ** (1 / s)) - 1)
    while r**s < y:
        r += 1
    while r > 1 and (r - 1) ** s >= y:
        r -= 1
    return r


def window_bounds(y, s: int):
    """Integer range covering J = [y^(1/s), y^(1/s)(1 + 1/(2s))].

    An integer p lies in J iff p^s >= y and (2s p)^s <= (2s+1)^s y.
    """
    y = to_rational(y)
    lo = _nth_root_ceil(y, s)
    top = y * Fraction(2 * s + 1, 2 * s) ** s
    hi = _nth_root_ceil(top, s)
    if hi**s > top:
        hi -= 1
    return lo, hi


def window_primes(y, s: int, budget: int = 10**8) -> list:
    lo, hi = window_bounds(y, s)
    return [int(p) for p in primes_in_range(lo, hi, budget)]


def default_s(y) -> int:
    """floor(sqrt(log y) / 4), clamped to at least 1."""
    return max(1, math.floor(math.sqrt(math.log(float(y))) / 4))


def prime_count_in_J(y, s: int, budget: int = 10**8):
    """(number of primes in J, reference floor y^(1/s) / (3 log y))."""
    if float(y) < 2 or s < 1:
        raise ContractError(f"need y >= 2 and s >= 1, got y={y}, s={s}")
    count = len(window_primes(y, s, budget))
    floor_ = float(y) ** (1 / s) / (3 * math.log(float(y)))
    return count, floor_


@dataclass(frozen=True)
class MatchedProductSpec:
    y: Fraction
    s: int
    J: tuple
    D: int
    m1: int
    m2: int
    pairs: tuple
    class_sizes: dict = field(compare=False)
    S_size: int = 0

    @property
    def gap(self) -> int:
        return self.m2 - self.m1

    def ratio(self, rule: PrimeSignAssignment) -> RatioProduct:
        return RatioProduct.from_pairs(self.pairs, rule)


def find_matched_products(rule: PrimeSignAssignment, y, s: int, gap_cap, enumeration_cap: int = ENUMERATION_CAP) -> MatchedProductSpec:
    """Closest pair of s-fold J-prime products sharing a +1-factor count D.

    S(y) is enumerated as nondecreasing prime tuples, split by D, and the
    largest class (ties: smallest D) is scanned for the adjacent pair with the
    smallest gap (ties: smallest m1).
    """
    if s < 1:
        raise ContractError(f"s must be at least 1, got {s}")
    y = to_rational(y)
    primes = window_primes(y, s)
    size = math.comb(len(primes) + s - 1, s) if primes else 0
    if size > enumeration_cap:
        raise ResourceError(f"|S(y)| = {size} exceeds enumeration cap {enumeration_cap}")
    sign = {p: rule.sign(p) for p in primes}
    classes = defaultdict(list)
    for combo in combinations_with_replacement(primes, s):
        D = sum(1 for p in combo if sign[p] == 1)
        classes[D].append((math.prod(combo), combo))
    sizes = {D: len(v) for D, v in sorted(classes.items())}
    if not any(n >= 2 for n in sizes.values()):
        raise SearchError(f"no sign class with two elements: |S(y)|={size}, class sizes {sizes}, y={float(y):.6g}, s={s}")
    D = max(sizes, key=lambda d: (sizes[d], -d))
    members = sorted(classes[D])
    best = min(zip(members, members[1:]), key=lambda ab: (ab[1][0] - ab[0][0], ab[0][0]))
    (m1, c1), (m2, c2) = best
    if m2 - m1 > gap_cap:
        raise GapError(f"minimal gap {m2 - m1} exceeds gap cap {gap_cap} (y={float(y):.6g}, s={s})", m2 - m1)
    plus1 = [p for p in c1 if sign[p] == 1]
    plus2 = [p for p in c2 if sign[p] == 1]
    minus1 = [p for p in c1 if sign[p] == -1]
    minus2 = [p for p in c2 if sign[p] == -1]
    pairs = tuple(zip(plus1, plus2)) + tuple(zip(minus1, minus2))
    J = (float(y) ** (1 / s), float(y) ** (1 / s) * (1 + 1 / (2 * s)))
    return MatchedProductSpec(y, s, J, D, m1, m2, pairs, sizes, size)


def verify_matched(spec: MatchedProductSpec, rule: PrimeSignAssignment) -> bool:
    """Independent re-check of a matched pair's structural claims."""
    if not spec.m1 < spec.m2 or len(spec.pairs) != spec.s:
        return False
    if not (spec.y <= spec.m1 and spec.m2 <= 2 * spec.y):
        return False
    lo, hi = window_bounds(spec.y, spec.s)
    ps = [p for p, _ in spec.pairs]
    qs = [q for _, q in spec.pairs]
    if math.prod(ps) != spec.m1 or math.prod(qs) != spec.m2:
        return False
    for p, q in spec.pairs:
        if not (isprime(p) and isprime(q) and lo <= p <= hi and lo <= q <= hi):
            return False
        if rule.sign(p) != rule.sign(q):
            return False
    return sum(1 for p in ps if rule.sign(p) == 1) == spec.D


# --- alpha chain -------------------------------------------------------------------


@dataclass(frozen=True)
class ChainKnobs:
    """Scale constants for the chain; paper mode derives them from beta2 and x."""

    rho_max: float
    c: float
    gap_cap: float
    s: int | None = None
    s_max: int = 8

    @classmethod
    def paper(cls, params: ExperimentParams):
        l2 = math.log(params.x) ** 2
        b = params.beta2
        return cls(rho_max=b / (8 * l2), c=b / (16 * l2), gap_cap=b / (32 * l2))

    @classmethod
    def desk(cls, rho_max, c=None, gap_cap=None, s=None, s_max=8):
        # same proportions as paper mode: rho_max = 2c, gap_cap = c/2
        c = rho_max / 2 if c is None else c
        gap_cap = c / 2 if gap_cap is None else gap_cap
        return cls(rho_max, c, gap_cap, s, s_max)


@dataclass(frozen=True)
class AlphaChain:
    """Rungs a_1 < ... < a_t; the endpoints 1/2 and 1 are implicit."""

    rungs: tuple
    rule: PrimeSignAssignment
    params: ExperimentParams
    rho_max: float

    @property
    def t(self) -> int:
        return len(self.rungs)

    @property
    def values(self) -> list:
        return [HALF] + [r.value for r in self.rungs] + [Fraction(1)]

    def to_json(self) -> dict:
        p = self.params
        return {
            "rule": self.rule.descriptor,
            "params": {"x": p.x, "beta1": p.beta1, "beta2": p.beta2, "mode": p.mode},
            "rho_max": self.rho_max,
            "rungs": [r.to_json() for r in self.rungs],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def from_json(cls, data, rule: PrimeSignAssignment, params: ExperimentParams):
        if data.get("rule", rule.descriptor) != rule.descriptor:
            raise ContractError(f"chain was built for {data['rule']!r}, not {rule.descriptor!r}")
        rungs = tuple(RatioProduct.from_json(r, rule) for r in data["rungs"])
        return cls(rungs, rule, params, data["rho_max"])


def check_chain_values(values, threshold: Fraction, rho_max) -> list:
    """List of invariant violations for a ladder 1/2 = a_0 < ... < a_{t+1} = 1."""
    problems = []
    if values[0] != HALF or values[-1] != 1:
        problems.append("endpoints must be 1/2 and 1")
    for a, b in zip(values, values[1:]):
        if not a < b:
            problems.append(f"not increasing at {a} -> {b}")
    t = len(values) - 2
    for i in range(1, t + 1):
        ratio = (1 - values[i - 1]) / (1 - values[i])
        if not 2 < ratio < rho_max:
            problems.append(f"rung {i}: ratio {float(ratio):.6g} outside (2, {rho_max})")
    if t >= 1 and not values[t] > threshold:
        problems.append(f"last rung {values[t]} not above halt threshold {threshold}")
    if t >= 1 and not values[t - 1] < threshold:
        problems.append(f"rung {t - 1} already above halt threshold")
    bound = 1 / (1 - threshold)  # 4x^2
    if 2**t > bound:
        problems.append(f"t={t} violates 2^t <= 4x^2")
    return problems


def verify_chain(chain: AlphaChain, s_cap: int | None = None) -> list:
    problems = check_chain_values(chain.values, chain.params.halt_threshold, chain.rho_max)
    for i, rung in enumerate(chain.rungs, 1):
        if rung.value != Fraction(math.prod(f.p for f in rung.factors), math.prod(f.q for f in rung.factors)):
            problems.append(f"rung {i}: value disagrees with factors")
        if not in_Rx(rung, chain.params, chain.rule):
            problems.append(f"rung {i}: not in R(x)")
        if chain.params.mode == "paper" and not rung.k < math.log(chain.params.x):
            problems.append(f"rung {i}: {rung.k} factors, not below log x")
        if s_cap is not None and rung.k > s_cap:
            problems.append(f"rung {i}: {rung.k} factors above cap {s_cap}")
    return problems


def build_alpha_chain(rule: PrimeSignAssignment, params: ExperimentParams, rho_max=None, knobs: ChainKnobs | None = None) -> AlphaChain:
    """Climb from 1/2 towards 1 until a rung passes the halt threshold.

    At rung u, y = c / (1 - a_u) and a_{u+1} = m1/m2 from
    :func:`find_matched_products`. With s unset in desk mode, s = 1, 2, ...
    up to ``s_max`` is tried and the first admissible rung is kept.
    """
    if knobs is None:
        if params.mode == "paper":
            knobs = ChainKnobs.paper(params)
        elif rho_max is None:
            raise ContractError("desk mode chain needs rho_max")
        else:
            knobs = ChainKnobs.desk(rho_max)
    if not knobs.rho_max > 2:
        raise ContractError(f"rho_max must exceed 2, got {knobs.rho_max}")
    threshold = params.halt_threshold
    c = to_rational(knobs.c)
    max_t = math.floor(math.log2(float(1 / (1 - threshold))))
    rungs = []
    alpha = HALF
    while True:
        if len(rungs) > max_t:
            raise ChainError(f"chain exceeded {max_t} rungs without reaching {threshold}")
        y = c / (1 - alpha)
        if knobs.s is not None:
            choices = [knobs.s]
        elif params.mode == "paper":
            choices = [default_s(y)]
        else:
            choices = range(1, knobs.s_max + 1)
        rung, failures = None, []
        for s in choices:
            if s > 1 and float(y) ** (1 / s) < 2:
                break
            try:
                spec = find_matched_products(rule, y, s, knobs.gap_cap)
            except (SearchError, ResourceError) as exc:
                failures.append(f"s={s}: {exc}")
                continue
            cand = spec.ratio(rule)
            ratio = (1 - alpha) / (1 - cand.value)
            if not 2 < ratio < knobs.rho_max:
                failures.append(f"s={s}: ratio {float(ratio):.6g} outside (2, {knobs.rho_max})")
                continue
            rung = cand
            break
        if rung is None:
            raise ChainError(
                f"rung {len(rungs) + 1} (y={float(y):.6g}): " + "; ".join(failures or ["no usable s"])
            )
        rungs.append(rung)
        alpha = rung.value
        log.debug("rung %d: %s (1-a = %.3g)", len(rungs), alpha, float(1 - alpha))
        if alpha > threshold:
            break
    chain = AlphaChain(tuple(rungs), rule, params, knobs.rho_max)
    problems = check_chain_values(chain.values, threshold, knobs.rho_max)
    if problems:
        raise ChainError("; ".join(problems))
    return chain


# --- greedy approximation ---------------------------------------------------------


@dataclass(frozen=True)
class GreedyTrace:
    divisors: list  # chain indices i+1 used at each step
    trajectory: list  # n_0, n_1, ..., n_j

    @property
    def iterations(self) -> int:
        return len(self.divisors)


def greedy_trace(values, threshold: Fraction, y0: Fraction, cap: int) -> GreedyTrace:
    """Divide y0 by a_{i+1} (where a_i <= n_j < a_{i+1}) until n_j is in [threshold, 1)."""
    n = Fraction(y0)
    if not HALF <= n < 1:
        raise ContractError(f"target {n} outside [1/2, 1)")
    divisors, traj = [], [n]
    while not threshold <= n < 1:
        if len(divisors) >= cap:
            raise NonTerminationError(f"greedy loop hit cap {cap}; last n_j = {n}", traj)
        i = bisect.bisect_right(values, n) - 1
        nxt = n / values[i + 1]
        if not n < nxt < 1:
            raise InternalError(f"greedy step left (n_j, 1): {n} -> {nxt}")
        divisors.append(i + 1)
        traj.append(nxt)
        n = nxt
    return GreedyTrace(divisors, traj)


def approximate_in_interval(chain: AlphaChain, y1, y2, cap: int | None = None) -> RatioProduct:
    """Element of R(x) inside [y1, y2], built greedily from chain rungs."""
    y1, y2 = to_rational(y1), to_rational(y2)
    cap = chain.params.iteration_cap if cap is None else cap
    x = to_rational(chain.params.x)
    if not HALF < y1 < y2 < 1:
        raise ContractError(f"need 1/2 < y1 < y2 < 1, got [{y1}, {y2}]")
    if y2 - y1 < 1 / (2 * x * x):
        raise ContractError(f"interval width {y2 - y1} below 1/(2x^2)")
    if cap < 1:
        raise ContractError("cap must be positive")
    trace = greedy_trace(chain.values, chain.params.halt_threshold, (y1 + y2) / 2, cap)
    theta = RatioProduct()
    for i in trace.divisors:
        theta = theta * chain.rungs[i - 1]
    if not in_Rx(theta, chain.params, chain.rule):
        raise BudgetError(f"theta has k={theta.k} factors (beta2={chain.params.beta2}) or fails R(x) membership")
    log.debug("theta=%s after %d steps, k=%d", theta.value, trace.iterations, theta.k)
    return theta


# --- prefix reordering ---------------------------------------------------------------


def prefixes_in_range(factors) -> bool:
    acc = Fraction(1)
    for f in factors:
        acc *= f.value
        if not HALF < acc < 2:
            return False
    return True


def _backtrack(factors):
    used = [False] * len(factors)
    order = []

    def go(acc):
        if len(order) == len(factors):
            return True
        tried = set()
        for i, f in enumerate(factors):
            if used[i] or f in tried:
                continue
            tried.add(f)
            nxt = acc * f.value
            if HALF < nxt < 2:
                used[i] = True
                order.append(f)
                if go(nxt):
                    return True
                used[i] = False
                order.pop()
        return False

    return order if go(Fraction(1)) else None


def reorder_prefix(product: RatioProduct) -> RatioProduct:
    """Permutation of the factors whose every prefix product lies in (1/2, 2).

    Greedy: below 1 take the next unused factor >= 1, at or above 1 the next
    factor <= 1, in input order; when one side is exhausted the remainder is
    monotone and stays between the current prefix and the total.
    """
    if not HALF < product.value < 2:
        raise ContractError(f"product value {product.value} outside (1/2, 2)")
    remaining = list(product.factors)
    out = []
    acc = Fraction(1)
    while remaining:
        want_up = acc < 1
        pick = next((f for f in remaining if (f.p >= f.q if want_up else f.p <= f.q)), remaining[0])
        remaining.remove(pick)
        out.append(pick)
        acc *= pick.value
    if prefixes_in_range(out):
        return RatioProduct(tuple(out))
    log.warning("greedy reorder stalled; falling back to backtracking")
    order = _backtrack(list(product.factors))
    if order is None:
        raise InternalError(f"no prefix-safe ordering exists for {product}")
    return RatioProduct(tuple(order))


def chain_prefix_sigma_profile(table, I: Interval, product: RatioProduct) -> list:
    """[Sigma(I, a_1...a_l) for l = 1..k]."""
    return [sigma(table, I, v) for v in product.prefix_values()]
