import json
import math
import random
from collections import Counter
from fractions import Fraction
from itertools import combinations_with_replacement

import pytest
from hypothesis import given, settings, strategies as st

from mfosc import (
    ExperimentParams,
    Interval,
    PrimeSignAssignment,
    RatioFactor,
    RatioProduct,
    approximate_in_interval,
    build_alpha_chain,
    chain_prefix_sigma_profile,
    find_matched_products,
    in_Rx,
    prime_count_in_J,
    reorder_prefix,
    sieve_signs,
    sigma,
)
from mfosc.errors import ChainError, ContractError, GapError, NonTerminationError, SearchError
from mfosc.smooth import (
    AlphaChain,
    ChainKnobs,
    check_chain_values,
    greedy_trace,
    prefixes_in_range,
    verify_chain,
    default_s,
    verify_matched,
    window_bounds,
)

from conftest import LIOUVILLE, random_R_element, trial_factor

HALF = Fraction(1, 2)
def desk(x=20, beta1=10**9, beta2=10**6):
    return ExperimentParams.desk(x, beta1, beta2, interval=Interval(1, 1))


def product(pairs, rule=LIOUVILLE):
    return RatioProduct.from_pairs(pairs, rule)


# --- R(x) membership -------------------------------------------------------------------


def test_in_Rx_examples():
    params = desk(beta1=3, beta2=1.5)
    assert in_Rx(RatioProduct(), params)
    assert in_Rx(product([(3, 2)]), params, LIOUVILLE)
    with pytest.raises(ContractError):
        RatioFactor(5, 2, -1)


def test_in_Rx_rejections():
    params = desk(beta1=10, beta2=3)
    assert not in_Rx(product([(11, 7)]), params)  # prime above beta1
    assert not in_Rx(product([(3, 2), (5, 3), (7, 5)]), params)  # k = 3 not below beta2
    assert not in_Rx(RatioProduct((RatioFactor(9, 7, -1),)), params)  # 9 not prime
    rule = PrimeSignAssignment.explicit([(3, -1)])
    assert not in_Rx(RatioProduct((RatioFactor(3, 2, 1),)), params, rule)
    assert in_Rx(product([(7, 5), (7, 5)]), desk(beta1=10, beta2=5))  # 49/25 < 2
    assert not in_Rx(product([(7, 5), (7, 5), (7, 5)]), desk(beta1=10, beta2=5))  # 343/125 >= 2


def test_value_tracks_factors():
    p = product([(3, 2), (5, 7), (11, 13)])
    assert p.value == Fraction(3 * 5 * 11, 2 * 7 * 13)
    back = RatioProduct.from_json(json.loads(json.dumps(p.to_json())))
    assert back == p and back.value == p.value


def test_from_json_rebuilds_value():
    data = {"factors": [[3, 2], [2, 3]], "value": "999"}
    assert RatioProduct.from_json(data, LIOUVILLE).value == 1


# --- prime window and matched products ---------------------------------------------------------


def test_window_bounds_exact():
    assert window_bounds(14641, 2) == (121, 151)
    assert window_bounds(4, 1) == (4, 6)


def test_prime_count_examples():
    count, floor_ = prime_count_in_J(14641, 2)
    assert count == 6  # 127 131 137 139 149 151
    assert floor_ == pytest.approx(121 / (3 * math.log(14641)))
    assert prime_count_in_J(4, 1)[0] == 1


def test_prime_count_matches_trial_division():
    for y, s in [(1000, 1), (10**5, 2), (3 * 10**6, 3), (777, 2)]:
        lo_real = y ** (1 / s)
        hi_real = lo_real * (1 + 1 / (2 * s))
        expect = sum(1 for p in range(max(2, int(lo_real) - 1), int(hi_real) + 2)
                     if trial_factor(p) == [p] and p**s >= y and (2 * s * p) ** s <= (2 * s + 1) ** s * y)
        assert prime_count_in_J(y, s)[0] == expect


def test_matched_hand_example():
    spec = find_matched_products(LIOUVILLE, 121, 2, 30)
    assert (spec.m1, spec.m2, spec.gap) == (121, 143, 22)
    assert spec.pairs == ((11, 11), (11, 13))
    assert spec.class_sizes == {0: 3}
    assert verify_matched(spec, LIOUVILLE)


def test_matched_all_plus():
    rule = PrimeSignAssignment.explicit(default=1)
    spec = find_matched_products(rule, 121, 2, 30)
    assert (spec.m1, spec.m2, spec.D) == (121, 143, 2)


def test_matched_errors():
    with pytest.raises(GapError) as err:
        find_matched_products(LIOUVILLE, 121, 2, 10)
    assert err.value.gap == 22
    rule = PrimeSignAssignment.explicit([(11, 1), (13, -1)], default=1)
    with pytest.raises(SearchError, match="class sizes"):
        find_matched_products(rule, 11, 1, 10)


def enumerate_classes(rule, y, s):
    lo, hi = window_bounds(y, s)
    is_p = bytearray([1]) * (hi + 1)
    is_p[0:2] = b"\x00\x00"
    for i in range(2, math.isqrt(hi) + 1):
        if is_p[i]:
            is_p[i * i :: i] = bytes(len(range(i * i, hi + 1, i)))
    primes = [p for p in range(lo, hi + 1) if is_p[p]]
    classes = {}
    for combo in combinations_with_replacement(primes, s):
        D = sum(rule.sign(p) == 1 for p in combo)
        classes.setdefault(D, []).append(math.prod(combo))
    return classes


@pytest.mark.parametrize("rule, y, s", [
    (LIOUVILLE, 10**6, default_s(10**6)),
    (PrimeSignAssignment.seeded_random(4), 10**6, 2),
    (PrimeSignAssignment.seeded_random(9), 5 * 10**7, 3),
])
def test_matched_against_reenumeration(rule, y, s):
    spec = find_matched_products(rule, y, s, 10**6)
    classes = enumerate_classes(rule, y, s)
    assert spec.class_sizes == {D: len(v) for D, v in sorted(classes.items())}
    best_D = max(classes, key=lambda d: (len(classes[d]), -d))
    members = sorted(classes[best_D])
    gap = min(b - a for a, b in zip(members, members[1:]))
    assert spec.D == best_D and spec.gap == gap
    assert spec.m1 == min(a for a, b in zip(members, members[1:]) if b - a == gap)
    assert verify_matched(spec, rule)


# --- chain --------------------------------------------------------------------------------


def test_chain_value_checker_hand_example():
    # x = 1 gives halt threshold 1 - 1/4 = 3/4
    values = [HALF, Fraction(4, 5), Fraction(1)]
    assert check_chain_values(values, Fraction(3, 4), 10) == []
    assert check_chain_values(values, Fraction(3, 4), 2.4)  # ratio 2.5 above cap
    assert check_chain_values([HALF, Fraction(3, 5), Fraction(1)], Fraction(1, 2), 10)  # ratio 1.25


@pytest.mark.parametrize("rho", [10, 40])
def test_liouville_chain(rho):
    chain = build_alpha_chain(LIOUVILLE, desk(), rho)
    assert verify_chain(chain) == []
    assert chain.values[1] == Fraction(11, 13) if rho == 10 else True
    assert 2**chain.t <= 4 * 20**2
    assert chain.values[-2] > 1 - Fraction(1, 1600) > chain.values[-3]


def test_chain_json_round_trip():
    chain = build_alpha_chain(LIOUVILLE, desk(), 10)
    back = AlphaChain.from_json(json.loads(chain.dumps()), LIOUVILLE, chain.params)
    assert back.values == chain.values and back.rungs == chain.rungs


def test_chain_fixed_s_failure():
    with pytest.raises(ChainError, match="rung 1"):
        build_alpha_chain(LIOUVILLE, desk(), knobs=ChainKnobs.desk(10, s=3))


def test_chain_needs_rho():
    with pytest.raises(ContractError):
        build_alpha_chain(LIOUVILLE, desk(), knobs=ChainKnobs.desk(2))
    with pytest.raises(ContractError):
        build_alpha_chain(LIOUVILLE, desk())


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_seeded_chain_rungs_recheck(seed):
    rule = PrimeSignAssignment.seeded_random(seed)
    chain = build_alpha_chain(rule, desk(x=10**4), 40)
    assert verify_chain(chain) == []
    for rung in chain.rungs:
        assert all(rule.sign(f.p) == rule.sign(f.q) == f.sign for f in rung.factors)


# --- greedy approximation -----------------------------------------------------------------------


def test_greedy_hand_trace():
    values = [HALF, Fraction(4, 5), Fraction(1)]
    trace = greedy_trace(values, Fraction(3, 4), Fraction(3, 5), 10)
    assert trace.divisors == [1] and trace.trajectory == [Fraction(3, 5), Fraction(3, 4)]


def test_greedy_halts_on_entry():
    # a target already in the halt band needs no division; theta is the empty product
    chain = build_alpha_chain(LIOUVILLE, desk(), 10)
    trace = greedy_trace(chain.values, chain.params.halt_threshold, 1 - Fraction(1, 3000), 5)
    assert trace.iterations == 0


def test_greedy_cap():
    chain = build_alpha_chain(LIOUVILLE, desk(), 10)
    with pytest.raises(NonTerminationError) as err:
        approximate_in_interval(chain, Fraction(51, 100), Fraction(52, 100), cap=1)
    assert len(err.value.trajectory) == 2


def test_approx_preconditions():
    chain = build_alpha_chain(LIOUVILLE, desk(), 10)
    with pytest.raises(ContractError):
        approximate_in_interval(chain, Fraction(6, 10), Fraction(6, 10) + Fraction(1, 1000))
    with pytest.raises(ContractError):
        approximate_in_interval(chain, Fraction(4, 10), Fraction(6, 10))


@settings(max_examples=100, deadline=None)
@given(st.fractions(Fraction(1, 2), Fraction(1)), st.integers(1, 50))
def test_approx_property(center, widen):
    chain = _chain_cache()
    width = Fraction(widen, 800)
    y1, y2 = center - width / 2, center + width / 2
    if not HALF < y1 or not y2 < 1:
        return
    theta = approximate_in_interval(chain, y1, y2)
    assert y1 <= theta.value <= y2
    assert in_Rx(theta, chain.params, LIOUVILLE)
    trace = greedy_trace(chain.values, chain.params.halt_threshold, (y1 + y2) / 2, 10**4)
    assert all(a < b < 1 for a, b in zip(trace.trajectory, trace.trajectory[1:]))


_CHAIN = []


def _chain_cache():
    if not _CHAIN:
        _CHAIN.append(build_alpha_chain(LIOUVILLE, desk(), 10))
    return _CHAIN[0]


# --- prefix reordering ---------------------------------------------------------------------------


def test_reorder_hand_example():
    p = product([(2, 3), (2, 3), (3, 2), (3, 2)])
    assert not prefixes_in_range(p.factors)
    out = reorder_prefix(p)
    assert [f.value for f in out.factors] == [Fraction(2, 3), Fraction(3, 2), Fraction(2, 3), Fraction(3, 2)]
    assert out.prefix_values() == [Fraction(2, 3), 1, Fraction(2, 3), 1]


def test_reorder_single():
    p = product([(5, 7)])
    assert reorder_prefix(p) == p


def test_reorder_rejects_out_of_range():
    with pytest.raises(ContractError):
        reorder_prefix(product([(7, 5), (7, 5), (7, 5)]))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 20))
def test_reorder_property(seed, k):
    rng = random.Random(seed)
    p = random_R_element(rng, LIOUVILLE, k)
    out = reorder_prefix(p)
    assert prefixes_in_range(out.factors)
    assert Counter(out.factors) == Counter(p.factors)
    assert out.value == p.value


# --- prefix sigma profile ----------------------------------------------------------------------


def test_profile_examples(liouville_1e5):
    t = sieve_signs(LIOUVILLE, 100)
    assert chain_prefix_sigma_profile(t, Interval(4, 8), RatioProduct()) == []
    assert chain_prefix_sigma_profile(t, Interval(4, 8), product([(3, 2)])) == [sigma(t, Interval(4, 8), Fraction(3, 2))]
    rng = random.Random(5)
    p = reorder_prefix(random_R_element(rng, LIOUVILLE, 5))
    I = Interval(1000, 2000)
    s = liouville_1e5.signs
    expect = []
    acc = Fraction(1)
    for f in p.factors:
        acc *= f.value
        expect.append(sum(1 for n in I if s[n] == -s[(acc.numerator * n) // acc.denominator]))
    assert chain_prefix_sigma_profile(liouville_1e5, I, p) == expect
