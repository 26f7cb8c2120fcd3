from fractions import Fraction

import pytest

from mfosc import PrimeSignAssignment, RatioProduct, sieve_signs

LIOUVILLE = PrimeSignAssignment.liouville()
ALL_PLUS = PrimeSignAssignment.explicit(default=1)
SEEDS = (11, 2024, 0xDEADBEEF)


def trial_factor(n):
    """Prime factors of n with multiplicity, by plain trial division."""
    out, p = [], 2
    while p * p <= n:
        while n % p == 0:
            out.append(p)
            n //= p
        p += 1 if p == 2 else 2
    if n > 1:
        out.append(n)
    return out


SMALL_PRIMES = [p for p in range(2, 200) if len(trial_factor(p)) == 1]


def random_R_element(rng, rule, k):
    """Random sign-matched product of k factors whose value lies in (1/2, 2)."""
    half = Fraction(1, 2)
    while True:
        pairs = []
        while len(pairs) < k:
            p, q = rng.choice(SMALL_PRIMES), rng.choice(SMALL_PRIMES)
            if rule.sign(p) == rule.sign(q) and half < Fraction(p, q) < 2:
                pairs.append((p, q))
        prod = RatioProduct.from_pairs(pairs, rule)
        if half < prod.value < 2:
            return prod


def oracle_sign(rule, n):
    sign = 1
    for p in trial_factor(n):
        sign *= rule.sign(p)
    return sign


@pytest.fixture(scope="session")
def liouville_small():
    return sieve_signs(LIOUVILLE, 100)


@pytest.fixture(scope="session")
def liouville_1e5():
    return sieve_signs(LIOUVILLE, 10**5)


@pytest.fixture(scope="session")
def liouville_1e6():
    return sieve_signs(LIOUVILLE, 10**6)


@pytest.fixture(scope="session")
def seeded_rules():
    return [PrimeSignAssignment.seeded_random(s) for s in SEEDS]


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
