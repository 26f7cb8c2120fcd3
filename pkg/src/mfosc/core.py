"""Completely multiplicative +-1 functions, sieved sign tables and their cache.

A function is fixed by a :class:`PrimeSignAssignment`; its values on ``1..N``
come from :func:`sieve_signs`, which keeps the smallest-prime-factor array so
any ``n <= N`` can be factored without re-sieving.

Seeded assignments use the SplitMix64 finaliser so that every platform and
language derives the same sign for a given ``(seed, p)``::

    z = (seed + p * 0x9E3779B97F4A7C15) mod 2**64
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 mod 2**64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB mod 2**64
    z = z ^ (z >> 31)
    sign(p) = -1 if the top bit of z is set, else +1
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path

import numpy as np
from sympy import isprime

from .errors import ConfigError, ContractError, FormatError, RangeError, ResourceError

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB

# bytes per sieved integer: int32 spf, int8 signs, bool scratch
BYTES_PER_INT = 6
DEFAULT_MEMORY_BUDGET = 1 << 30

MAGIC = b"MFSIGNT1"
FORMAT_VERSION = 1
HEADER = struct.Struct("<8sBQ32s")
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def splitmix64(seed: int, p: int) -> int:
    """The p-th output of a SplitMix64 generator started at ``seed``."""
    z = (seed + p * GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def splitmix_sign(seed: int, p: int) -> int:
    return -1 if splitmix64(seed, p) >> 63 else 1


def _splitmix_negative(seed: int, primes: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = np.uint64(seed) + primes.astype(np.uint64) * np.uint64(GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
        z ^= z >> np.uint64(31)
    return (z >> np.uint64(63)).astype(bool)


@dataclass(frozen=True)
class PrimeSignAssignment:
    """Rule assigning +1 or -1 to every prime.

    Build instances through :meth:`liouville`, :meth:`seeded_random` or
    :meth:`explicit` rather than the raw constructor.
    """

    kind: str
    seed: int = 0
    entries: tuple = ()
    default: int = 1

    def __post_init__(self):
        if self.kind not in ("liouville", "seeded_random", "explicit"):
            raise ConfigError(f"unknown rule kind {self.kind!r}")
        if self.kind == "seeded_random" and not 0 <= self.seed <= MASK64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.default not in (1, -1):
            raise ConfigError("default sign must be +1 or -1")
        seen = set()
        for p, sign in self.entries:
            if sign not in (1, -1):
                raise ConfigError(f"sign for {p} must be +1 or -1, got {sign}")
            if not isprime(p):
                raise ConfigError(f"explicit rule key {p} is not prime")
            if p in seen:
                raise ConfigError(f"duplicate explicit rule key {p}")
            seen.add(p)

    @classmethod
    def liouville(cls):
        return cls("liouville")

    @classmethod
    def seeded_random(cls, seed: int):
        return cls("seeded_random", seed=int(seed))

    @classmethod
    def explicit(cls, pairs=(), default: int = 1):
        pairs = tuple((int(p), int(s)) for p, s in pairs)
        return cls("explicit", entries=tuple(sorted(pairs)), default=int(default))

    @cached_property
    def _table(self):
        return dict(self.entries)

    def sign(self, p: int) -> int:
        """Sign assigned to the prime ``p`` (primality is not re-checked)."""
        if self.kind == "liouville":
            return -1
        if self.kind == "seeded_random":
            return splitmix_sign(self.seed, p)
        return self._table.get(p, self.default)

    def negative_mask(self, primes: np.ndarray) -> np.ndarray:
        if self.kind == "liouville":
            return np.ones(len(primes), dtype=bool)
        if self.kind == "seeded_random":
            return _splitmix_negative(self.seed, primes)
        mask = np.full(len(primes), self.default == -1, dtype=bool)
        if self.entries:
            keys = np.array([p for p, _ in self.entries], dtype=np.int64)
            neg = np.array([s == -1 for _, s in self.entries], dtype=bool)
            pos = np.searchsorted(keys, primes)
            hit = pos < len(keys)
            hit[hit] = keys[pos[hit]] == primes[hit]
            mask[hit] = neg[pos[hit]]
        return mask

    @property
    def descriptor(self) -> str:
        if self.kind == "liouville":
            return "liouville"
        if self.kind == "seeded_random":
            return f"seeded_random:seed={self.seed}"
        body = ",".join(f"{p}:{s:+d}" for p, s in self.entries)
        return f"explicit:default={self.default:+d};{body}"

    @property
    def digest(self) -> bytes:
        return hashlib.sha256(self.descriptor.encode()).digest()

    def sign_by_factoring(self, n: int) -> int:
        """f(n) by trial division; slow, used for cache spot checks."""
        if n < 1:
            raise RangeError(f"f is undefined at {n}")
        sign = 1
        p = 2
        while p * p <= n:
            while n % p == 0:
                sign *= self.sign(p)
                n //= p
            p += 1
        if n > 1:
            sign *= self.sign(n)
        return sign


@dataclass(frozen=True)
class Interval:
    """Closed integer interval ``[lo, hi]``."""

    lo: int
    hi: int

    def __post_init__(self):
        if self.lo < 1 or self.hi < 1:
            raise ContractError(f"interval endpoints must be positive: [{self.lo}, {self.hi}]")
        if self.lo > self.hi:
            raise ContractError(f"empty interval [{self.lo}, {self.hi}]")

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1

    def __iter__(self):
        return iter(range(self.lo, self.hi + 1))

    def __str__(self):
        return f"[{self.lo}, {self.hi}]"


def default_L(x: float) -> float:
    """exp(log log x * sqrt(log x))."""
    lx = math.log(x)
    return math.exp(math.log(lx) * math.sqrt(lx))


def default_beta1(x: float) -> float:
    return math.exp(10 * math.sqrt(math.log(x)))


def interval_for(x: float, beta1: float):
    """Integer points of ``[x/(2 beta1), x/beta1]``, or None when there are none."""
    lo = max(1, math.ceil(x / (2 * beta1)))
    hi = math.floor(x / beta1)
    if hi < lo:
        return None
    return Interval(lo, hi)


@dataclass(frozen=True)
class ExperimentParams:
    x: float
    beta1: float
    beta2: float
    L: float
    interval: Interval | None
    iteration_cap: int = 10_000
    mode: str = "desk"

    def __post_init__(self):
        if self.mode not in ("paper", "desk"):
            raise ConfigError(f"mode must be 'paper' or 'desk', got {self.mode!r}")
        if min(self.x, self.beta1, self.beta2, self.L) <= 0:
            raise ConfigError("x, beta1, beta2 and L must be positive")
        if self.iteration_cap < 1:
            raise ConfigError("iteration_cap must be positive")
        if self.mode == "desk":
            if self.beta2 <= 1:
                raise ConfigError("desk mode needs beta2 > 1")
            if self.interval is None:
                raise ConfigError("desk mode needs a nonempty interval")

    @classmethod
    def paper(cls, x: float, iteration_cap: int = 10_000):
        L = default_L(x)
        beta1 = default_beta1(x)
        return cls(x, beta1, L**3, L, interval_for(x, beta1), iteration_cap, "paper")

    @classmethod
    def desk(cls, x, beta1, beta2, interval=None, L=None, iteration_cap=10_000):
        if interval is None:
            interval = interval_for(x, beta1)
        if L is None:
            L = default_L(x)
        return cls(x, beta1, beta2, L, interval, iteration_cap, "desk")

    @property
    def halt_threshold(self) -> Fraction:
        """1 - 1/(4x^2) as an exact rational."""
        x = Fraction(self.x) if isinstance(self.x, int) else Fraction(self.x).limit_denominator(10**9)
        return 1 - 1 / (4 * x * x)


def spf_sieve(N: int) -> np.ndarray:
    """Smallest prime factor for 0..N (entries 0 and 1 are 0)."""
    spf = np.zeros(N + 1, dtype=np.int32)
    for p in range(2, math.isqrt(N) + 1):
        if spf[p] == 0:
            block = spf[p * p :: p]
            block[block == 0] = p
    idx = np.flatnonzero(spf == 0)
    idx = idx[idx >= 2]
    spf[idx] = idx
    return spf


def primes_in_range(lo: int, hi: int, budget: int = 10**8) -> np.ndarray:
    """All primes in ``[lo, hi]`` by a segmented sieve."""
    lo = max(lo, 2)
    if hi < lo:
        return np.zeros(0, dtype=np.int64)
    if hi - lo + 1 > budget or math.isqrt(hi) + 1 > budget:
        raise ResourceError(f"prime window [{lo}, {hi}] exceeds sieve budget {budget}")
    root = math.isqrt(hi)
    small = np.ones(root + 1, dtype=bool)
    small[:2] = False
    for p in range(2, math.isqrt(root) + 1):
        if small[p]:
            small[p * p :: p] = False
    seg = np.ones(hi - lo + 1, dtype=bool)
    for p in np.flatnonzero(small):
        p = int(p)
        start = max(p * p, -(-lo // p) * p)
        seg[start - lo :: p] = False
    return np.flatnonzero(seg).astype(np.int64) + lo


@dataclass(frozen=True, eq=False)
class SignTable:
    """Values f(1..limit), stored one bit per integer (1 means -1).

    ``bits`` is packed little-endian within bytes: n lives at bit (n-1) % 8 of
    byte (n-1) // 8.
    """

    rule: PrimeSignAssignment
    limit: int
    bits: np.ndarray
    _spf: np.ndarray | None = field(default=None, repr=False)

    @cached_property
    def signs(self) -> np.ndarray:
        """int8 array indexed by n; entry 0 is 0 because f(0) is undefined."""
        neg = np.unpackbits(self.bits, count=self.limit, bitorder="little")
        out = np.empty(self.limit + 1, dtype=np.int8)
        out[0] = 0
        out[1:] = 1 - 2 * neg.astype(np.int8)
        return out

    @cached_property
    def spf(self) -> np.ndarray:
        return self._spf if self._spf is not None else spf_sieve(self.limit)

    def __eq__(self, other):
        if not isinstance(other, SignTable):
            return NotImplemented
        return (
            self.rule == other.rule
            and self.limit == other.limit
            and np.array_equal(self.bits, other.bits)
        )

    def check_index(self, n: int, what: str = "n"):
        if not 1 <= n <= self.limit:
            raise RangeError(f"{what}={n} outside sieved range [1, {self.limit}]")


def sieve_signs(rule: PrimeSignAssignment, N: int, memory_budget: int = DEFAULT_MEMORY_BUDGET) -> SignTable:
    if N < 1:
        raise ContractError(f"N must be positive, got {N}")
    need = BYTES_PER_INT * (N + 1)
    if need > memory_budget:
        raise ResourceError(
            f"sieving N={N} needs ~{need} bytes, over the memory budget of {memory_budget} bytes"
        )
    spf = spf_sieve(N)
    neg = np.zeros(N + 1, dtype=bool)
    primes = np.flatnonzero(spf == np.arange(N + 1))
    neg[primes] = rule.negative_mask(primes)
    # n // spf[n] <= n / 2, so each dyadic block only reads earlier blocks
    lo = 4
    while lo <= N:
        hi = min(2 * lo, N + 1)
        n = np.arange(lo, hi)
        p = spf[lo:hi]
        composite = p != n
        nc, pc = n[composite], p[composite]
        neg[nc] = neg[pc] ^ neg[nc // pc]
        lo = hi
    bits = np.packbits(neg[1:], bitorder="little")
    return SignTable(rule, N, bits, spf)


def f_at(table: SignTable, n: int) -> int:
    table.check_index(n)
    return int(table.signs[n])


def mean_value(table: SignTable, x: int) -> Fraction:
    """(1/x) * sum of f(n) for n <= x, exactly."""
    table.check_index(x, "x")
    return Fraction(int(table.signs[1 : x + 1].sum(dtype=np.int64)), x)


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & MASK64
    return h


def save_table(table: SignTable, path) -> None:
    payload = table.bits.tobytes()
    header = HEADER.pack(MAGIC, FORMAT_VERSION, table.limit, table.rule.digest)
    Path(path).write_bytes(header + payload + struct.pack("<Q", fnv1a64(payload)))


def load_table(path, rule: PrimeSignAssignment) -> SignTable:
    """Read a table written by :func:`save_table`.

    The file stores only a digest of the rule, so the caller supplies the rule
    and the digest is checked against it.
    """
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise FormatError(f"truncated header: {len(data)} of {HEADER.size} bytes", len(data))
    magic, version, N, digest = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}", 8)
    if N < 1:
        raise FormatError("table limit must be positive", 9)
    if digest != rule.digest:
        raise FormatError(f"rule digest does not match {rule.descriptor!r}", 17)
    nbytes = (N + 7) // 8
    end = HEADER.size + nbytes
    if len(data) < end + 8:
        raise FormatError(f"truncated payload: file has {len(data)} bytes, need {end + 8}", len(data))
    if len(data) > end + 8:
        raise FormatError("trailing bytes after checksum", end + 8)
    payload = data[HEADER.size : end]
    (stored,) = struct.unpack_from("<Q", data, end)
    if fnv1a64(payload) != stored:
        raise FormatError("payload checksum mismatch", end)
    bits = np.frombuffer(payload, dtype=np.uint8).copy()
    if N % 8 and bits[-1] >> (N % 8):
        raise FormatError("nonzero padding bits in final payload byte", end - 1)
    return SignTable(rule, N, bits)
