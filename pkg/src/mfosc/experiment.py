"""Experiment orchestration: configuration, parameter resolution, table cache, records."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import random
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .core import (
    ExperimentParams,
    Interval,
    PrimeSignAssignment,
    SignTable,
    interval_for,
    load_table,
    default_L,
    mean_value,
    save_table,
    sieve_signs,
)
from .errors import ConfigError, ContractError, FormatError, MFError, RangeError, ResourceError, SearchError
from .oscillation import (
    ShiftSpec,
    count_sign_changes,
    floor_shift_sums,
    integral_sigma,
    locate_sign_change,
    pigeonhole_agreement_witness,
    ratio_floor_sigma,
    shift_lemma_bound,
    shift_sum,
    short_interval_mean,
    sigma,
    sigma_thresholds,
)
from .smooth import (
    AlphaChain,
    ChainKnobs,
    RatioFactor,
    RatioProduct,
    approximate_in_interval,
    build_alpha_chain,
    chain_prefix_sigma_profile,
    find_matched_products,
    prime_count_in_J,
    reorder_prefix,
    verify_chain,
)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILURE, EXIT_CONTRACT, EXIT_CONFIG, EXIT_RESOURCE = 0, 1, 2, 3, 4
SUBCOMMANDS = (
    "sieve", "oscillate", "sigma", "integral", "shift", "shortmean", "witness",
    "chain", "approx", "reorder", "matched", "profile",
    "mean", "pigeonhole", "ratio", "primes", "avoid",
)
CSV_HEADER = ("op", "param_digest", "value_num", "value_den", "runtime_ms")
SPOT_CHECKS = 100


# --- value parsing -------------------------------------------------------------


def parse_rational(text) -> Fraction:
    """'p/q' or a decimal literal, converted exactly."""
    if isinstance(text, (Fraction, int)):
        return Fraction(text)
    try:
        return Fraction(str(text).strip())
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"not an exact rational: {text!r}") from exc


def parse_number(text):
    """int when the literal is integral (including '1e6'), float otherwise."""
    if isinstance(text, (int, float)):
        return text
    s = str(text).strip()
    try:
        return int(s)
    except ValueError:
        pass
    try:
        v = float(s)
    except ValueError as exc:
        raise ConfigError(f"not a number: {text!r}") from exc
    if v.is_integer() and abs(v) < 2**53:
        return int(v)
    return v


def parse_int(text) -> int:
    v = parse_number(text)
    if not isinstance(v, int):
        raise ConfigError(f"expected an integer, got {text!r}")
    return v


def parse_interval(text) -> Interval:
    if isinstance(text, Interval):
        return text
    try:
        lo, hi = str(text).split(":")
        return Interval(parse_int(lo), parse_int(hi))
    except ContractError as exc:
        raise ConfigError(str(exc)) from exc
    except ValueError as exc:
        raise ConfigError(f"interval must look like lo:hi, got {text!r}") from exc


def parse_product(text) -> RatioProduct:
    """Comma-separated 'p/q' factors, or a path to product JSON."""
    s = str(text).strip()
    if s.endswith(".json"):
        return RatioProduct.from_json(json.loads(Path(s).read_text()))
    if not s:
        return RatioProduct()
    factors = []
    for part in s.split(","):
        p, q = part.split("/")
        factors.append((int(p), int(q)))
    return RatioProduct(tuple(RatioFactor(p, q, 1) for p, q in factors))


def parse_delta(text):
    """Shift function: an integer constant, or 'mod:K:OFFSET' for (n mod K) + OFFSET."""
    s = str(text).strip()
    if s.startswith("mod:"):
        _, k, off = s.split(":")
        k, off = int(k), int(off)
        return lambda n: n % k + off
    c = int(s)
    return lambda n: c


# --- configuration -------------------------------------------------------------

# name -> parser; the same names serve as CLI flags and config file keys
OPTIONS = {
    "rule": str,
    "seed": parse_int,
    "explicit": str,
    "default_sign": parse_int,
    "mode": str,
    "x": parse_number,
    "beta1": float,
    "beta2": float,
    "L": float,
    "interval": parse_interval,
    "alpha": parse_rational,
    "u0": parse_rational,
    "u1": parse_rational,
    "rho_max": float,
    "gap_cap": float,
    "chain_y_coefficient": float,
    "chain_s": parse_int,
    "s_max": parse_int,
    "iteration_cap": parse_int,
    "cache_dir": str,
    "out": str,
    "log_level": str,
    "limit": parse_int,
    "n": parse_int,
    "p": parse_int,
    "q": parse_int,
    "z": parse_int,
    "phi": parse_int,
    "B": parse_int,
    "delta": str,
    "h": parse_int,
    "theta": parse_rational,
    "variant": str,
    "y": parse_rational,
    "s": parse_int,
    "y1": parse_rational,
    "y2": parse_rational,
    "product": str,
    "chain": str,
    "save": str,
    "theta_prime": parse_rational,
    "width": parse_rational,
}


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in OPTIONS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


@dataclass
class ExperimentConfig:
    rule: str = "liouville"
    seed: int | None = None
    explicit: str | None = None
    default_sign: int = 1
    mode: str = "desk"
    x: float | None = None
    beta1: float | None = None
    beta2: float | None = None
    L: float | None = None
    interval: Interval | None = None
    rho_max: float | None = None
    gap_cap: float | None = None
    chain_y_coefficient: float | None = None
    chain_s: int | None = None
    s_max: int = 8
    iteration_cap: int | None = None
    cache_dir: str | None = None
    out: str = "json"
    log_level: str = "WARNING"
    extra: dict = dataclasses.field(default_factory=dict)

    @classmethod
    def from_mapping(cls, raw: dict):
        """Build from raw strings or values; keys outside the dataclass land in ``extra``."""
        fields = {f.name for f in dataclasses.fields(cls)} - {"extra"}
        kwargs, extra = {}, {}
        for key, value in raw.items():
            if value is None:
                continue
            if key not in OPTIONS:
                raise ConfigError(f"unknown option {key!r}")
            parsed = OPTIONS[key](value) if isinstance(value, str) else value
            (kwargs if key in fields else extra)[key] = parsed
        cfg = cls(**kwargs, extra=extra)
        if cfg.mode not in ("paper", "desk"):
            raise ConfigError(f"mode must be paper or desk, got {cfg.mode!r}")
        if cfg.out not in ("json", "csv"):
            raise ConfigError(f"out must be json or csv, got {cfg.out!r}")
        return cfg

    def rule_assignment(self) -> PrimeSignAssignment:
        kind = self.rule
        if kind == "liouville":
            return PrimeSignAssignment.liouville()
        if kind in ("random", "seeded_random"):
            if self.seed is None:
                raise ConfigError("seeded_random rule needs --seed")
            return PrimeSignAssignment.seeded_random(self.seed)
        if kind == "explicit":
            pairs = []
            if self.explicit:
                for line in Path(self.explicit).read_text().splitlines():
                    line = line.split("#", 1)[0].strip()
                    if line:
                        p, s = line.split()
                        pairs.append((int(p), int(s)))
            return PrimeSignAssignment.explicit(pairs, self.default_sign)
        raise ConfigError(f"unknown rule {kind!r}; use liouville, random or explicit")


def resolve_params(config: ExperimentConfig) -> ExperimentParams:
    """Paper mode derives beta1, beta2 = L^3, L and I from x; desk mode copies user values."""
    if config.x is None:
        raise ConfigError("x is required")
    cap = config.iteration_cap or 10_000
    if config.mode == "paper":
        overrides = [k for k in ("beta1", "beta2", "L", "interval") if getattr(config, k) is not None]
        if overrides:
            raise ConfigError(f"paper mode derives {', '.join(overrides)} from x; remove the override")
        params = ExperimentParams.paper(config.x, cap)
        if params.interval is None or params.interval.size < 2:
            log.warning(
                "paper-mode interval [x/(2 beta1), x/beta1] is %s at x=%g (beta1=%g)",
                "empty" if params.interval is None else f"degenerate {params.interval}",
                config.x, params.beta1,
            )
        return params
    missing = [k for k in ("beta1", "beta2") if getattr(config, k) is None]
    if missing:
        raise ConfigError(f"desk mode needs explicit {', '.join(missing)}")
    interval = config.interval or interval_for(config.x, config.beta1)
    if interval is None:
        raise ConfigError(f"desk-mode interval [x/(2 beta1), x/beta1] is empty at x={config.x}, beta1={config.beta1}")
    return ExperimentParams.desk(config.x, config.beta1, config.beta2, interval, config.L, cap)


def chain_knobs(config: ExperimentConfig, params: ExperimentParams) -> ChainKnobs:
    if params.mode == "paper":
        return ChainKnobs.paper(params)
    if config.rho_max is None:
        raise ConfigError("desk mode chain needs rho_max")
    return ChainKnobs.desk(config.rho_max, config.chain_y_coefficient, config.gap_cap, config.chain_s, config.s_max)


# --- denominator-free intervals ----------------------------------------------------


def _free_of_denominators(y1: Fraction, y2: Fraction, x: int) -> bool:
    for n in range(1, x + 1):
        a = y1 * n
        if a.denominator == 1 or math.floor(a) != math.floor(y2 * n):
            return False
    return True


def interval_avoiding_denominators(theta_prime, x: int, width):
    """[y1, y2] of the given width near theta' with no a/n (n <= x) inside.

    Candidates start centred on theta' and move outwards in half-width steps,
    alternating sides, until the interval is more than 1/x away.
    """
    theta, width = parse_rational(theta_prime), parse_rational(width)
    if not 0 < theta < 1:
        raise ContractError(f"theta' must lie in (0, 1), got {theta}")
    if width <= 0 or x < 1:
        raise ContractError("need width > 0 and x >= 1")
    half = width / 2
    radius = Fraction(1, x)
    k = 0
    while (abs(k) - 1) * half <= radius:
        y1 = theta - half + k * half
        y2 = y1 + width
        if _free_of_denominators(y1, y2, x):
            return y1, y2
        k = -k + 1 if k <= 0 else -k
    raise SearchError(f"no interval of width {width} free of denominators <= {x} within {radius} of {theta}")


# --- table cache -------------------------------------------------------------------


def get_table(rule: PrimeSignAssignment, N: int, cache_dir=None) -> SignTable:
    if cache_dir is None:
        return sieve_signs(rule, N)
    directory = Path(cache_dir)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{rule.digest.hex()[:16]}-{N}.mfst"
    if not path.exists():
        table = sieve_signs(rule, N)
        save_table(table, path)
        return table
    table = load_table(path, rule)
    rng = random.Random(int.from_bytes(rule.digest[:8], "little") ^ N)
    for n in (rng.randint(1, N) for _ in range(SPOT_CHECKS)):
        if table.signs[n] != rule.sign_by_factoring(n):
            raise FormatError(f"cache file {path} disagrees with factorization at n={n}")
    log.info("cache hit %s", path)
    return table


# --- record encoding ----------------------------------------------------------------


def encode(value):
    if isinstance(value, bool) or value is None or isinstance(value, (str, int, float)):
        return value
    if isinstance(value, Fraction):
        return {"num": str(value.numerator), "den": str(value.denominator)}
    if isinstance(value, Interval):
        return {"lo": value.lo, "hi": value.hi}
    if isinstance(value, RatioProduct):
        return {**value.to_json(), "value": encode(value.value)}
    if isinstance(value, RatioFactor):
        return [value.p, value.q]
    if isinstance(value, PrimeSignAssignment):
        return value.descriptor
    if dataclasses.is_dataclass(value):
        return {f.name: encode(getattr(value, f.name)) for f in dataclasses.fields(value) if not f.name.startswith("_")}
    if isinstance(value, dict):
        return {str(k): encode(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [encode(v) for v in value]
    if hasattr(value, "item"):
        return value.item()
    raise TypeError(f"cannot encode {type(value).__name__}")


def decode_rational(obj) -> Fraction:
    return Fraction(int(obj["num"]), int(obj["den"]))


def param_digest(params: dict) -> str:
    return hashlib.sha256(json.dumps(params, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Record:
    op: str
    params: dict
    value: object
    scalar: object
    runtime_ms: float

    def as_json(self) -> str:
        return json.dumps(
            {"op": self.op, "params": self.params, "value": self.value, "runtime_ms": self.runtime_ms},
            sort_keys=True,
        )

    def csv_row(self):
        s = self.scalar
        if isinstance(s, bool):
            s = int(s)
        if isinstance(s, int):
            num, den = str(s), "1"
        elif isinstance(s, Fraction):
            num, den = str(s.numerator), str(s.denominator)
        elif s is None:
            num, den = "", ""
        else:
            num, den = repr(s), ""
        return (self.op, param_digest(self.params), num, den, f"{self.runtime_ms:.3f}")


def render(records, out: str) -> str:
    if out == "json":
        return "".join(r.as_json() + "\n" for r in records)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in records:
        writer.writerow(r.csv_row())
    return buf.getvalue()


# --- subcommand handlers --------------------------------------------------------------
# each returns (params dict, value, csv scalar)


def _need(config, *names):
    values = []
    for name in names:
        v = getattr(config, name, None)
        if v is None:
            v = config.extra.get(name)
        if v is None:
            raise ConfigError(f"missing required option --{name.replace('_', '-')}")
        values.append(v)
    return values if len(values) > 1 else values[0]


def _opt(config, name, default=None):
    v = config.extra.get(name)
    return default if v is None else v


def _interval(config) -> Interval:
    return config.interval or resolve_params(config).interval or _need(config, "interval")


def _table(config, N):
    return get_table(config.rule_assignment(), N, config.cache_dir)


def _base(config, **kw):
    return {"rule": config.rule_assignment().descriptor, **{k: encode(v) for k, v in kw.items()}}


def op_sieve(config):
    N = _opt(config, "limit") or parse_int(_need(config, "x"))
    table = _table(config, N)
    if _opt(config, "save"):
        save_table(table, _opt(config, "save"))
    total = int(table.signs[1:].sum())
    return _base(config, limit=N), {"limit": N, "sum": total, "digest": table.rule.digest.hex()}, total


def op_mean(config):
    x = parse_int(_need(config, "x"))
    value = mean_value(_table(config, x), x)
    return _base(config, x=x), encode(value), value


def op_oscillate(config):
    x = parse_int(_need(config, "x"))
    report = count_sign_changes(_table(config, x), x)
    return _base(config, x=x), encode(report), report.changes


def op_sigma(config):
    I = _interval(config)
    alpha = _need(config, "alpha")
    N = max(I.hi, math.floor(alpha * I.hi))
    value = sigma(_table(config, N), I, alpha)
    return _base(config, interval=I, alpha=alpha), {"sigma": value, "size": I.size, **sigma_thresholds(value, I.size)}, value


def op_ratio(config):
    I = _interval(config)
    p, q = _need(config, "p", "q")
    params = resolve_params(config) if config.beta2 is not None or config.mode == "paper" else None
    N = max(I.hi, (p * I.hi) // q, p, q)
    res = ratio_floor_sigma(_table(config, N), I, p, q, params)
    return _base(config, interval=I, p=p, q=q), {**encode(res), "below_threshold": res.below_threshold}, res.count


def op_integral(config):
    I = _interval(config)
    u0, u1 = config.extra.get("u0"), config.extra.get("u1")
    if u0 is None or u1 is None:
        b2 = Fraction(_need(config, "beta2")).limit_denominator(10**9)
        u0, u1 = 1 - 1 / b2, 1 - 1 / (2 * b2)
    N = math.floor(u1 * I.hi) + 1
    value = integral_sigma(_table(config, max(N, I.hi)), I, u0, u1)
    heuristic = (u1 - u0) * I.size / 2
    out = {"integral": encode(value), "heuristic": encode(heuristic), "ratio": float(value / heuristic)}
    return _base(config, interval=I, u0=u0, u1=u1), out, value


def op_shortmean(config):
    z, phi = _need(config, "z", "phi")
    value = short_interval_mean(_table(config, z), z, phi)
    return _base(config, z=z, phi=phi), encode(value), value


def op_witness(config):
    n, p, q = _need(config, "n", "p", "q")
    m = locate_sign_change(_table(config, max(p * n, p, q)), n, p, q)
    return _base(config, n=n, p=p, q=q), {"m": m, "window": [p * n - q, p * n]}, m


def op_pigeonhole(config):
    x = parse_int(_need(config, "x"))
    w = pigeonhole_agreement_witness(_table(config, x), x)
    return _base(config, x=x), encode(w), w.count


def op_shift(config):
    x = parse_int(_need(config, "x"))
    B = _need(config, "B")
    text = _opt(config, "delta", "0")
    spec = ShiftSpec(parse_delta(text), B, _opt(config, "h", 1), _opt(config, "theta", Fraction(1)))
    L = config.L
    if _opt(config, "variant", "lemma") == "floor":
        table = _table(config, x)
        rep = floor_shift_sums(table, x, spec, L)
        out = {**encode(rep), "first_inequality": rep.first_inequality, "second_inequality": rep.second_inequality}
        return _base(config, x=x, h=spec.h, theta=spec.theta, variant="floor"), out, rep.lhs
    total = shift_sum(_table(config, x + B), x, spec)
    bound = shift_lemma_bound(x, B, L or default_L(x))
    return _base(config, x=x, B=B, delta=text), {"sum": total, "bound": bound, "within_bound": total <= bound}, total


def _chain(config):
    rule = config.rule_assignment()
    params = resolve_params(config)
    chain_path = _opt(config, "chain")
    if chain_path:
        return AlphaChain.from_json(json.loads(Path(chain_path).read_text()), rule, params), params
    return build_alpha_chain(rule, params, knobs=chain_knobs(config, params)), params


def op_chain(config):
    chain, params = _chain(config)
    problems = verify_chain(chain)
    if _opt(config, "save"):
        Path(_opt(config, "save")).write_text(chain.dumps() + "\n")
    value = {
        "t": chain.t,
        "values": [encode(v) for v in chain.values],
        "rungs": [r.to_json() for r in chain.rungs],
        "problems": problems,
    }
    return _base(config, x=params.x, beta1=params.beta1, beta2=params.beta2, rho_max=chain.rho_max), value, chain.t


def op_approx(config):
    chain, params = _chain(config)
    y1, y2 = _need(config, "y1", "y2")
    theta = approximate_in_interval(chain, y1, y2, config.iteration_cap)
    return _base(config, x=params.x, y1=y1, y2=y2), {**encode(theta), "g": theta.k}, theta.value


def _product(config) -> RatioProduct:
    rule = config.rule_assignment()
    product = parse_product(_need(config, "product"))
    return RatioProduct(tuple(RatioFactor(f.p, f.q, rule.sign(f.p)) for f in product.factors))


def op_reorder(config):
    out = reorder_prefix(_product(config))
    value = {**encode(out), "prefixes": [encode(v) for v in out.prefix_values()]}
    return _base(config, product=_need(config, "product")), value, out.value


def op_profile(config):
    I = _interval(config)
    product = reorder_prefix(_product(config))
    N = max([I.hi] + [math.floor(v * I.hi) for v in product.prefix_values()])
    profile = chain_prefix_sigma_profile(_table(config, N), I, product)
    value = {"profile": profile, "thresholds": [sigma_thresholds(v, I.size) for v in profile]}
    return _base(config, interval=I, product=_need(config, "product")), value, profile[-1] if profile else None


def op_matched(config):
    rule = config.rule_assignment()
    y, s = _need(config, "y", "s")
    gap_cap = _opt(config, "gap_cap", config.gap_cap)
    if gap_cap is None:
        raise ConfigError("missing required option --gap-cap")
    spec = find_matched_products(rule, y, s, gap_cap)
    return _base(config, y=y, s=s, gap_cap=gap_cap), encode(spec), spec.gap


def op_primes(config):
    y, s = _need(config, "y", "s")
    count, floor_ = prime_count_in_J(y, s)
    return {"y": encode(y), "s": s}, {"count": count, "paper_floor": floor_, "exceeds_floor": count > floor_}, count


def op_avoid(config):
    theta, width = _need(config, "theta_prime", "width")
    x = parse_int(_need(config, "x"))
    y1, y2 = interval_avoiding_denominators(theta, x, width)
    return {"theta_prime": encode(theta), "x": x, "width": encode(width)}, {"y1": encode(y1), "y2": encode(y2)}, y1


HANDLERS = {
    "sieve": op_sieve,
    "oscillate": op_oscillate,
    "sigma": op_sigma,
    "integral": op_integral,
    "shift": op_shift,
    "shortmean": op_shortmean,
    "witness": op_witness,
    "chain": op_chain,
    "approx": op_approx,
    "reorder": op_reorder,
    "matched": op_matched,
    "profile": op_profile,
    "mean": op_mean,
    "pigeonhole": op_pigeonhole,
    "ratio": op_ratio,
    "primes": op_primes,
    "avoid": op_avoid,
}


def exit_code_for(exc: Exception) -> int:
    if isinstance(exc, ContractError):
        return EXIT_CONTRACT
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, ResourceError):
        return EXIT_RESOURCE
    return EXIT_FAILURE


def run_experiment(config: ExperimentConfig, subcommand: str):
    """Run one subcommand; returns (exit code, records, error message or None)."""
    if subcommand not in HANDLERS:
        return EXIT_CONFIG, [], f"unknown subcommand {subcommand!r}; choose from {', '.join(SUBCOMMANDS)}"
    start = time.perf_counter()
    try:
        params, value, scalar = HANDLERS[subcommand](config)
    except (MFError, OSError, ValueError) as exc:
        code = exit_code_for(exc) if isinstance(exc, MFError) else EXIT_CONFIG
        return code, [], f"{type(exc).__name__}: {exc}"
    ms = round((time.perf_counter() - start) * 1000, 3)
    return EXIT_OK, [Record(subcommand, params, value, scalar, ms)], None
