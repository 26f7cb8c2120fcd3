"""Command-line entry point: ``mfosc <subcommand> [options]``.

Options may also come from a ``--config`` file of ``key = value`` lines;
flags given on the command line win.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError
from .experiment import (
    EXIT_CONFIG,
    HANDLERS,
    OPTIONS,
    ExperimentConfig,
    read_config_file,
    render,
    run_experiment,
)

HELP = {
    "rule": "liouville | random | explicit",
    "seed": "64-bit seed for --rule random",
    "explicit": "file of 'prime sign' lines for --rule explicit",
    "default_sign": "sign of primes not listed in --explicit (default +1)",
    "mode": "paper | desk (default desk)",
    "interval": "integer interval lo:hi",
    "alpha": "exact rational p/q or decimal",
    "out": "json | csv",
    "cache_dir": "directory for cached sign tables",
    "delta": "shift: integer constant or mod:K:OFFSET",
    "variant": "shift: lemma (default) | floor",
    "product": "comma-separated p/q factors or a product .json file",
    "chain": "load a saved chain .json instead of building one",
    "save": "write the table (sieve) or chain (chain) to this path",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{message}\n{self.format_usage()}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mfosc", description="Sign-change experiments for completely multiplicative +-1 functions.")
    parser.add_argument("--config", help="key = value configuration file")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    for name in OPTIONS:
        common.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None, help=HELP.get(name))
    sub = parser.add_subparsers(dest="subcommand", parser_class=_Parser)
    for name in HANDLERS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.subcommand is None:
            raise ConfigError(f"missing subcommand\n{parser.format_usage()}")
        raw = read_config_file(args.config) if args.config else {}
        raw.update({k: v for k, v in vars(args).items() if k in OPTIONS and v is not None})
        config = ExperimentConfig.from_mapping(raw)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=config.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    code, records, message = run_experiment(config, args.subcommand)
    if message:
        print(f"error: {message}", file=sys.stderr)
    sys.stdout.write(render(records, config.out))
    return code


if __name__ == "__main__":
    sys.exit(main())
