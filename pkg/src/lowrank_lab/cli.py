"""Command-line front end.

Exit status: 0 when every verdict passes, 2 when any verdict fails (the
reports are still written), 1 when a run cannot start at all. Errors
print one line ``error: <reason>: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .bound_lab import run_cells
from .config import load_configs, validate
from .errors import ConfigError, LabError

SUBCOMMANDS = {
    "spectrum": "spectrum",
    "solve": "linear",
    "eigen": "eigen",
    "commuting": "commuting",
    "sweep": "d_sweep",
    "two-step": "two_step",
}


class UsageError(LabError):
    reason = "usage_error"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        reason = "unknown_subcommand" if "invalid choice" in message else "usage_error"
        raise UsageError(message, reason=reason)


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _nonneg_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be a nonnegative integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", required=True, help="JSON experiment config")
    common.add_argument("--seed", type=int, help="replace the config's base seed")
    common.add_argument("--steps", type=_nonneg_int, help="number of iteration steps")
    common.add_argument("--eps-rank", type=float, help="relative rank threshold in (0, 1)")
    common.add_argument("--out", help="output directory (beats $LOWRANK_LAB_OUT)")
    common.add_argument("--jobs", type=_positive_int, default=1, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="lowrank-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "spectrum": "singular spectra and entropy of a tensor",
        "solve": "Richardson run for A u = b and tail-bound certification",
        "eigen": "shifted Richardson run and eigenvector tail bounds",
        "commuting": "additive rank growth for a pure Kronecker sum",
        "sweep": "condition number and decay exponent across orders d",
        "two-step": "measured one- and two-step rank growth",
        "validate-config": "build every object of a config without running it",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def _load(args):
    cfgs = load_configs(args.config)
    out = []
    for cfg in cfgs:
        if args.command in SUBCOMMANDS and cfg.mode != SUBCOMMANDS[args.command]:
            raise ConfigError(
                f"config {cfg.name} has mode {cfg.mode!r}, '{args.command}' runs "
                f"{SUBCOMMANDS[args.command]!r}",
                reason="mode_mismatch",
            )
        out.append(cfg.with_overrides(seed=args.seed, n_steps=args.steps, eps_rank=args.eps_rank))
    return out


def main(argv=None) -> int:
    parser = build_parser()
    verbose = False
    try:
        args = parser.parse_args(argv)
        verbose = args.verbose
        cfgs = _load(args)
        if args.command == "validate-config":
            for cfg in cfgs:
                notes = validate(cfg)
                print(f"{cfg.name}: ok ({cfg.mode})")
                if verbose:
                    for note in notes:
                        print(f"  {note}")
            return 0
        results = run_cells(cfgs, args.out, args.jobs)
    except LabError as exc:
        print(f"error: {exc.reason}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io_error: {exc}", file=sys.stderr)
        return 1

    failed = False
    for res in results:
        print(f"{res.name}: {res.verdict}")
        if res.failures:
            failed = True
            print(f"  failed: {', '.join(res.failures)}")
        if verbose:
            for note in res.notes:
                print(f"  note: {note}")
            for path in res.paths:
                print(f"  wrote {path}")
    return 2 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
