"""Command-line front end.

Exit codes: 0 success, 1 parameter error, 2 reconciliation failed
verification, 3 I/O error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import infotheory, pipeline, reconciliation
from .util import ParameterError

EXIT_OK = 0
EXIT_PARAMETER = 1
EXIT_VERIFICATION = 2
EXIT_IO = 3


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="TOML experiment config")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", metavar="DIR", default=None,
                        help="output directory (enables the csv bundle)")
    parser.add_argument("--quiet", action="store_true", help="suppress stdout")


def _load_config(args) -> pipeline.ExperimentConfig:
    if args.config:
        cfg = pipeline.config_from_toml(args.config)
    else:
        cfg = pipeline.default_config()
    if args.seed is not None:
        import dataclasses

        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _cmd_run(args) -> int:
    cfg = _load_config(args)
    report = pipeline.run_pipeline(cfg)
    fmt = "csv-bundle" if args.out else "text"
    pipeline.emit_report(report, fmt=fmt, out_dir=args.out, quiet=args.quiet)
    return EXIT_OK if report.verified else EXIT_VERIFICATION


def _cmd_sweep(args) -> int:
    cfg = _load_config(args)
    if cfg.sweep is None:
        raise ParameterError("sweep command needs a [sweep] config section")
    sweep = pipeline.run_sweep(cfg)
    best = sweep.reports[sweep.best_n]
    fmt = "csv-bundle" if args.out else "text"
    pipeline.emit_report(best, fmt=fmt, out_dir=args.out, sweep=sweep, quiet=args.quiet)
    return EXIT_OK if best.verified else EXIT_VERIFICATION


def _cmd_chain(args) -> int:
    chain = infotheory.build_downtime_chain(args.bins, args.downtime, args.occupancy)
    pi = infotheory.stationary_distribution(chain)
    rate = infotheory.entropy_rate(chain)
    if not args.quiet:
        print(f"states ({chain.num_states}):")
        for state, prob in zip(chain.states, pi):
            print(f"  {state.label} (residual {state.residual}): pi={prob:.10g}")
        print(f"entropy_rate_bits_per_frame={rate:.12g}")
    if args.out:
        from pathlib import Path

        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        chain.to_adjacency_csv(out / "chain.csv")
        if not args.quiet:
            print(f"wrote {out / 'chain.csv'}")
    return EXIT_OK


def _cmd_codegen(args) -> int:
    code = reconciliation.make_regular_ldpc(
        args.length, args.column_weight, args.row_weight,
        seed=0 if args.seed is None else args.seed,
        remove_four_cycles=not args.keep_four_cycles)
    if not args.alist:
        raise ParameterError("codegen requires --alist PATH")
    reconciliation.write_alist(code, args.alist)
    if not args.quiet:
        cycles = reconciliation.count_four_cycles(code)
        print(f"wrote {args.alist}: n={code.n_code} m={code.m_code} "
              f"design_rate={code.design_rate:.4g} four_cycles={cycles}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="timebin-qkd",
        description="Time-bin entanglement QKD simulator and analysis toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the full pipeline once")
    _common_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="sweep bins-per-frame candidates")
    _common_flags(p_sweep)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_chain = sub.add_parser("chain", help="downtime Markov-chain analysis")
    _common_flags(p_chain)
    p_chain.add_argument("--bins", type=int, required=True, help="bins per frame")
    p_chain.add_argument("--downtime", type=int, required=True, help="downtime in bins")
    p_chain.add_argument("--occupancy", type=float, required=True,
                         help="per-bin arrival probability")
    p_chain.set_defaults(func=_cmd_chain)

    p_code = sub.add_parser("codegen", help="construct a regular LDPC code")
    _common_flags(p_code)
    p_code.add_argument("--length", type=int, required=True, help="code length in bits")
    p_code.add_argument("--column-weight", type=int, default=3)
    p_code.add_argument("--row-weight", type=int, default=6)
    p_code.add_argument("--alist", metavar="PATH", required=True,
                        help="output alist file")
    p_code.add_argument("--keep-four-cycles", action="store_true",
                        help="skip the 4-cycle reduction passes")
    p_code.set_defaults(func=_cmd_codegen)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return EXIT_PARAMETER
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
