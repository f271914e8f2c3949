"""Command line entry point: ``threshold-lab <kind> [--config FILE] [--out DIR]``."""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import InvalidInputError, ThresholdLabError
from .jobs import KINDS, JobError, load_config, run_job, validate_config
from .output import OutputError, emit_outputs

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2

HELP = {
    "solve": "certify binding at one charge point (system.charges)",
    "sweep": "stability map on a (q1, q2) grid; writes sweep.csv and stability_map.svg",
    "border": "bisect the stability border q1*(q2)",
    "diagnose": "near-threshold size diagnostics (two-body oracle or three-body paths)",
    "green": "pointwise bound and Hilbert-Schmidt norm of the cut-off Green's function",
    "lattice": "lattice resolvent comparison or Borromean bound",
}


def u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="threshold-lab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log timings and cache hits")
    sub = p.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        s = sub.add_parser(kind, help=HELP[kind])
        s.add_argument("--config", help="JSON job file (defaults are used when omitted)")
        s.add_argument("--out", default="out", help="output directory (default: out)")
        s.add_argument("--seed", type=u64, help="override the config seed")
        s.add_argument("--threads", type=positive_int, help="worker threads")
        s.add_argument("--no-cache", action="store_true", help="always recompute")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            cfg = load_config(args.config)
            if cfg.kind != args.command:
                raise InvalidInputError(f"config kind {cfg.kind!r} does not match command {args.command!r}")
        else:
            cfg = validate_config({"kind": args.command, "system": {"masses": [1, 1, 1]}})
        cfg = cfg.with_overrides(seed=args.seed, threads=args.threads)
        result = run_job(cfg, use_cache=not args.no_cache)
        paths = emit_outputs(result.payload, args.out)
    except JobError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION if exc.is_validation else EXIT_NUMERICAL
    except (InvalidInputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OutputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ThresholdLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    state = "cached" if result.cache_hit else f"computed in {result.seconds:.2f} s"
    print(f"{cfg.kind} {result.digest[:12]} ({state})")
    for path in paths:
        print(f"  {path}")
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
