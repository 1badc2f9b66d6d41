"""Command line entry point.

    anchorassign --config scenario.json --out results/ [--stage nace] [--resume results/]
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import AssignmentError
from .ingest import load_scenario
from .pipeline import STAGES, run


def _u64(text: str) -> int:
    n = int(text, 0)
    if not 0 <= n < 1 << 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return n


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="anchorassign",
                                 description="Assign residence and workplace cells to a synthetic population.")
    ap.add_argument("--config", required=True, help="scenario JSON file")
    ap.add_argument("--out", default="out", help="output directory (default: out)")
    ap.add_argument("--seed", type=_u64, help="override the config seed")
    ap.add_argument("--stage", choices=STAGES, default=STAGES[-1], help="stop after this stage")
    ap.add_argument("--resume", metavar="PATH", help="checkpoint directory to continue from")
    ap.add_argument("--threads", type=_positive, help="worker threads for per-person stages")
    ap.add_argument("--gravity-mask", choices=("on", "off"), help="cap gravity draws by remaining jobs")
    ap.add_argument("--distance-exponent", type=float, help="exponent of the inverse-distance cell kernel")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        scenario = load_scenario(args.config, seed=args.seed)
        cfg = scenario.config
        if args.gravity_mask is not None:
            cfg.gravity_mask = args.gravity_mask == "on"
        if args.distance_exponent is not None:
            cfg.distance_exponent = args.distance_exponent
            cfg.__post_init__()
        state = run(scenario, args.out, stage=args.stage, resume=args.resume, threads=args.threads)
    except (AssignmentError, OSError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        for attr in ("path", "line", "column"):
            if getattr(exc, attr, None) is not None:
                err[attr] = str(getattr(exc, attr))
        print(json.dumps(err), file=sys.stderr)
        return 1
    if args.verbose:
        print(json.dumps({"stage": state.completed, "out": str(args.out),
                          "escalations": len(state.escalations)}), file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
