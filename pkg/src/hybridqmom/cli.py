"""Command line entry point.

Exit codes: 0 success, 2 usage error, 3 missing input, 4 malformed
config/schema/checkpoint, 5 numerical failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .errors import (
    CheckpointError,
    ConfigError,
    DomainError,
    IntegrationError,
    MissingInputError,
    NonRealizableMoments,
    SchemaError,
    TrainingError,
)

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_CONFIG = 4
EXIT_NUMERICAL = 5

_CATEGORIES = (
    (MissingInputError, "missing-input", EXIT_MISSING),
    ((ConfigError, SchemaError, CheckpointError), "invalid-config", EXIT_CONFIG),
    ((IntegrationError, TrainingError, NonRealizableMoments, DomainError), "numerical", EXIT_NUMERICAL),
)


def parse_window(text):
    try:
        a, b = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"window must look like T0:T1, got {text!r}") from None
    if not b > a:
        raise argparse.ArgumentTypeError("window end must exceed its start")
    return a, b


def build_parser():
    p = argparse.ArgumentParser(prog="hybridqmom", description="Hybrid ML/CHyQMOM bubble-moment pipeline.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("forcing", help="pressure forcing signals")
    fsub = f.add_subparsers(dest="action", required=True)
    fs = fsub.add_parser("sample", help="sample random forcings")
    fs.add_argument("--count", type=int, required=True)
    fs.add_argument("--seed", type=int, required=True)
    fs.add_argument("--out", required=True)
    fs.add_argument("--mode", choices=("cap", "normalize"), default="cap",
                    help="amplitude rescaling (default: cap the sum at 0.6)")

    m = sub.add_parser("mc", help="Monte Carlo surrogate truth")
    msub = m.add_subparsers(dest="action", required=True)
    mr = msub.add_parser("run", help="run one bubble ensemble per forcing")
    mr.add_argument("--forcings", required=True)
    mr.add_argument("--config", help="JSON ensemble config (defaults when omitted)")
    mr.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train the closure model")
    t.add_argument("--data", required=True)
    t.add_argument("--hyper", help="JSON hyperparameters (defaults when omitted)")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, help="overrides the seed in the hyperparameter file")

    e = sub.add_parser("evolve", help="integrate the moment equations")
    e.add_argument("--mode", choices=("baseline", "hybrid"), required=True)
    e.add_argument("--model", help="checkpoint (hybrid mode)")
    e.add_argument("--forcings", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--mc", help="Monte Carlo data directory supplying initial moments and t_end")
    e.add_argument("--config", help="JSON integrator config")
    e.add_argument("--nodes", type=int, help="quadrature nodes for baseline runs (default 4)")

    r = sub.add_parser("report", help="error report against Monte Carlo")
    r.add_argument("--runs", required=True)
    r.add_argument("--mc", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--window", type=parse_window, help="restrict errors to T0:T1, e.g. 40:50")

    rp = sub.add_parser("repro", help="run the whole pipeline")
    rp.add_argument("--scale", choices=sorted(pipeline.SCALES), default="desk")
    rp.add_argument("--seed", type=int, default=7)
    rp.add_argument("--out", default="repro")
    return p


def _dispatch(args):
    if args.command == "forcing":
        sigs = pipeline.forcing_sample(args.count, args.seed, args.out, args.mode)
        print(f"wrote {len(sigs)} forcings to {args.out}")
    elif args.command == "mc":
        recs = pipeline.mc_run(args.forcings, args.config, args.out)
        print(f"wrote {len(recs)} Monte Carlo records to {args.out}")
    elif args.command == "train":
        _, hist = pipeline.train_model(args.data, args.hyper, args.out, args.seed,
                                       progress=lambda ep, loss: logging.info("epoch %d loss %.6e", ep, loss))
        print(f"trained {len(hist)} epochs; final loss {hist[-1]:.6e}" if hist else "no epochs run")
    elif args.command == "evolve":
        runs = pipeline.evolve(args.mode, args.forcings, args.out, args.model, args.mc, args.config, args.nodes)
        failed = sum(r["status"] != "ok" for r in runs)
        print(f"wrote {len(runs) - failed} runs to {args.out}" + (f"; {failed} failed" if failed else ""))
    elif args.command == "report":
        doc = pipeline.report(args.runs, args.mc, args.out, args.window)
        print(f"wrote report with {len(doc['files'])} tables to {args.out}")
    elif args.command == "repro":
        pipeline.repro(args.scale, args.seed, args.out,
                       progress=lambda ep, loss: logging.info("epoch %d loss %.6e", ep, loss))
        print(f"pipeline complete; report in {args.out}/report")


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        _dispatch(args)
    except Exception as exc:
        for types, label, code in _CATEGORIES:
            if isinstance(exc, types):
                print(f"error[{label}]: {exc}", file=sys.stderr)
                return code
        print(f"error[internal]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_OTHER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
