"""Command line entry point: ``fbgpr run|compare|plotdata|summarize``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import diagnostics, harness
from .nuts import read_trace_csv


def _parse_set(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ValueError(f"--set expects section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _extra_flags(extra):
    """Turn leftover ``--section.key value`` / ``--key=value`` into overrides."""
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ValueError(f"unexpected argument {tok!r}")
        name = tok[2:]
        if "=" in name:
            name, value = name.split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise ValueError(f"flag {tok} needs a value")
            i += 1
            value = extra[i]
        out[name.replace("-", "_")] = value
        i += 1
    return out


def cmd_run(args, extra):
    overrides = _extra_flags(extra)
    overrides.update(_parse_set(args.set))
    if args.scheme:
        overrides["scheme.name"] = args.scheme
    if args.seed is not None:
        overrides["scheme.seed"] = str(args.seed)
    if args.out:
        overrides["output.dir"] = args.out
    cfg = harness.load_config(args.config, overrides)
    bundle = harness.run_experiment(cfg)
    print(bundle)
    return 0


def cmd_compare(args, extra):
    rows, text = harness.compare_schemes(args.bundles, csv_out=args.csv)
    print(text)
    return 0


def cmd_plotdata(args, extra):
    if args.output:
        harness.emit_plot_data(args.bundle, out=args.output)
    else:
        harness.emit_plot_data(args.bundle, out=sys.stdout)
    return 0


def cmd_summarize(args, extra):
    trace = read_trace_csv(args.trace)
    summary = diagnostics.summarize_trace(trace, space=args.space)
    if args.csv:
        summary.to_csv(args.csv)
    print(summary.to_text())
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="fbgpr", description="Fully Bayesian GP regression")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--scheme", choices=harness.SCHEMES)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (bundle goes in <out>/<scheme>)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override any config key; repeatable")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="RMSE and NLPD table across run bundles")
    p.add_argument("bundles", nargs="+")
    p.add_argument("--csv", help="also write the table as CSV")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("plotdata", help="long-format plot data for 1-d datasets")
    p.add_argument("bundle")
    p.add_argument("-o", "--output", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_plotdata)

    p = sub.add_parser("summarize", help="sampler statistics of a trace CSV")
    p.add_argument("trace")
    p.add_argument("--space", choices=("theta", "eta"), default="theta")
    p.add_argument("--csv", help="also write the table as CSV")
    p.set_defaults(func=cmd_summarize)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args, extra = ap.parse_known_args(argv)
    if extra and args.command != "run":
        ap.error(f"unrecognized arguments: {' '.join(extra)}")
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args, extra)
    except (ValueError, FileNotFoundError, RuntimeError, KeyError) as exc:
        print(f"fbgpr: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # numerical failures etc.
        print(f"fbgpr: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
