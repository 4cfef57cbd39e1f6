"""Command line entry point: ``tulip {run,surface,disagreement-map,validate-config}``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure (including
any failed seed).
"""

import argparse
import logging
import sys

import yaml

from . import config as config_mod
from . import experiments
from .exceptions import ConfigError, UnsupportedConfigurationError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

VERBS = {"run": experiments.run, "surface": experiments.surface, "disagreement-map": experiments.disagreement_map}


def _seed_list(text):
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")
    if not seeds or any(s < 0 for s in seeds):
        raise argparse.ArgumentTypeError("seeds must be a nonempty list of nonnegative integers")
    return seeds


def _positive(text):
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return n


def build_parser():
    parser = argparse.ArgumentParser(prog="tulip", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in (*VERBS, "validate-config"):
        p = sub.add_parser(verb)
        p.add_argument("--config", required=True, help="YAML experiment config")
        if verb != "validate-config":
            p.add_argument("--output", help="output directory (overrides output_dir)")
            p.add_argument("--seeds", type=_seed_list, help="comma-separated seeds (overrides seeds)")
            p.add_argument("--threads", type=_positive, default=1, help="seeds run concurrently")
        else:
            p.add_argument("--print", action="store_true", dest="print_resolved",
                           help="print the config with every default filled in")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; those are config errors here
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        cfg = config_mod.load(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.verb == "validate-config":
        if args.print_resolved:
            print(yaml.safe_dump(cfg.to_dict(), sort_keys=False), end="")
        else:
            print(f"ok {cfg.digest()}")
        return EXIT_OK
    try:
        manifest = VERBS[args.verb](cfg, args.output, args.seeds, args.threads)
    except (ConfigError, UnsupportedConfigurationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    failed = [e["seed"] for e in manifest["seeds"] if e["status"] != "ok"]
    if failed:
        print(f"runtime failure: seeds {failed} failed; see manifest.json", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
