"""Command-line entry point.

    fedcd run <config> [--key=value ...]
    fedcd compare <config> [--key=value ...]
    fedcd sweep <config> --param <name> --values v1,v2,... [--key=value ...]

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys

import yaml

from .config import apply_overrides, load_config
from .engine import ConfigError
from .runner import SWEEP_PARAMS, output_dir, run_compare, run_experiment, run_sweep

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("fedcd")


def parse_overrides(extra: list[str]) -> dict[str, str]:
    """Turn ``--a.b=1``, ``a.b=1`` or ``--a.b 1`` tokens into a dict."""
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        body = tok[2:] if tok.startswith("--") else tok
        if "=" in body:
            k, v = body.split("=", 1)
        elif tok.startswith("--") and i + 1 < len(extra) and not extra[i + 1].startswith("--"):
            k, v = body, extra[i + 1]
            i += 1
        else:
            raise ConfigError(f"cannot parse override {tok!r}; use --key=value")
        out[k] = v
        i += 1
    return out


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedcd", description="FedCD / FedAvg federated learning simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "run one simulation"),
                        ("compare", "run FedCD and FedAvg on identical shards")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config")
        sp.add_argument("--out", default=None, help="output directory (default: output.dir)")
    sp = sub.add_parser("sweep", help="one run per value of a parameter")
    sp.add_argument("config")
    sp.add_argument("--param", required=True)
    sp.add_argument("--values", required=True, help="comma-separated values")
    sp.add_argument("--jobs", type=int, default=1, help="parallel processes")
    sp.add_argument("--out", default=None)
    return p


def main(argv=None) -> int:
    args, extra = _parser().parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        cfg = apply_overrides(cfg, parse_overrides(extra))
        out = output_dir(cfg, args.out)
        if args.command == "sweep":
            if args.param not in SWEEP_PARAMS:
                raise ConfigError(f"unknown sweep parameter {args.param!r}; "
                                  f"choose from {', '.join(sorted(SWEEP_PARAMS))}")
            values = [yaml.safe_load(v) for v in args.values.split(",") if v.strip()]
            if not values:
                raise ConfigError("--values: need at least one value")
    except ConfigError as exc:
        print(f"fedcd: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"fedcd: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "run":
            s = run_experiment(cfg, out)
            print(f"{out}: final mean accuracy {s['final_mean_accuracy']:.4f}, "
                  f"alive models {s['final_alive_models']}")
        elif args.command == "compare":
            c = run_compare(cfg, out)
            print(f"{out}: FedCD - FedAvg mean accuracy {c['mean_accuracy_delta']:+.4f}, "
                  f"oscillation ratio {c['oscillation_ratio']}")
        else:
            s = run_sweep(cfg, args.param, values, out, jobs=args.jobs)
            for v, r in s["runs"].items():
                print(f"{args.param}={v}: final mean accuracy {r['final_mean_accuracy']:.4f}, "
                      f"alive models {r['final_alive_models']}")
    except ConfigError as exc:
        print(f"fedcd: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("run failed", exc_info=True)
        print(f"fedcd: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
