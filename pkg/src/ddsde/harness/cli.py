"""Command line entry point ``ddsde``.

Exit codes: 0 when every check passes, 1 on a failed check, 2 on a
configuration or runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import EXPERIMENTS, ConfigError, load_config
from .experiments import RUNNERS
from .report import write_report

log = logging.getLogger("ddsde")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddsde", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML configuration file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed-override", type=int, default=None,
                       help="replace run.seeds by this single seed")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for independent cells")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        cfg = load_config(args.config, args.seed_override, kind=args.command)
        runner = RUNNERS[args.command]
        if args.command == "mfl-sweep":
            result = runner(cfg, threads=args.threads, out_dir=args.out)
        else:
            result = runner(cfg, threads=args.threads)
        path = write_report(result, args.out, cfg.config_hash)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return 2
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to exit code 2
        log.error("runtime error: %s: %s", type(exc).__name__, exc)
        return 2
    log.info("%s: %s (report: %s)", args.command, "PASS" if result.passed else "FAIL", path)
    return 0 if result.passed else 1


if __name__ == "__main__":
    sys.exit(main())
