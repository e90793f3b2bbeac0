"""Command-line entry point: ``dipsync run|preset|validate|show-preset``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from . import config as cfgmod
from . import runner


def _common(p):
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides system.seed)")
    p.add_argument("--workers", type=int, default=1, help="worker processes across sweep points")
    p.add_argument("--out", default=None, help="output directory (overrides output.directory)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dipsync", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a YAML configuration")
    p.add_argument("config")
    _common(p)

    p = sub.add_parser("preset", help="run a named preset")
    p.add_argument("name", choices=sorted(cfgmod.PRESETS))
    _common(p)

    p = sub.add_parser("show-preset", help="print a preset as YAML")
    p.add_argument("name", choices=sorted(cfgmod.PRESETS))

    p = sub.add_parser("validate", help="cross-check two engines on a small system")
    p.add_argument("kind", choices=["exact-symmetric", "exact-cumulant", "jump-exact"])
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    return ap


def _report(rec) -> int:
    print(f"{len(rec.points)} point(s), {rec.n_failed} failed, {rec.wall_time:.1f} s -> {rec.out_dir}")
    for p in rec.points:
        if not p.ok:
            print(f"  point {p.index} {p.params}: {p.row.get('error')}", file=sys.stderr)
    return 1 if rec.n_failed else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "show-preset":
            print(cfgmod.dumps(cfgmod.preset(args.name)), end="")
            return 0
        if args.command == "validate":
            res = runner.validate_cross_engine(args.kind, args.n, args.seed)
            print(json.dumps(res, indent=2))
            return 0 if res["passed"] else 1
        cfg = cfgmod.load(args.config) if args.command == "run" else cfgmod.preset(args.name)
        rec = runner.run(cfg, seed=args.seed, workers=args.workers, out_dir=args.out)
        return _report(rec)
    except cfgmod.ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
