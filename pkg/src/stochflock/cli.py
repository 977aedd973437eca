"""Command line entry point: ``stochflock simulate | list-scenarios | check``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .acceptance import CHECKS, run_all
from .ensemble import CHUNK, run_ensemble, run_paths
from .errors import StochFlockError
from .report import FORMATS, dump_path_csv, emit_report
from .scenarios import builtin_scenarios, load_scenario


def _formats(text: str):
    out = [f.strip() for f in text.split(",") if f.strip()]
    bad = [f for f in out if f not in FORMATS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown format(s): {', '.join(bad)}")
    return out


def cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario).with_overrides(args.paths, args.seed)
    stats, manifest = run_ensemble(sc, workers=args.workers)
    out = Path(args.out)
    written = emit_report(stats, manifest, out, args.format)
    if args.dump_paths:
        folder = out / "paths"
        folder.mkdir(parents=True, exist_ok=True)
        for start in range(0, sc.n_paths, CHUNK):
            for r in run_paths(sc, start, min(start + CHUNK, sc.n_paths)):
                written.append(dump_path_csv(r, folder / f"path_{r.index:06d}.csv"))
    print(f"{sc.name}: {stats.n_paths} paths in {manifest.wall_time:.1f} s "
          f"({args.workers} worker(s))")
    for path in written[:8]:
        print(f"  wrote {path}")
    if len(written) > 8:
        print(f"  ... and {len(written) - 8} more files")
    return 0


def cmd_list(args) -> int:
    for sc in builtin_scenarios():
        print(f"{sc.name:20s} N={sc.cfg.n} d={sc.cfg.d} kernel={sc.cfg.kernel.spec()} "
              f"noise={sc.cfg.noise.spec()} paths={sc.n_paths}")
        if sc.description:
            print(f"{'':20s} {sc.description}")
    return 0


def cmd_check(args) -> int:
    names = args.only.split(",") if args.only else None
    failed = 0
    for name in names or CHECKS:
        if name not in CHECKS:
            print(f"unknown check {name!r}; choose from {', '.join(CHECKS)}", file=sys.stderr)
            return 2
    for line in run_all(names):
        failed += not line.passed
        print(line.line(), flush=True)
    print(f"{'all criteria passed' if not failed else f'{failed} criteria failed'}")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stochflock",
        description="Monte Carlo toolkit for the stochastic singular Cucker-Smale model.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a scenario ensemble and write reports")
    sim.add_argument("--scenario", required=True, help="built-in name (e.g. S1) or file")
    sim.add_argument("--paths", type=int, default=None, help="override the path count")
    sim.add_argument("--seed", type=int, default=None, help="override the master seed")
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--dump-paths", action="store_true",
                     help="also write one trajectory CSV per path")
    sim.add_argument("--format", type=_formats, default=list(FORMATS),
                     help="comma separated subset of csv,json,svg")
    sim.set_defaults(func=cmd_simulate)

    ls = sub.add_parser("list-scenarios", help="list the built-in scenarios")
    ls.set_defaults(func=cmd_list)

    chk = sub.add_parser("check", help="run the acceptance suite")
    chk.add_argument("--only", default=None,
                     help=f"comma separated subset of {','.join(CHECKS)}")
    chk.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StochFlockError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
