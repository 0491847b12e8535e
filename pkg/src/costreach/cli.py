"""Command-line front end.

Exit codes: 0 success, 2 validation error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .config import load_config, parse_number
from .errors import ConfigError, InputError, ReachError
from .grid import load_any, load_field
from .pipeline import Pipeline

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

log = logging.getLogger("costreach")


def _parse_state(text: str) -> list[float]:
    return [parse_number(x) for x in text.split(",")]


def _pipeline(args) -> Pipeline:
    return Pipeline(load_config(args.config), root=args.out)


def cmd_run(args):
    p = _pipeline(args)
    p.run()
    print(p.out / "manifest.json")


def cmd_solve(args):
    p = _pipeline(args)
    p.run(stages=("solve",), manifest_name="manifest_solve.json")
    print(p.out / "field.rchf")


def _stage(name):
    def cmd(args):
        p = _pipeline(args)
        p.run(stages=(name,), field_path=args.field, manifest_name=f"manifest_{name}.json")
        print(p.out / f"manifest_{name}.json")
    return cmd


def cmd_simulate(args):
    p = _pipeline(args)
    field = load_field(args.field) if args.field else load_field(p.out / "field.rchf")
    starts = np.array([_parse_state(s) for s in args.start])
    for path in p.simulate(field, starts, args.max_steps):
        print(path)
    p.completed.append("simulate")
    p.write_manifest("manifest_simulate.json")


def cmd_info(args):
    f = load_any(args.path)
    shape = "x".join(str(n) for n in f.grid.shape)
    print(f"kind:      {'MASK' if f.is_mask else 'FIELD'}")
    print(f"grid:      {shape}")
    for d, ax in enumerate(f.grid.axes):
        print(f"  dim {d}:  [{ax.lower:g}, {ax.upper:g}] x {ax.point_count}{' periodic' if ax.periodic else ''}")
    print(f"dt:        {f.meta.dt:g}")
    print(f"horizon:   {f.meta.horizon:g}")
    print(f"step:      {f.meta.step_index}")
    if f.is_mask:
        print(f"inside:    {int(f.data.sum())} of {f.data.size}")
    else:
        print(f"values:    [{f.data.min():.6g}, {f.data.max():.6g}]")
    print(f"problem:   {f.meta.problem_digest or '-'}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="costreach",
                                 description="Cost-limited reachable sets from one stored value field.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(name, fn, help, field=False):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("config")
        sp.add_argument("--out", default=None, help="output root (default: config 'output')")
        if field:
            sp.add_argument("--field", default=None, help="use a saved field instead of the run's own")
        sp.set_defaults(func=fn)
        return sp

    with_config("run", cmd_run, "run every configured stage")
    with_config("solve", cmd_solve, "solve and write the value field")
    with_config("extract", _stage("extract"), "write masks and contours", field=True)
    with_config("verify", _stage("verify"), "closed-loop verification", field=True)
    with_config("oracle", _stage("compare"), "brute-force oracle comparison", field=True)
    sim = with_config("simulate", cmd_simulate, "closed-loop trajectories", field=True)
    sim.add_argument("--start", action="append", required=True, help="comma-separated start state")
    sim.add_argument("--max-steps", type=int, default=None)

    info = sub.add_parser("info", help="summarize a field or mask file")
    info.add_argument("path")
    info.set_defaults(func=cmd_info)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ReachError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # stage failures from evaluators
        log.debug("unhandled", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
