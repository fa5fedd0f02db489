"""Command line driver: ``run`` a tracking case or ``verify`` the property suites."""

import argparse
import json
import logging
import os
import sys

import numpy as np

from .cases import CASES, diagnostics, get_case
from .sqp import TRACE_COLUMNS, SqpConfig, solve
from .xdgspace import sample

log = logging.getLogger(__name__)


class UsageError(Exception):
    pass


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_config(path):
    """``key = value`` lines (``#`` comments) holding solver overrides."""
    out = {}
    valid = set(SqpConfig.__dataclass_fields__)
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{n}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in valid:
                raise ValueError(f"{path}:{n}: unknown setting {key!r}")
            out[key] = json.loads(val.replace("(", "[").replace(")", "]")) \
                if val[:1] in "[(" else _number(val)
    return out


def _number(text):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        return float(text)


# -- snapshots --------------------------------------------------------------

def field_rows(case, it, resolution):
    """Sampled field on a ``resolution``-times refined grid of cell-centred points."""
    x0, x1, y0, y1 = case.bounds
    nx, ny = case.nx * resolution, case.ny * resolution
    xs = x0 + (np.arange(nx) + 0.5) * (x1 - x0) / nx
    ys = y0 + (np.arange(ny) + 0.5) * (y1 - y0) / ny
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    vals = sample(it.u, it.layout, it.topo, pts)
    phi = it.ls.eval(pts[:, 0], pts[:, 1])
    return [tuple(p) + (f,) + tuple(v) for p, f, v in zip(pts, phi, vals)]


def interface_rows(case, ls, n=201):
    y = np.linspace(case.bounds[2], case.bounds[3], n)
    return list(zip(ls.height(y), y))


# -- commands ---------------------------------------------------------------

def cmd_run(args):
    np.random.seed(args.seed)
    kw = {}
    if args.nx is not None:
        kw["nx"] = args.nx
    if args.ny is not None:
        kw["ny"] = args.ny
    case = get_case(args.case, **kw)
    try:
        overrides = read_config(args.config) if args.config else {}
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if args.pmax is not None:
        overrides["P_max"] = args.pmax
    if args.agg is not None:
        overrides["agg_threshold"] = args.agg
    if args.max_iter is not None:
        overrides["max_iter"] = args.max_iter
    try:
        config = case.config.replace(**overrides)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    os.makedirs(args.out, exist_ok=True)
    m = case.law.m
    field_header = ["x", "y", "phi_s"] + [f"u{i}" for i in range(m)]

    def snapshot(k, it, row):
        if args.snapshot_every and k % args.snapshot_every == 0:
            write_csv(os.path.join(args.out, f"field_{k:03d}.csv"), field_header,
                      field_rows(case, it, args.resolution))
            write_csv(os.path.join(args.out, f"interface_{k:03d}.csv"), ["x", "y"],
                      interface_rows(case, it.ls))

    res = solve(case, config, callback=snapshot)
    write_csv(os.path.join(args.out, "trace.csv"), TRACE_COLUMNS,
              [[row[c] for c in TRACE_COLUMNS] for row in res.trace])
    with open(os.path.join(args.out, "levelset.txt"), "w") as fh:
        fh.write(res.ls.to_text())

    summary = dict(case=case.name, nx=case.nx, ny=case.ny, converged=res.converged,
                   status=res.status, iterations=res.iterations, P=res.P,
                   r_norm=res.r_norm, R_norm=res.R_norm)
    summary.update(diagnostics(case, res.ls, res.u, res.layout, res.topo))
    summary.update({f"config.{k}": v for k, v in vars(config).items()})
    summary["seed"] = args.seed
    with open(os.path.join(args.out, "summary.txt"), "w") as fh:
        for k, v in summary.items():
            fh.write(f"{k} = {_fmt(v) if not isinstance(v, tuple) else list(v)}\n")
    print(f"{case.name}: status={res.status} iterations={res.iterations} "
          f"|r|={res.r_norm:.3e} |R|={res.R_norm:.3e}")
    return 0 if res.converged else 1


def cmd_verify(args):
    from .verification import SUITES, run_suites
    if args.suite is not None and args.suite not in SUITES:
        print(f"unknown suite {args.suite!r}; choose from {sorted(SUITES)}", file=sys.stderr)
        return 2
    results = run_suites(None if args.suite is None else [args.suite], seed=args.seed)
    width = max(len(r[0]) + len(r[1]) + 1 for r in results)
    for suite, name, ok, detail in results:
        print(f"{(suite + '.' + name):<{width}}  {'PASS' if ok else 'FAIL'}  {detail}")
    failed = sum(not r[2] for r in results)
    print(f"{len(results) - failed} passed, {failed} failed")
    return 1 if failed else 0


def build_parser():
    parser = argparse.ArgumentParser(prog="xdgtrack", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="track the shock of one test case")
    run.add_argument("--case", required=True, choices=sorted(CASES))
    run.add_argument("--nx", type=int)
    run.add_argument("--ny", type=int)
    run.add_argument("--pmax", type=int, help="highest solution degree")
    run.add_argument("--agg", type=float, help="agglomeration threshold")
    run.add_argument("--max-iter", type=int)
    run.add_argument("--config", help="file of 'key = value' solver overrides")
    run.add_argument("--out", default="out")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--snapshot-every", type=int, default=1,
                     help="write field/interface files every N iterations (0 disables)")
    run.add_argument("--resolution", type=int, default=10,
                     help="field samples per cell and direction")
    run.set_defaults(func=cmd_run)

    ver = sub.add_parser("verify", help="run the property suites")
    ver.add_argument("--suite")
    ver.add_argument("--seed", type=int, default=0)
    ver.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))


if __name__ == "__main__":
    sys.exit(main())
