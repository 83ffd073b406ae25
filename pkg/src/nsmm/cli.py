"""Command-line interface: ``nsmm fit``, ``nsmm simulate``, ``nsmm diagnose``.

Exit codes for ``fit``: 0 converged, 2 stopped at the iteration cap,
1 on any error (bad flags, unreadable files, violated invariants).
``diagnose`` exits 0 when every check passes and 1 otherwise.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .data import (
    ModelDocument,
    SyntheticSpec,
    auto_domain,
    load_csv,
    silverman_bandwidth,
    simulate,
    write_csv,
    write_trace,
)
from .diagnostics import run_diagnostics
from .engine import FitConfig, fit
from .errors import DataError, InvariantViolation, SinkhornError
from .grid import KERNEL_FAMILIES, build_grid, build_kernel
from .model import bin_dataset

log = logging.getLogger("nsmm")


class _Parser(argparse.ArgumentParser):
    # usage errors share exit code 1 with other failures; 2 means "hit max-iter"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return value


def _positive_floats(text: str) -> list[float]:
    try:
        values = [float(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected positive number(s), got {text!r}") from None
    if not all(v > 0 for v in values):
        raise argparse.ArgumentTypeError(f"expected positive number(s), got {text!r}")
    return values


def _positive_float(text: str) -> float:
    values = _positive_floats(text)
    if len(values) != 1:
        raise argparse.ArgumentTypeError(f"expected one positive number, got {text!r}")
    return values[0]


def _interval(text: str):
    if text == "auto":
        return "auto"
    try:
        a, b = (float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'a,b' or 'auto', got {text!r}") from None
    if not a < b:
        raise argparse.ArgumentTypeError(f"domain needs a < b, got {text!r}")
    return (a, b)


def _per_coordinate(values, r: int, what: str):
    if len(values) == 1:
        return list(values) * r
    if len(values) != r:
        raise DataError(f"{what}: got {len(values)} values for {r} coordinates")
    return list(values)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nsmm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a conditional-independence mixture to a CSV file")
    p.add_argument("--data", required=True, help="CSV with a header row and one column per coordinate")
    p.add_argument("--components", required=True, type=_positive_int, help="number of mixture components m")
    bw = p.add_mutually_exclusive_group()
    bw.add_argument("--bandwidth", type=_positive_floats,
                    help="kernel bandwidth; one value or one per coordinate (comma separated)")
    bw.add_argument("--bandwidth-rule", choices=["silverman"], default="silverman",
                    help="plug-in rule used when --bandwidth is absent")
    p.add_argument("--grid-size", type=_positive_int, default=128, help="cells per coordinate (default 128)")
    p.add_argument("--domain", type=_interval, action="append",
                   help="'a,b' for all coordinates, repeat once per coordinate, or 'auto' (default)")
    p.add_argument("--kernel", choices=KERNEL_FAMILIES, default="gaussian")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iter", type=_positive_int, default=500)
    p.add_argument("--tol", type=_positive_float, default=1e-9, help="stop when the objective decrease is below this")
    p.add_argument("--tol-fixed-point", type=_positive_float, default=1e-8,
                   help="stop when max_j ||e_j' - e_j||_1 is below this")
    p.add_argument("--parallel", action="store_true", help="use the threaded update path")
    p.add_argument("--out", required=True, help="model JSON output path")
    p.add_argument("--trace", help="optional per-iteration trace CSV")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="draw a synthetic sample from a JSON spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--labels", help="optional CSV of true component labels")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("diagnose", help="check a fitted model against its data")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_diagnose)
    return parser


def cmd_fit(args) -> int:
    raw = load_csv(args.data)
    n, r = raw.shape
    if args.bandwidth is not None:
        h = _per_coordinate(args.bandwidth, r, "--bandwidth")
    else:
        h = [silverman_bandwidth(raw[:, k]) for k in range(r)]
    domains = _per_coordinate(args.domain or ["auto"], r, "--domain")
    grids = []
    for k in range(r):
        a, b = auto_domain(raw[:, k], h[k]) if domains[k] == "auto" else domains[k]
        grids.append(build_grid(a, b, args.grid_size))
    kernels = [build_kernel(g, hk, args.kernel) for g, hk in zip(grids, h)]
    data = bin_dataset(raw, grids)
    config = FitConfig(m=args.components, max_iter=args.max_iter, tol_objective=args.tol,
                       tol_fixed_point=args.tol_fixed_point, seed=args.seed, parallel=args.parallel)
    log.info("fitting m=%d to n=%d, r=%d on G=%d grids", config.m, n, r, args.grid_size)
    result = fit(data, config, kernels)

    meta = {
        "seed": config.seed,
        "iterations": result.iterations,
        "reason": result.reason,
        "converged": result.converged,
        "path": result.path,
        "m": config.m,
        "n": n,
        "r": r,
        "max_iter": config.max_iter,
        "tol_objective": config.tol_objective,
        "tol_fixed_point": config.tol_fixed_point,
    }
    doc = ModelDocument.from_fit(result.state, kernels, meta, result.trace[-1].as_dict())
    doc.save(args.out)
    if args.trace:
        write_trace(args.trace, result.trace)
    print(f"{result.reason} after {result.iterations} iterations; objective {result.objective:.12g}")
    print("lambda: " + " ".join(f"{x:.6f}" for x in result.state.lam))
    return 0 if result.converged else 2


def cmd_simulate(args) -> int:
    spec = SyntheticSpec.from_json(args.spec)
    raw, labels = simulate(spec)
    write_csv(args.out, raw)
    if args.labels:
        write_csv(args.labels, labels[:, None], header=["label"])
    print(f"wrote {spec.n} observations with r={spec.r} to {args.out}")
    return 0


def cmd_diagnose(args) -> int:
    doc = ModelDocument.load(args.model)
    kernels = doc.build_kernels()
    raw = load_csv(args.data)
    data = bin_dataset(raw, [k.grid for k in kernels])
    recorded = doc.final_report.get("objective")
    results = run_diagnostics(doc.to_state(), data, kernels, recorded_objective=recorded)
    for res in results:
        print(res.line())
    return 0 if all(res.passed for res in results) else 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"nsmm: invariant violated ({exc.lemma}): {exc}", file=sys.stderr)
    except (DataError, SinkhornError, ValueError, OSError) as exc:
        print(f"nsmm: error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
