"""Command-line front end: gen, tree-stats, compress, matvec, commsim, verify.

Every subcommand is deterministic given its flags and seed.  Exit codes:
0 success, 2 usage/configuration error, 3 precondition or guard
violation, 4 internal invariant failure.
"""
from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import __version__
from .commsim import (
    CSV_HEADER,
    MODES,
    fit_scaling,
    run_comm_experiment,
    write_reports_csv,
)
from .errors import (
    ConfigurationError,
    OracleScaleError,
    PartitionError,
    PrecisionLimitError,
)
from .geometry import (
    DistributionSpec,
    generate,
    load_binary,
    load_csv,
    save_binary,
    save_csv,
)
from .h2 import compress, flop_report, matvec, storage_report
from .h2io import load_h2, save_h2
from .kernels import KernelSpec, dense_matrix, oracle_limit
from .tree import balance_2to1, build_tree, depth_stats

DIST_ALIASES = {
    "random": "random-cube",
    "random-cube": "random-cube",
    "surface": "sphere-surface",
    "sphere-surface": "sphere-surface",
    "plummer": "plummer",
}

EXIT_USAGE = 2
EXIT_GUARD = 3
EXIT_INTERNAL = 4


def _dist_kind(name: str) -> str:
    try:
        return DIST_ALIASES[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown distribution {name!r}; expected one of {sorted(DIST_ALIASES)}"
        ) from None


def _json_dump(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path is None or path == "-":
        print(text)
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def cmd_gen(args) -> int:
    spec = DistributionSpec(_dist_kind(args.dist), args.n, args.seed)
    particles = generate(spec)
    if args.format == "bin":
        save_binary(particles, args.out)
    else:
        save_csv(particles, args.out)
    if args.summary:
        _json_dump(
            {
                "config": {
                    "dist": spec.kind,
                    "n": spec.n,
                    "seed": spec.seed,
                    "format": args.format,
                    "out": args.out,
                    "format_version": 1,
                }
            },
            args.summary,
        )
    return 0


def cmd_tree_stats(args) -> int:
    n_values = [int(v) for v in args.n_values.split(",")]
    dists = [_dist_kind(d) for d in args.dists.split(",")]
    lines = ["distribution,n,depth"]
    for kind in dists:
        spec = DistributionSpec(kind, n_values[0], args.seed)
        for n, depth in depth_stats(spec, n_values, args.leaf_capacity):
            lines.append(f"{kind},{n},{depth}")
    text = "\n".join(lines) + "\n"
    if args.out is None or args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w") as fh:
            fh.write(text)
    return 0


def _load_particles(path):
    if path.endswith(".bin"):
        return load_binary(path)
    return load_csv(path)


def cmd_compress(args) -> int:
    if args.infile:
        particles = _load_particles(args.infile)
        kind = "file"
    else:
        kind = _dist_kind(args.dist)
        particles = generate(DistributionSpec(kind, args.n, args.seed))
    kernel = KernelSpec(args.kernel, regularization=args.delta, sigma=args.sigma)
    t0 = time.time()
    tree = build_tree(particles, args.leaf_capacity)
    if args.balance:
        tree = balance_2to1(tree)
    t_tree = time.time() - t0
    t0 = time.time()
    h2 = compress(tree, kernel, eps=args.eps, max_rank=args.max_rank, eta=args.eta)
    t_compress = time.time() - t0
    if args.out:
        save_h2(h2, args.out)
    report = {
        "config": {
            "source": args.infile or kind,
            "n": h2.n,
            "seed": args.seed,
            "kernel": kernel.kind,
            "delta": kernel.regularization,
            "sigma": kernel.sigma,
            "eps": args.eps,
            "eta": args.eta,
            "max_rank": args.max_rank,
            "leaf_capacity": args.leaf_capacity,
            "balance": args.balance,
            "format_version": 1,
        },
        "summary": h2.summary(),
        "timings": {"tree_s": t_tree, "compress_s": t_compress},
    }
    _json_dump(report, args.summary)
    return 0


def cmd_matvec(args) -> int:
    h2 = load_h2(args.matrix)
    n = h2.n
    rng = np.random.Generator(np.random.PCG64(args.seed))
    if args.x:
        x = np.loadtxt(args.x, delimiter=",")
        if x.shape != (n,):
            raise ConfigurationError(f"vector length {x.shape} does not match N={n}")
    else:
        x = rng.standard_normal(n)
    t0 = time.time()
    y = matvec(h2, x)
    t_mv = time.time() - t0
    report = {
        "config": {
            "matrix": args.matrix,
            "n": n,
            "seed": args.seed,
            "oracle": args.oracle,
            "deterministic": args.deterministic,
            "format_version": 1,
        },
        "flops": flop_report(h2),
        "storage": storage_report(h2),
        "timings": {"matvec_s": t_mv},
    }
    if args.oracle:
        if n > oracle_limit():
            raise OracleScaleError(
                f"dense oracle refused for N={n} > {oracle_limit()}; "
                "pass --no-oracle or raise H2FMM_ORACLE_MAX"
            )
        t0 = time.time()
        ref = dense_matrix(h2.octree.particles, h2.kernel) @ x[h2.octree.order]
        y_ref = np.zeros(n)
        y_ref[h2.octree.order] = ref
        report["timings"]["oracle_s"] = time.time() - t0
        report["rel_error"] = float(
            np.linalg.norm(y - y_ref) / max(np.linalg.norm(y_ref), 1e-300)
        )
    if args.out:
        with open(args.out, "w") as fh:
            fh.writelines(f"{float(v)!r}\n" for v in y)
    _json_dump(report, args.summary)
    return 0


def cmd_commsim(args) -> int:
    kind = _dist_kind(args.dist)
    P_values = [int(v) for v in args.P.split(",")]
    NP_values = [int(v) for v in args.n_per_p.split(",")]
    spec = DistributionSpec(kind, max(NP_values), args.seed)
    reports = run_comm_experiment(
        spec,
        P_values,
        NP_values,
        mode=args.mode,
        model=args.model,
        counting=args.counting,
        leaf_capacity=args.leaf_capacity,
        tree_leaf_capacity=args.tree_leaf_capacity,
    )
    for rep in reports:
        rep.check_conservation()
    if args.out:
        write_reports_csv(reports, args.out)
    else:
        sys.stdout.write(CSV_HEADER + "\n")
        for rep in reports:
            for row in rep.rows():
                sys.stdout.write(",".join(str(v) for v in row) + "\n")
    fits = {}
    if args.model == "hier" and len(reports) >= 4:
        xs_p = [rep.P for rep in reports]
        xs_np = [rep.n_per_p for rep in reports]
        if len(set(xs_p)) == len(xs_p) and len(set(xs_np)) == 1:
            series = [(rep.P, rep.global_volume_max()) for rep in reports]
            if all(v > 0 for _, v in series):
                f = fit_scaling(series, log_base=8.0)
                fits["global_volume_vs_P"] = {
                    "log8_slope": f.log_slope,
                    "log_r2": f.log_r2,
                    "power_exponent": f.exponent,
                }
            for name in ("global-m2m", "global-m2l"):
                series = [(rep.P, rep.phase(name).max_recv) for rep in reports]
                if all(v > 0 for _, v in series):
                    f = fit_scaling(series, log_base=8.0)
                    fits[name] = {"log8_slope": f.log_slope, "log_r2": f.log_r2}
        elif len(set(xs_np)) == len(xs_np) and len(set(xs_p)) == 1:
            for name in ("local-m2l", "local-p2p"):
                series = [(rep.n_per_p, rep.phase(name).max_recv) for rep in reports]
                if all(v > 0 for _, v in series):
                    f = fit_scaling(series, log_base=8.0)
                    fits[name] = {"power_exponent": f.exponent, "power_r2": f.exponent_r2}
    summary = {
        "config": {
            "dist": kind,
            "P": P_values,
            "n_per_p": NP_values,
            "mode": args.mode,
            "model": args.model,
            "counting": args.counting,
            "seed": args.seed,
            "format_version": 1,
        },
        "fits": fits,
    }
    _json_dump(summary, args.summary)
    return 0


def cmd_verify(args) -> int:
    import subprocess
    from pathlib import Path

    tests = Path(__file__).resolve().parents[2] / "tests" / "test_acceptance.py"
    if not tests.exists():
        tests = Path.cwd() / "tests" / "test_acceptance.py"
    if not tests.exists():
        print("cannot locate tests/test_acceptance.py; run from the repository root")
        return EXIT_GUARD
    cmd = [sys.executable, "-m", "pytest", str(tests), "-v", "-s"]
    if args.k:
        cmd += ["-k", args.k]
    return subprocess.call(cmd)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="h2fmm",
        description="Octrees, H2 kernel-matrix compression, and communication counting",
    )
    parser.add_argument("--version", action="version", version=f"h2fmm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a particle distribution file")
    p.add_argument("--dist", required=True, help="random | surface | plummer")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "bin"), default="csv")
    p.add_argument("--summary", default=None, help="optional config-metadata JSON")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("tree-stats", help="depth table over an n sweep")
    p.add_argument("--dists", default="random,surface,plummer")
    p.add_argument("--n-values", required=True, help="comma-separated ascending counts")
    p.add_argument("--leaf-capacity", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_tree_stats)

    p = sub.add_parser("compress", help="build an H2 matrix and write the container")
    p.add_argument("--in", dest="infile", default=None, help="particle CSV or .bin file")
    p.add_argument("--dist", default="random")
    p.add_argument("--n", type=int, default=2048)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kernel", default="laplace3d")
    p.add_argument("--delta", type=float, default=0.0, help="kernel regularization")
    p.add_argument("--sigma", type=float, default=1.0, help="gaussian width")
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--eta", type=float, default=1.75)
    p.add_argument("--max-rank", type=int, default=None)
    p.add_argument("--leaf-capacity", type=int, default=16)
    p.add_argument("--balance", action=argparse.BooleanOptionalAction, default=False)
    p.add_argument("--out", default=None, help="H2 container path")
    p.add_argument("--summary", default=None, help="JSON report path (default stdout)")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("matvec", help="apply a stored H2 matrix to a vector")
    p.add_argument("--matrix", required=True)
    p.add_argument("--x", default=None, help="CSV vector; default seeded random")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oracle", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--out", default=None, help="output vector CSV")
    p.add_argument("--summary", default=None)
    p.set_defaults(func=cmd_matvec)

    p = sub.add_parser("commsim", help="communication-count sweeps and fits")
    p.add_argument("--dist", default="random")
    p.add_argument("--P", required=True, help="comma-separated process counts")
    p.add_argument("--n-per-p", required=True, help="comma-separated N/P values")
    p.add_argument("--mode", choices=MODES, default="periodic")
    p.add_argument("--model", choices=("hier", "direct"), default="hier")
    p.add_argument("--counting", choices=("auto", "uniform", "general"), default="auto")
    p.add_argument("--leaf-capacity", type=int, default=1)
    p.add_argument("--tree-leaf-capacity", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="CSV path (default stdout)")
    p.add_argument("--summary", default=None, help="fit JSON path (default stdout)")
    p.set_defaults(func=cmd_commsim)

    p = sub.add_parser("verify", help="run the acceptance test suite")
    p.add_argument("-k", default=None, help="pytest -k expression")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OracleScaleError, PrecisionLimitError, PartitionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except AssertionError as exc:
        print(f"internal invariant failure: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
