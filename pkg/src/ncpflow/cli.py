"""Command-line interface: run/validate scenarios, exercise the dense oracles."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import bench
from .newton import StepFailed
from .sparse import (CsrMatrix, dense_lu_solve, read_matrix_market, spmv,
                     triple_product)


def _parse_mesh(text):
    try:
        nx, ny, nz = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError("mesh must look like NXxNYxNZ, e.g. 200x10x1")
    return nx, ny, nz


def _cmd_run(args):
    try:
        cfg = bench.load_config(args.config)
    except (OSError, bench.ConfigError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    if args.precond:
        if args.precond.startswith("ilu"):
            cfg.preconditioner = "ilu"
            if ":" in args.precond:
                cfg.ilu_level = int(args.precond.split(":", 1)[1])
        else:
            cfg.preconditioner = args.precond
    if args.mesh:
        nx, ny, nz = args.mesh
        cfg.mesh = (nx, ny, nz) + cfg.mesh[3:]
    if args.out:
        cfg.out_dir = args.out
    if args.dump_matrices:
        cfg.dump_matrices = True

    try:
        report = bench.run_scenario(cfg)
    except StepFailed as err:
        print(f"run failed: {err}", file=sys.stderr)
        return 3
    print(f"{cfg.name}: {len(report.steps)} steps, NS={report.total_ns}, "
          f"LS={report.total_ls}, LS/NS={report.ls_per_ns:.1f}, "
          f"wall={report.wall_total:.1f}s")
    if cfg.out_dir:
        print(f"reports written to {cfg.out_dir}")
    return 0


def _cmd_validate(args):
    try:
        cfg = bench.load_config(args.config)
    except (OSError, bench.ConfigError) as err:
        print(f"invalid: {err}", file=sys.stderr)
        return 2
    nx, ny, nz = cfg.mesh[:3]
    print(f"ok: scenario '{cfg.name}' ({cfg.kind}), mesh {nx}x{ny}x{nz}, "
          f"{len(cfg.schedule)} steps, preconditioner {cfg.preconditioner}")
    return 0


def _oracle_checks(a: CsrMatrix, rng, label):
    """Compare the sparse kernels against dense numpy on one matrix."""
    ok = True
    dense = a.to_dense()
    x = rng.standard_normal(a.ncols)
    err = np.max(np.abs(spmv(a, x) - dense @ x)) / max(np.max(np.abs(dense @ x)), 1e-30)
    ok &= _report_line(f"{label}: spmv vs dense", err, 1e-13)

    if a.nrows == a.ncols:
        n = a.nrows
        nc = max(1, n // 2)
        r = CsrMatrix.from_dense(rng.standard_normal((nc, n)))
        p = CsrMatrix.from_dense(rng.standard_normal((n, nc)))
        got = triple_product(r, a, p).to_dense()
        want = r.to_dense() @ dense @ p.to_dense()
        err = np.max(np.abs(got - want)) / max(np.max(np.abs(want)), 1e-30)
        ok &= _report_line(f"{label}: triple product vs dense", err, 1e-12)

        well_posed = dense + n * np.eye(n)
        b = rng.standard_normal(n)
        sol = dense_lu_solve(well_posed, b)
        err = np.max(np.abs(well_posed @ sol - b)) / max(np.max(np.abs(b)), 1e-30)
        ok &= _report_line(f"{label}: dense LU residual", err, 1e-10)
    return ok


def _report_line(what, err, tol):
    status = "pass" if err < tol else "FAIL"
    print(f"{status}: {what} (rel err {err:.2e}, tol {tol:.0e})")
    return err < tol


def _cmd_oracle(args):
    rng = np.random.default_rng(args.seed)
    ok = True
    if args.fixture:
        try:
            a = read_matrix_market(args.fixture)
        except (OSError, ValueError) as err:
            print(f"cannot read fixture: {err}", file=sys.stderr)
            return 2
        ok &= _oracle_checks(a, rng, args.fixture)
    for n in (10, 25, 50):
        dense = rng.standard_normal((n, n)) * (rng.random((n, n)) < 0.2)
        ok &= _oracle_checks(CsrMatrix.from_dense(dense), rng, f"random {n}x{n}")
    return 0 if ok else 1


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="ncpflow",
        description="Two-phase flow benchmarks with MGR-preconditioned GMRES")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario config")
    p_run.add_argument("config")
    p_run.add_argument("--precond", choices=None, default=None,
                       help="override preconditioner: mgr, ilu:<k>, none, cpr")
    p_run.add_argument("--mesh", type=_parse_mesh, default=None,
                       help="override mesh, e.g. 400x20x1")
    p_run.add_argument("--out", default=None, help="override output directory")
    p_run.add_argument("--dump-matrices", action="store_true",
                       help="dump every Newton Jacobian in Matrix Market format")
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="parse and validate a config")
    p_val.add_argument("config")
    p_val.set_defaults(func=_cmd_validate)

    p_or = sub.add_parser("oracle", help="run dense-oracle property checks")
    p_or.add_argument("fixture", nargs="?", default=None,
                      help="optional Matrix Market file to check")
    p_or.add_argument("--seed", type=int, default=0,
                      help="seed for generated fixtures")
    p_or.set_defaults(func=_cmd_oracle)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
