"""Command line front end: ``bsb <subcommand>``.

Exit codes: 0 success, 1 invalid input, 2 non-convergence.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io as bio
from . import ou_gaussian as og
from .scenario import ScenarioError, build_problem, load_scenario, parse_scenario
from .solver import InfeasibleError, entropy_two_ways

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED = 0, 1, 2


def thread_cap() -> int:
    try:
        return max(1, int(os.environ.get("BSB_THREADS", "1")))
    except ValueError:
        return 1


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_solve_artifacts(result, out: Path, name: str):
    chain = result.problem.chain
    x = result.problem.grid.points
    times = chain.times
    bio.write_rows(out / "marginals.csv", ["k", "t", "z", "x", "value"],
                   ((k, times[k], z, x[z], v) for k, row in enumerate(result.marginals) for z, v in enumerate(row)))
    h = result.hjb
    bio.write_rows(out / "psi.csv", ["x0", "k", "z", "value"],
                   ((x0, k, z, v) for x0, f in h.psi.items() for k, z, v in bio.field_rows(f.values)))
    bio.write_rows(out / "pressure.csv", ["k", "z", "value"], bio.field_rows(h.pressure.values, offset=1))
    bio.write_rows(out / "residual.csv", ["x0", "k", "z", "value"],
                   ((x0, k, z, v) for x0, r in h.residual.items() for k, z, v in bio.field_rows(r, offset=1)))
    direct, chain_rule = entropy_two_ways(chain, result.potentials)
    report = {
        "scenario": name,
        "solve": result.report.to_dict(),
        "hjb": h.summary,
        "entropy_check": {"direct": direct, "chain_rule": chain_rule},
    }
    bio.write_json(out / "report.json", report)
    return report


def cmd_solve(args) -> int:
    from .pipeline import run_problem

    try:
        sc = load_scenario(args.scenario)
        if args.tol is not None:
            sc.tolerances["eps"] = args.tol
        if args.seed is not None:
            sc.seed = args.seed
        problem = build_problem(sc)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            result = run_problem(problem, float(sc.tolerances["eps"]), int(sc.tolerances["max_iter"]))
    except (InfeasibleError, ScenarioError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    report = write_solve_artifacts(result, _out_dir(args), sc.name)
    print(f"entropy: {report['solve']['entropy']:.12g}")
    print(f"constraint_gap: {report['solve']['constraint_gap']:.3e}")
    if not result.report.converged:
        print("converged: false", file=sys.stderr)
        return EXIT_NONCONVERGED
    print("converged: true")
    return EXIT_OK


def cmd_ou_verify(args) -> int:
    try:
        spec = og.BridgeMixtureSpec(rho=args.rho, T=args.T)
        tol = args.tol if args.tol is not None else 1e-10
        ok = og.verify_invariance(spec, tol)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    dev = og.max_invariance_deviation(spec, 101)
    print(f"invariant: {str(ok).lower()}")
    print(f"max_deviation: {dev:.3e}")
    if args.out:
        bio.write_json(_out_dir(args) / "ou_verify.json",
                       {"rho": args.rho, "T": args.T, "tol": tol, "invariant": ok, "max_deviation": dev})
    return EXIT_OK


def _grid(lo, hi, step):
    k0 = math.ceil(lo / step - 1e-9)
    k1 = math.floor(hi / step + 1e-9)
    return [round(k * step, 12) for k in range(k0, k1 + 1)]


def feasibility_rows(r, s_values, c_values, workers=1):
    def cell(sc):
        s, c = sc
        lam = float(og.toeplitz_eigenvalues(og.ToeplitzCov(r, s, c))[0])
        return (r, s, c, lam, lam > 0)

    cells = [(s, c) for s in s_values for c in c_values]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(cell, cells))


def cmd_feasibility(args) -> int:
    if not abs(args.r) < 1 or args.step <= 0:
        print("error: need |r| < 1 and a positive step", file=sys.stderr)
        return EXIT_INVALID
    vals = [v for v in _grid(-1.0, 1.0, args.step) if abs(v) < 1]
    rows = feasibility_rows(args.r, vals, vals, thread_cap())
    out = _out_dir(args)
    bio.write_rows(out / "feasibility.csv", ["r", "s", "c", "min_eigenvalue", "feasible"],
                   ((r, s, c, lam, str(f).lower()) for r, s, c, lam, f in rows))
    lo, hi = og.s_window(args.r)
    print(f"admissible s window: ({lo:.9f}, {hi:.9f})")
    print(f"infimal c: {og.infimal_c(args.r):.9f}")
    return EXIT_OK


def cmd_certificate(args) -> int:
    if not math.isfinite(args.c):
        print("error: c must be finite", file=sys.stderr)
        return EXIT_INVALID
    cert = og.existence_certificate(args.c)
    d = cert.to_dict()
    if args.out:
        bio.write_json(_out_dir(args) / "certificate.json", d)
    print(json.dumps(d, indent=2, sort_keys=True))
    print(f"feasible: {str(cert.feasible).lower()}")
    return EXIT_OK


def cmd_sample_bridge(args) -> int:
    try:
        p = og.OUBridgeParams(args.x, args.y, args.T)
        if args.times:
            times = [float(t) for t in args.times.split(",")]
        else:
            times = np.linspace(0.0, args.T, args.n_times).tolist()
        path = og.sample_bridge(p, times, args.seed if args.seed is not None else 0)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    bio.write_rows(_out_dir(args) / "bridge.csv", ["t", "value"], zip(times, path))
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .pipeline import run_problem

    checks = {}
    res = run_problem(build_problem(parse_scenario({"preset": "trivial"})))
    checks["trivial entropy"] = abs(res.report.entropy) <= 1e-10
    checks["invariance rho=e^-1"] = og.verify_invariance(og.BridgeMixtureSpec(math.exp(-1), 1.0), 1e-10)
    checks["certificate c=0.9"] = og.existence_certificate(0.9).feasible
    checks["certificate c=-0.9 infeasible"] = not og.existence_certificate(-0.9).feasible
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return EXIT_OK if all(checks.values()) else EXIT_INVALID


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bsb", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, out_default="."):
        p.add_argument("--out", default=out_default)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--tol", type=float, default=None)

    p = sub.add_parser("solve", help="solve a scenario and write CSV/JSON artifacts")
    p.add_argument("--scenario", required=True)
    common(p, "out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("ou-verify", help="check stationarity of an OU bridge mixture")
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--T", type=float, default=1.0)
    common(p, None)
    p.set_defaults(func=cmd_ou_verify)

    p = sub.add_parser("feasibility", help="sweep (s, c) for positive definiteness of C(r, s, c)")
    p.add_argument("--r", type=float, default=og.R_THIRD)
    p.add_argument("--step", type=float, default=0.05)
    common(p, "out")
    p.set_defaults(func=cmd_feasibility)

    p = sub.add_parser("certificate", help="existence certificate for pi = gamma_c")
    p.add_argument("--c", type=float, required=True)
    common(p, None)
    p.set_defaults(func=cmd_certificate)

    p = sub.add_parser("sample-bridge", help="sample an OU bridge path")
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--y", type=float, required=True)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--n-times", type=int, default=11)
    p.add_argument("--times", default=None, help="comma separated sorted times")
    common(p, "out")
    p.set_defaults(func=cmd_sample_bridge)

    p = sub.add_parser("selftest", help="quick end-to-end checks")
    common(p, None)
    p.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
