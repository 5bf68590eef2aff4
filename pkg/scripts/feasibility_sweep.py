"""Map the (s, c) region where C(r, s, c) is positive definite, and certify a c-grid.

    python3 scripts/feasibility_sweep.py --step 0.01 --out results/
"""

import argparse
import os
from pathlib import Path

import numpy as np

from bsbridge import io as bio
from bsbridge import ou_gaussian as og
from bsbridge.cli import feasibility_rows, thread_cap


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--r", type=float, default=og.R_THIRD)
    ap.add_argument("--step", type=float, default=0.01)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    out = Path(args.out)

    vals = [round(v, 12) for v in np.arange(-1 + args.step, 1, args.step)]
    rows = feasibility_rows(args.r, vals, vals, thread_cap())
    bio.write_rows(out / "feasibility.csv", ["r", "s", "c", "min_eigenvalue", "feasible"],
                   ((r, s, c, lam, str(f).lower()) for r, s, c, lam, f in rows))

    cert_rows = []
    for c in np.round(np.arange(-0.95, 1.0, 0.05), 10):
        cert = og.existence_certificate(float(c), args.r)
        H = cert.entropy_terms.get("total", float("nan"))
        cert_rows.append((float(c), cert.s if cert.s is not None else "", H, str(cert.feasible).lower()))
    bio.write_rows(out / "certificates.csv", ["c", "s", "entropy", "feasible"], cert_rows)

    feasible = [c for c, _, _, f in cert_rows if f == "true"]
    print(f"r = {args.r:.9f}, s window {og.s_window(args.r)}, infimal c {og.infimal_c(args.r):.9f}")
    print(f"smallest certified c on the grid: {min(feasible):.2f}; cells: {len(rows)}; threads: {thread_cap()}")
    print(f"wrote {out / 'feasibility.csv'} and {out / 'certificates.csv'} (BSB_THREADS={os.environ.get('BSB_THREADS', '1')})")


if __name__ == "__main__":
    main()
