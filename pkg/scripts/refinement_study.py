"""HJB residual of the OU / gamma_c instance as K doubles.

    python3 scripts/refinement_study.py --Ks 8 16 32 --out results/refinement.csv
"""

import argparse
import time

from bsbridge import io as bio
from bsbridge.pipeline import refinement_study

COLUMNS = ["K", "iterations", "constraint_gap", "entropy", "window_l2_residual", "window_bulk_sup_residual",
           "max_abs_residual", "discrete_residual_max", "backward_identity_gap", "htransform_gap"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--Ks", type=int, nargs="+", default=[8, 16, 32])
    ap.add_argument("--c", type=float, default=0.9)
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--length", type=float, default=12.0)
    ap.add_argument("--out", default="results/refinement.csv")
    args = ap.parse_args()

    t0 = time.perf_counter()
    rows = refinement_study(args.Ks, args.c, args.n, args.length)
    bio.write_rows(args.out, COLUMNS, ([r[c] for c in COLUMNS] for r in rows))
    prev = None
    for r in rows:
        ratio = "" if prev is None else f"  ratio {prev / r['window_l2_residual']:.2f}"
        print(f"K={r['K']:3d}  sweeps {r['iterations']:4d}  H {r['entropy']:.6f}  "
              f"window L2 {r['window_l2_residual']:.4f}  bulk sup {r['window_bulk_sup_residual']:.3f}{ratio}")
        prev = r["window_l2_residual"]
    print(f"{time.perf_counter() - t0:.1f}s, wrote {args.out}")


if __name__ == "__main__":
    main()
