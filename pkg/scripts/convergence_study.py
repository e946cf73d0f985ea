#!/usr/bin/env python3
"""Effective transverse modulus against window size and mesh density.

Prints every trial and the best model per window, with the percent error
against the measured 1.07e6 psi.
"""

import argparse
import json

from pcfc.harness import convergence_study


def ints(text):
    return [int(v) for v in text.split(",")]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=ints, default=[139, 176, 160, 7])
    ap.add_argument("--windows", type=ints, default=[100, 200, 325])
    ap.add_argument("--divisions", type=ints, default=[25, 50, 100, 200])
    ap.add_argument("--vf", type=float, default=0.6)
    ap.add_argument("--json", help="also write rows and trials here")
    args = ap.parse_args()

    rows, trials = convergence_study(args.seeds, args.windows, args.divisions, vf=args.vf)
    print(f"{'W':>5} {'seed':>5} {'div':>5} {'elements':>9} {'E22':>12} {'nu23':>7} {'err %':>7}")
    for t in trials:
        print(f"{t.window_px:>5} {t.seed:>5} {t.divisions:>5} {t.elements:>9} {t.E22:>12.4e} "
              f"{t.nu23:>7.4f} {t.error_pct:>7.2f}")
    print("\nbest model per window")
    for r in rows:
        print(f"  W={r['window_px']:>4}  models={r['n_models']}  E22={r['E22']:.4e}  error={r['error_pct']:.2f}%")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"best": rows, "trials": [t.__dict__ for t in trials]}, fh, indent=2)


if __name__ == "__main__":
    main()
