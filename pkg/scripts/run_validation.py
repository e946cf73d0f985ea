#!/usr/bin/env python3
"""Run the full pipeline for a config and print the validation tables.

    python scripts/run_validation.py configs/full.cfg --out runs/full
"""

import argparse
import logging

from pcfc.config import load_config
from pcfc.harness import render_text, run_pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--out", default="runs/validation")
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO)

    res = run_pipeline(load_config(args.config), args.out, workers=args.threads)
    print(render_text(res.report))
    t = res.timings
    share = 100.0 * t["surface"] / t["total"]
    print(f"surface generation {t['surface']:.1f} s ({share:.1f}% of {t['total']:.1f} s), "
          f"queries {t['query']:.3f} s")


if __name__ == "__main__":
    main()
