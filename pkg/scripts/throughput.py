#!/usr/bin/env python3
"""Classify throughput on a saved database (scalar loop and batched)."""

import argparse
import time

import numpy as np

from pcfc import classifier
from pcfc.classifier import QueryParams


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("db", help="snapshot written by `pcfc build-db` or `pcfc pipeline`")
    ap.add_argument("-n", type=int, default=200_000)
    ap.add_argument("--k", type=int, default=4)
    ap.add_argument("--alpha", type=float, default=0.1)
    ap.add_argument("--epsilon", type=float, default=0.0)
    args = ap.parse_args()

    db = classifier.load_db(args.db)
    p = QueryParams(k=args.k, alpha=args.alpha, epsilon=args.epsilon)
    rng = np.random.default_rng(0)
    Q = db.points[rng.integers(0, db.n, args.n)] * rng.uniform(0.5, 1.2, size=(args.n, 1))
    classifier.classify(db, Q[0], p)
    classifier.classify_batch(db, Q[:2], p)

    t0 = time.perf_counter()
    for q in Q:
        classifier.classify(db, q, p)
    scalar = args.n / (time.perf_counter() - t0)
    t0 = time.perf_counter()
    classifier.classify_batch(db, Q, p)
    batch = args.n / (time.perf_counter() - t0)
    print(f"{db.n} points, k={p.k}, eps={p.epsilon}: {scalar:,.0f} queries/s scalar, {batch:,.0f} batched")


if __name__ == "__main__":
    main()
