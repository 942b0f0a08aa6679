#!/usr/bin/env python3
"""Desk-scale yearly benchmark.

Meta-trains on horizon-truncated series, then evaluates the combination
on the full series' held-out tails. Reads competition yearly data from
the path in $IMAGECAST_M4_YEARLY when set, otherwise generates a seeded
synthetic yearly-style corpus.
"""

import argparse
import json

from imagecast.experiments import yearly_benchmark


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="work/yearly", help="output directory")
    parser.add_argument("--n-series", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    summary = yearly_benchmark(args.out, n_series=args.n_series, seed=args.seed)
    print(json.dumps(summary, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
