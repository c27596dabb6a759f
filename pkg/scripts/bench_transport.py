#!/usr/bin/env python3
"""Measure transport latency: zero-copy in-process path vs copying baseline."""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from dfp.bench import DEFAULT_SIZES, format_table, run_bench  # noqa: E402


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default=",".join(str(s) for s in DEFAULT_SIZES),
                        help="comma-separated payload sizes in bytes")
    parser.add_argument("--samples", type=int, default=10_000)
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    print(format_table(run_bench(sizes=sizes, samples=args.samples)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
