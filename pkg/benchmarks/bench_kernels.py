#!/usr/bin/env python3
"""Compare the compiled kernel core against the pure numpy fallback.

Equivalent to `bevrope bench`; kept as a standalone script so the comparison
can run without installing the console entry point.
"""
import sys

import bevrope  # noqa: F401  (pins BLAS threads before numpy spins up)
from bevrope.bench import run_benchmark


def main() -> int:
    repeats = int(sys.argv[1]) if len(sys.argv) > 1 else 200
    for line in run_benchmark(repeats=repeats):
        print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
