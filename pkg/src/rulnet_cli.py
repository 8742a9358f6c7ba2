"""Console entry point for the ``rulnet`` command.

Lives outside the package so it can cap BLAS threading before numpy
loads: the training workload is a long chain of small matrix products,
where BLAS thread fan-out costs more than it gains (measured ~30% slower
with 2 threads than 1 on the default model).  Set OPENBLAS_NUM_THREADS /
OMP_NUM_THREADS / MKL_NUM_THREADS yourself to override.
"""

import os
import sys

BLAS_THREAD_VARS = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS")


def main() -> int:
    for var in BLAS_THREAD_VARS:
        os.environ.setdefault(var, "1")
    from rulnet.cli import main as cli_main

    return cli_main()


if __name__ == "__main__":
    sys.exit(main())
