"""
Run a Monte Carlo study file from the terminal and print the result table.

Usage:
    python tests/run_study.py tests/lee-forest-study.json [--threads 4] [--seed 7] [--out r.csv]

The study JSON has the same shape the ``rdforest mc`` command reads. The
aligned table goes to stdout; ``--out`` also writes the CSV (or JSON when the
path ends in .json).
"""

import argparse
import logging
import time
from pathlib import Path

from rdforest.mc_harness import format_table, load_study, run_mc, write_table


def run(study_path, threads=1, seed=None, out=None):
    study = load_study(study_path, seed=seed)
    start = time.perf_counter()
    result = run_mc(study, n_jobs=threads)
    print(format_table(result))
    print(f"({time.perf_counter() - start:.1f} s on {threads} worker(s))")
    if out is not None:
        write_table(result, out, "json" if Path(out).suffix == ".json" else "csv")
    return result


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("study", help="Path to study JSON")
    ap.add_argument("--threads", type=int, default=1, help="Worker processes")
    ap.add_argument("--seed", type=int, help="Override the study's master seed")
    ap.add_argument("--out", help="Also write the result table here")
    args = ap.parse_args()
    logging.basicConfig(format="[rdforest] %(levelname)s %(name)s: %(message)s", level=logging.INFO)
    run(args.study, args.threads, args.seed, args.out)
