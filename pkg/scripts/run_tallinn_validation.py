"""Build the Tallinn-like scenario, run the full pipeline and compare OD matrices.

Prints the synthetic OD matrix, its deviation from the generating matrix and
its delta against the bundled mobile-positioning reference.

Usage: python3 scripts/run_tallinn_validation.py WORK_DIR [--threads N]
"""
import argparse
import time
from pathlib import Path

import numpy as np

from anchorassign.fixtures import OD_MOBILE, TALLINN_DISTRICTS, tallinn_scenario
from anchorassign.ingest import load_scenario
from anchorassign.pipeline import run


def show(title, matrix):
    print(title)
    print(" " * 13 + " ".join(f"{d[:7]:>7}" for d in TALLINN_DISTRICTS))
    for name, row in zip(TALLINN_DISTRICTS, matrix):
        print(f"  {name[:11]:<11}" + " ".join(f"{v:7.3f}" for v in row))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("work")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    work = Path(args.work)
    design = tallinn_scenario(work / "scenario")
    t0 = time.perf_counter()
    state = run(load_scenario(design.files.config_path), work / "out", threads=args.threads)
    elapsed = time.perf_counter() - t0
    od = state.od.reordered(TALLINN_DISTRICTS)
    print(f"pipeline: {elapsed:.1f}s, workers {int(od.counts.sum())}, escalations {len(state.escalations)}")
    show("synthetic OD shares:", od.shares)
    show("synthetic minus generating:", od.shares - design.target)
    print(f"max |synthetic - generating| = {np.abs(od.shares - design.target).max():.4f}")
    show("synthetic minus mobile reference:", od.shares - OD_MOBILE)
    print(f"outputs in {work / 'out'}")


if __name__ == "__main__":
    main()
