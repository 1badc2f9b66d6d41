"""Write the eight-district Tallinn-like scenario to a directory.

Usage: python3 scripts/make_tallinn_fixture.py OUT_DIR [--persons N] [--seed S]
"""
import argparse

import numpy as np

from anchorassign.fixtures import TALLINN_DISTRICTS, tallinn_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out")
    ap.add_argument("--persons", type=int, default=262_000,
                    help="population size; the education census is fixed at 14118, so keep this near the default")
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()
    design = tallinn_scenario(args.out, seed=args.seed, n_persons=args.persons)
    print(f"config: {design.files.config_path}")
    print(f"persons: {args.persons}, expected workers: {design.expected_workers:.0f}")
    print(f"education share of workers: {design.education_share:.4f}")
    print("generating OD shares (rows: residence, columns: work):")
    np.set_printoptions(precision=3, suppress=True, linewidth=120)
    for name, row in zip(TALLINN_DISTRICTS, design.target):
        print(f"  {name:<12} {row}")


if __name__ == "__main__":
    main()
