"""Convergence bound versus round for several bit widths and SUM bit error rates.

    python3 scripts/bound_curve.py --config configs/bound.yaml
"""

import argparse
import csv
import dataclasses
import math
from pathlib import Path

from airsum.analysis import theorem1_bound
from airsum.config import bound_params, load_config


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, default=Path("configs/bound.yaml"))
    p.add_argument("--bits", type=float, nargs="+", default=[4, 8, math.inf])
    p.add_argument("--alphas", type=float, nargs="+", default=[0.0, 1e-6, 1e-3])
    p.add_argument("--out", type=Path, default=Path("results/bound_curves.csv"))
    args = p.parse_args()

    base, gap = bound_params(load_config(args.config))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with args.out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("bits", "alpha", "round", "bound"))
        for b in args.bits:
            for a in args.alphas:
                if math.isinf(b) and a:
                    continue
                tr = theorem1_bound(dataclasses.replace(base, bits=b, alphas=a), gap)
                for t, v in zip(tr.rounds, tr.total):
                    w.writerow((b, a, int(t), repr(float(v))))
                print(f"B={b:g} alpha={a:g}: bound at T={base.T} is {tr.total[-1]:.4g}")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
