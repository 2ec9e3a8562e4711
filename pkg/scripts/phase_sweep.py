"""SUM BER versus SNR for two users over AWGN at phase offsets 0, pi/4 and pi/2.

    python3 scripts/phase_sweep.py --bits 200000 --out results/phase_sweep.csv
"""

import argparse
import math
from pathlib import Path

from airsum.analysis import DECODERS, SweepSpec, format_sweep_csv, run_sweep
from airsum.scenarios import PhaseScenario


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--snr", type=float, nargs="+", default=[0, 2, 4, 6, 8, 10, 14, 20])
    p.add_argument("--phases", type=float, nargs="+", default=[0.0, math.pi / 4, math.pi / 2])
    p.add_argument("--decoders", nargs="+", default=list(DECODERS), choices=DECODERS)
    p.add_argument("--bits", type=int, default=10**6, help="SUM bits per point")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", type=Path, default=Path("results/phase_sweep.csv"))
    args = p.parse_args()

    rows = []
    for theta in args.phases:
        spec = SweepSpec(snr_db=tuple(args.snr), decoders=tuple(args.decoders),
                         scenario=PhaseScenario("fixed", theta), target_bits=args.bits, seed=args.seed)
        part = run_sweep(spec, args.jobs)
        rows += part
        print(f"phase {theta:.4f} rad")
        for d in args.decoders:
            curve = " ".join(f"{r.sum_ber:9.2e}" for r in part if r.decoder == d)
            print(f"  {d:10s} {curve}")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(format_sweep_csv(rows, [f"seed={args.seed}"]))
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
