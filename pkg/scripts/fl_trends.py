"""Final test accuracy of the toy federated task under each channel model.

    python3 scripts/fl_trends.py --seeds 0 1 2
"""

import argparse
from pathlib import Path

from airsum.flsim import FLConfig, format_fl_csv, run_fl

RUNS = {
    "error-free": dict(mode="error-free"),
    "trace-1e-3": dict(mode="trace", sum_ber=1e-3),
    "trace-1e-1": dict(mode="trace", sum_ber=1e-1),
    "full-phy-8dB": dict(mode="full-phy", users=2, snr_db=8.0),
    "analog-random-cfo-8dB": dict(mode="analog-random-cfo", users=2, snr_db=8.0),
    "analog-aligned-cfo-30dB": dict(mode="analog-aligned-cfo", snr_db=30.0),
}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--rounds", type=int, default=100)
    p.add_argument("--skip-phy", action="store_true", help="leave out the slow full-phy run")
    p.add_argument("--out", type=Path, default=Path("results/fl"))
    args = p.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    for name, kw in RUNS.items():
        if args.skip_phy and kw["mode"] == "full-phy":
            continue
        accs = []
        for seed in args.seeds:
            rows = run_fl(FLConfig(rounds=args.rounds, seed=seed, **kw))
            (args.out / f"{name}_seed{seed}.csv").write_text(format_fl_csv(rows))
            accs.append(rows[-1].test_acc)
        print(f"{name:24s} " + " ".join(f"{a:.3f}" for a in accs))


if __name__ == "__main__":
    main()
