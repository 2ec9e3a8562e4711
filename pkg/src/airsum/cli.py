"""Command-line front end.

Exit codes: 0 success, 1 configuration error, 2 validation failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

from . import __version__
from .analysis import format_sweep_csv, run_sweep, theorem1_bound
from .config import ConfigError, bound_params, config_digest, fl_configs, load_config, resolve_seed, sweep_specs
from .flsim import format_fl_csv, run_fl
from .validation import run_all

EXIT_OK, EXIT_CONFIG, EXIT_VALIDATION = 0, 1, 2

log = logging.getLogger("airsum")


def _header(command: str, seed: int, digest: str) -> list[str]:
    return [f"airsum {__version__}", f"command={command}", f"seed={seed}", f"config_digest={digest}"]


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)


def _safe(label: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in label)


def _load(args):
    doc = load_config(args.config)
    return doc, resolve_seed(doc, args.seed), config_digest(doc), Path(args.config).resolve().parent


def cmd_sumber(args, section: str = "sumber") -> int:
    doc, seed, digest, base = _load(args)
    specs = sweep_specs(doc, seed, base, section)
    header = _header(args.command, seed, digest)
    out = Path(args.out)
    if section == "phase_sweep":
        rows = [r for spec in specs for r in run_sweep(spec, args.jobs)]
        _write(out / "phase_sweep.csv", format_sweep_csv(rows, header))
        return EXIT_OK
    for spec in specs:
        rows = run_sweep(spec, args.jobs)
        _write(out / f"sumber_{_safe(spec.scenario.label)}.csv", format_sweep_csv(rows, header))
    return EXIT_OK


def cmd_phase_sweep(args) -> int:
    return cmd_sumber(args, "phase_sweep")


def cmd_fl(args) -> int:
    doc, seed, digest, base = _load(args)
    header = _header(args.command, seed, digest)
    out = Path(args.out)
    finals = []
    for cfg in fl_configs(doc, seed, base):
        rows = run_fl(cfg)
        _write(out / f"fl_{_safe(cfg.mode)}.csv", format_fl_csv(rows, header))
        finals.append(rows[-1])
    _write(out / "fl_summary.csv", format_fl_csv(finals, header))
    return EXIT_OK


def cmd_bound(args) -> int:
    doc, seed, digest, _ = _load(args)
    params, gap = bound_params(doc)
    trace = theorem1_bound(params, gap)
    buf = io.StringIO()
    for line in _header(args.command, seed, digest):
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("round", "bound", "first_term", "quant_term", "k_term"))
    for t, tot, a, b, c in zip(trace.rounds, trace.total, trace.first, trace.quant, trace.kterm):
        w.writerow((int(t), repr(float(tot)), repr(float(a)), repr(float(b)), repr(float(c))))
    _write(Path(args.out) / "bound.csv", buf.getvalue())
    return EXIT_OK


def cmd_validate(args) -> int:
    results = run_all()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_VALIDATION


COMMANDS = {
    "sumber": cmd_sumber,
    "phase-sweep": cmd_phase_sweep,
    "fl": cmd_fl,
    "bound": cmd_bound,
    "validate": cmd_validate,
}


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors; 2 is reserved for validation failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="airsum", description="Digital over-the-air SUM experiments.")
    p.add_argument("--version", action="version", version=f"airsum {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)  # inherits _Parser
        sp.add_argument("--config", required=name != "validate", help="YAML run config")
        sp.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        sp.add_argument("--out", default="results", help="output directory")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes for Monte-Carlo points")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
