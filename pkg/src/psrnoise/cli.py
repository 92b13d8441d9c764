"""
Command-line interface.

    psrnoise point          one drive point at the configured sideband frequencies
    psrnoise scan-detuning  pump-detuning scan
    psrnoise scan-noise-freq  sideband-frequency scan
    psrnoise scan-2d        Omega_f x C map
    psrnoise stitch         join F=1 and F=2 detuning scans on one absolute axis
    psrnoise oracle-check   frequency-domain engine vs time-domain regression oracle

Exit status: 0 success, 1 some rows (or the oracle comparison) failed,
2 configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import DEFAULT_CONFIG_YAML, ConfigError, load_config, parse_override

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2

SCAN_COMMANDS = {
    "point": "point",
    "scan-detuning": "detuning",
    "scan-noise-freq": "noise-frequency",
    "scan-2d": "power-density-2d",
}

# shortcut flags -> config keys
SHORTCUTS = [
    ("--preset", "scheme.preset", str),
    ("--Omega-f", "drive.Omega_f", float),
    ("--detuning", "drive.detuning", float),
    ("--gamma0", "drive.gamma0", float),
    ("--C", "drive.C", float),
    ("--loss-mode", "drive.loss_mode", str),
    ("--n-classes", "doppler.n_classes", int),
    ("--workers", "run.workers", int),
    ("--out-dir", "output.dir", str),
    ("--stem", "output.stem", str),
]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", help="YAML run configuration")
    p.add_argument(
        "-s", "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override any config key, e.g. -s drive.C=1000 -s scan.detuning='{start: -50, stop: 50, num: 101}'",
    )
    for flag, key, typ in SHORTCUTS:
        p.add_argument(flag, dest=key, type=typ, default=None, help=f"sets {key}")
    p.add_argument("--delta", dest="noise.delta", type=float, nargs="+", default=None, help="sets noise.delta")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--doppler", dest="doppler.enabled", action="store_const", const=True, default=None)
    g.add_argument("--no-doppler", dest="doppler.enabled", action="store_const", const=False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psrnoise", description="Quantum noise spectra of polarization self-rotation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SCAN_COMMANDS:
        _add_common(sub.add_parser(name, help=f"run a {SCAN_COMMANDS[name]} evaluation"))
    _add_common(sub.add_parser("oracle-check", help="compare the noise engine with the regression oracle"))
    st = sub.add_parser("stitch", help="join F=1 and F=2 detuning scans")
    st.add_argument("tables", nargs=2, help="two result tables (.json, or .csv with a sibling .json)")
    st.add_argument("-o", "--output", required=True, help="output stem (writes .csv and .json)")
    sub.add_parser("show-config", help="print the default configuration template")
    return parser


def _resolve(args) -> dict:
    overrides = [parse_override(s) for s in args.set]
    for key, value in vars(args).items():
        if "." in key and value is not None:
            overrides.append((key.split("."), value))
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    if args.command == "show-config":
        sys.stdout.write(DEFAULT_CONFIG_YAML)
        return EXIT_OK

    from . import sweep

    if args.command == "stitch":
        try:
            a, b = (sweep.read_table(p) for p in args.tables)
            table = sweep.stitch_manifolds(a, b)
        except (OSError, ValueError) as exc:
            print(f"stitch: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        paths = sweep.emit_plotdata(table, Path(args.output))
        print(f"wrote {', '.join(map(str, paths))} ({len(table)} rows)")
        return EXIT_PARTIAL if table.n_failed else EXIT_OK

    try:
        cfg = _resolve(args)
        if args.command == "oracle-check":
            table, report = sweep.run_oracle_check(cfg)
            print(report.summary())
            return EXIT_OK if report.passed else EXIT_PARTIAL
        spec = sweep.ScanSpec(SCAN_COMMANDS[args.command], cfg)
        table = sweep.run_scan(spec)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "point":
        print(f"{'delta':>8} {'S_min_dB':>10} {'S_max_dB':>10} {'theta_min':>10}  status")
        for r in table.rows:
            print(f"{r.delta_Gamma:8.4g} {r.S_min_dB:10.4f} {r.S_max_dB:10.4f} {r.theta_min_rad:10.4f}  {r.status}")
    print(f"{len(table)} rows, {table.n_failed} failed")
    return EXIT_PARTIAL if table.n_failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
