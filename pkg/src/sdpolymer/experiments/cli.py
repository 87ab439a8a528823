"""Command-line entry point.

Usage: ``sdpolymer <subcommand> [--config FILE] [--set key=value ...]``.
Every run writes ``<output_dir>/<subcommand>/`` containing one CSV per table,
``summary.json`` (config, summary and tables) and ``manifest.json``.
Exit status: 0 on success, 2 on usage or configuration errors, 3 when more
than 10% of replicas fail.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .io import RunManifest, _jsonable, write_csv, write_json
from .runs import (
    ExperimentResult,
    NumericalFailure,
    beta_sweep,
    coarse_grain_observables,
    estimate_masses,
    fractional_moment_certificate,
    localization_scan,
    oracle_report,
    renewal_analysis,
    single_solve,
)

HELP = {
    "solve": "one slab solve with endpoint statistics",
    "masses": "quenched and annealed masses with their gap",
    "renewal": "irreducible bridge law, mass gap and renewal checks",
    "fractional": "fractional moment certificate at level N*L",
    "localize": "endpoint localization statistics across L",
    "sweep": "alpha* and beta* across beta_grid",
    "coarse": "tail frequencies of the coarse-graining observables",
}

OPERATIONS: dict[str, Callable[[ExperimentConfig], ExperimentResult]] = {
    "solve": single_solve,
    "masses": estimate_masses,
    "renewal": renewal_analysis,
    "fractional": fractional_moment_certificate,
    "localize": localization_scan,
    "sweep": beta_sweep,
    "coarse": coarse_grain_observables,
}

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def write_result(cfg: ExperimentConfig, result: ExperimentResult) -> Path:
    out = Path(cfg.output_dir) / result.kind
    manifest = RunManifest(result.kind, cfg.digest(), cfg.seed, result.replica_ids,
                           wall_times={"total": result.wall_time}, failures=result.failures)
    run_id = manifest.run_id
    for name, (cols, rows) in result.tables.items():
        p = out / f"{name}.csv"
        write_csv(p, cols, rows, run_id)
        manifest.record(p)
    p = out / "summary.json"
    write_json(p, {"run_id": run_id, "kind": result.kind, "config": cfg.to_dict(), "summary": result.summary,
                   "tables": {k: {"columns": list(c), "rows": r} for k, (c, r) in result.tables.items()}})
    manifest.record(p)
    manifest.write(out / "manifest.json")
    return out


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sdpolymer", description="Killed semidirected polymer experiments.")
    sub = ap.add_subparsers(dest="command", metavar="subcommand")
    for name, fn in OPERATIONS.items():
        sp = sub.add_parser(name, help=HELP[name])
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    op = sub.add_parser("oracle", help="exact enumeration values for a small instance")
    op.add_argument("--d", type=int, required=True)
    op.add_argument("--L", type=int, required=True)
    op.add_argument("--nmax", type=int, default=40)
    op.add_argument("--lam", type=float, default=0.5)
    op.add_argument("--beta", type=float, default=0.5)
    op.add_argument("--p", type=float, default=0.5)
    op.add_argument("--seed", type=int, default=0)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    if args.command is None:
        ap.print_usage(sys.stderr)
        return EXIT_CONFIG
    if args.command == "oracle":
        if not (1 <= args.d <= 3 and args.L >= 1 and args.nmax >= 1 and args.lam > 0):
            print("oracle: need 1 <= d <= 3, L >= 1, nmax >= 1, lam > 0", file=sys.stderr)
            return EXIT_CONFIG
        rep = oracle_report(args.d, args.L, args.nmax, args.lam, args.beta, args.p, args.seed)
        print(json.dumps(_jsonable(rep), indent=2))
        return EXIT_OK
    try:
        cfg = load_config(args.config, args.set) if args.config else parse_config("", "<defaults>", args.set)
        result = OPERATIONS[args.command](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as e:
        print(f"invalid request: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out = write_result(cfg, result)
    print(json.dumps(_jsonable(result.summary), indent=2))
    print(f"wrote {out}", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
